use ordgam::diagnostics::surrogate_from_eta;
use ordgam::inference::{find_crossings, kde, Grid};
use ordgam::ocat::{category_probs, cumulative_log_odds, Thresholds};
use ordgam::simulate::{simulate_dataset, stage_of, CovariateSpec, EtaFunction, TruthSpec};
use proptest::prelude::*;

fn thresholds(gaps: &[f64]) -> Thresholds {
    let mut theta = vec![-1.0];
    for g in gaps {
        theta.push(theta.last().unwrap() + g);
    }
    Thresholds::from_theta(&theta).unwrap()
}

fn spec(n: usize, seed: u64, slope: f64) -> TruthSpec {
    TruthSpec {
        n,
        seed,
        theta: vec![-1.0, 0.0, 1.0],
        stage_column: "y".into(),
        stages: None,
        covariate: CovariateSpec {
            name: "x".into(),
            from: 0.0,
            to: 10.0,
            integer: false,
        },
        factor: None,
        eta: EtaFunction::Linear {
            intercept: -2.0,
            slope,
        },
    }
}

proptest! {
    #[test]
    fn probabilities_normalized_and_odds_proportional(
        eta in -30.0f64..30.0,
        gaps in prop::collection::vec(0.01f64..4.0, 0..5),
    ) {
        let th = thresholds(&gaps);
        let p = category_probs(eta, &th);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let a = cumulative_log_odds(eta, &th);
        let b = cumulative_log_odds(eta + 0.7, &th);
        for (u, v) in a.iter().zip(&b) {
            if u.is_finite() && v.is_finite() {
                prop_assert!((u - v - 0.7).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surrogates_stay_in_stage_interval(
        etas in prop::collection::vec(-40.0f64..40.0, 1..30),
        gaps in prop::collection::vec(0.001f64..3.0, 1..4),
        picks in prop::collection::vec(0usize..10, 30),
        seed in any::<u64>(),
    ) {
        let th = thresholds(&gaps);
        let y: Vec<usize> = etas.iter().zip(&picks).map(|(_, p)| 1 + p % th.n_stages()).collect();
        let sr = surrogate_from_eta(&y, &etas, &th, seed, 2).unwrap();
        for i in 0..sr.len() {
            let s = sr.r[i] + sr.eta[i];
            prop_assert!(sr.r[i].is_finite());
            if let Some(l) = th.lower(sr.stage[i]) { prop_assert!(s > l, "{s} <= {l}"); }
            if let Some(u) = th.upper(sr.stage[i]) { prop_assert!(s <= u, "{s} > {u}"); }
        }
    }

    #[test]
    fn simulated_rows_do_not_depend_on_n(n in 1usize..200, extra in 1usize..50, seed in any::<u64>(), slope in -1.0f64..1.0) {
        let short = simulate_dataset(&spec(n, seed, slope)).unwrap();
        let long = simulate_dataset(&spec(n + extra, seed, slope)).unwrap();
        prop_assert_eq!(short.dataset.stages(), &long.dataset.stages()[..n]);
        prop_assert_eq!(&short.eta_true[..], &long.eta_true[..n]);
    }

    #[test]
    fn stage_of_respects_cut_points(z in -10.0f64..10.0, gaps in prop::collection::vec(0.01f64..3.0, 1..5)) {
        let th = thresholds(&gaps);
        let k = stage_of(z, th.theta());
        if let Some(l) = th.lower(k) { prop_assert!(z > l); }
        if let Some(u) = th.upper(k) { prop_assert!(z <= u); }
    }

    #[test]
    fn linear_crossing_is_exact(a in -5.0f64..5.0, b in 0.05f64..2.0, level in -3.0f64..3.0, step in 0.1f64..5.0) {
        let grid = Grid::range(-50.0, 50.0, step).unwrap();
        let eta: Vec<f64> = grid.values().iter().map(|x| a + b * x).collect();
        let c = find_crossings(grid.values(), &eta, level);
        let truth = (level - a) / b;
        let last = *grid.values().last().unwrap();
        if truth > -50.0 && truth < last {
            prop_assert_eq!(c.len(), 1);
            prop_assert!((c[0].day - truth).abs() < 1e-9);
            prop_assert!(c[0].upward);
        }
    }

    #[test]
    fn kde_integrates_to_one(samples in prop::collection::vec(-100.0f64..100.0, 2..60)) {
        let (_, x, dens) = kde(&samples, None).unwrap();
        let dx = x[1] - x[0];
        let mass: f64 = dens.iter().sum::<f64>() * dx;
        prop_assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}
