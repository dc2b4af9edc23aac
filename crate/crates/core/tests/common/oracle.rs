//! Brute-force maximum likelihood for a proportional-odds model with one covariate.
//!
//! Written without any code from the library: cut points, probabilities and the
//! optimizer are all computed here from scratch.

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cut points `θ_1 = −1`, `θ_k = θ_{k−1} + exp(a_{k−1})`.
pub fn cuts(raw: &[f64]) -> Vec<f64> {
    let mut c = vec![-1.0];
    for a in raw {
        let last = *c.last().unwrap();
        c.push(last + a.exp());
    }
    c
}

/// Log-likelihood of `(b0, b1, raw…)` for stages `y` (1-based) and covariate `x`.
pub fn loglik(params: &[f64], x: &[f64], y: &[usize]) -> f64 {
    let c = cuts(&params[2..]);
    let k = c.len() + 1;
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = params[0] + params[1] * xi;
            let upper = if yi == k {
                1.0
            } else {
                logistic(c[yi - 1] - eta)
            };
            let lower = if yi == 1 {
                0.0
            } else {
                logistic(c[yi - 2] - eta)
            };
            (upper - lower).ln()
        })
        .sum()
}

/// Nelder–Mead minimization, restarted from the best vertex until it stops improving.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut best = x0.to_vec();
    let mut fbest = f(&best);
    let mut step = scale;
    for _ in 0..50 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            if (values[n] - values[0]).abs() <= 1e-15 * (1.0 + values[0].abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..n)
                    .map(|j| centroid[j] + t * (simplex[n][j] - centroid[j]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let xc = if fr < values[n] {
                    along(-0.5)
                } else {
                    along(0.5)
                };
                let fc = f(&xc);
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n)
                            .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                            .collect();
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap();
        let improved = fbest - values[i];
        if values[i] < fbest {
            best = simplex[i].clone();
            fbest = values[i];
        }
        if improved <= 1e-14 * (1.0 + fbest.abs()) && step < 1e-4 {
            break;
        }
        step = (step * 0.3).max(1e-6);
    }
    (best, fbest)
}

/// Maximizer `(b0, b1, raw…)` and the maximized log-likelihood.
pub fn fit(x: &[f64], y: &[usize], n_stages: usize) -> (Vec<f64>, f64) {
    let x0 = vec![0.0; n_stages];
    let (p, v) = nelder_mead(|p| -loglik(p, x, y), &x0, 0.5);
    (p, -v)
}
