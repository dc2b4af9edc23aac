#![allow(dead_code)]

pub mod oracle;

use ordgam::data::Dataset;
use ordgam::simulate::{simulate_dataset, CovariateSpec, EtaFunction, SimulatedData, TruthSpec};

pub fn truth(n: usize, seed: u64, theta: Vec<f64>, eta: EtaFunction) -> TruthSpec {
    TruthSpec {
        n,
        seed,
        theta,
        stage_column: "iStage".into(),
        stages: None,
        covariate: CovariateSpec {
            name: "doy".into(),
            from: 150.0,
            to: 250.0,
            integer: true,
        },
        factor: None,
        eta,
    }
}

pub fn sine() -> EtaFunction {
    EtaFunction::Sine {
        offset: 0.0,
        amplitude: 2.0,
        scale: 20.0,
        shift: 0.0,
    }
}

pub fn simulate(ts: &TruthSpec) -> SimulatedData {
    simulate_dataset(ts).expect("valid truth")
}

pub fn sine_data(n: usize, seed: u64) -> (Dataset, Vec<f64>) {
    let s = simulate(&truth(n, seed, vec![-1.0, 0.0, 1.0], sine()));
    (s.dataset, s.eta_true)
}
