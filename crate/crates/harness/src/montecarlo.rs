//! Monte-Carlo consistency of reported covariances.
//!
//! Each trial draws an initial error `e0 ~ N(0, P0)`, starts the filter from
//! `x0 - e0`, simulates a fresh trajectory and records the estimation error at every step.
//! Trial `t` uses the ChaCha stream `t` of the base seed, so trials are independent and
//! the result does not depend on how they are scheduled.

use eqkf::{DenseMatrix, DenseVector, StateEstimate};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{MethodSpec, ScenarioConfig};
use crate::run::{build_method, run_method, RunError};
use crate::sim::{self, gaussian, sqrt_psd};

/// Entries of the reported covariance below this fraction of its trace are not compared.
pub const ENTRY_FLOOR: f64 = 1e-6;

const CHUNK: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub method: String,
    pub trials: usize,
    pub steps: u64,
    /// Largest `|C_emp - P| / |P|` over compared entries and steps.
    pub max_relative_deviation: f64,
    pub worst_step: u64,
    /// RMS over trials and steps of the error.
    pub rms_error: f64,
    /// RMS over trials and steps of `A e` for a linear constraint.
    pub constraint_error_rms: Option<f64>,
}

#[derive(Clone)]
struct Acc {
    sum_e: Vec<DenseVector>,
    sum_ee: Vec<DenseMatrix>,
    sum_p: Vec<DenseMatrix>,
    sum_sq: f64,
    sum_constraint_sq: f64,
}

impl Acc {
    fn new(steps: usize, n: usize) -> Self {
        Self {
            sum_e: vec![DenseVector::zeros(n); steps],
            sum_ee: vec![DenseMatrix::zeros(n, n); steps],
            sum_p: vec![DenseMatrix::zeros(n, n); steps],
            sum_sq: 0.0,
            sum_constraint_sq: 0.0,
        }
    }

    fn merge(mut self, other: &Acc) -> Self {
        for k in 0..self.sum_e.len() {
            self.sum_e[k] += &other.sum_e[k];
            self.sum_ee[k] += &other.sum_ee[k];
            self.sum_p[k] += &other.sum_p[k];
        }
        self.sum_sq += other.sum_sq;
        self.sum_constraint_sq += other.sum_constraint_sq;
        self
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = sim::rng(seed);
    rng.set_stream(trial);
    rng
}

pub fn empirical_covariance_check(
    config: &ScenarioConfig,
    method: &MethodSpec,
    trials: usize,
    seed: u64,
) -> Result<McReport, RunError> {
    let n = config.state_dim();
    let steps = config.steps as usize;
    let p0 = config.initial_estimate.covariance().clone();
    let p0_sqrt = sqrt_psd(&p0);
    let x0 = config.initial_truth.clone();
    let linear_a = match &config.constraint {
        crate::config::ScenarioConstraint::Linear(c) if !c.is_empty() => Some(c.matrix().clone()),
        _ => None,
    };
    let filter = build_method(method);

    let chunks: Vec<Acc> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Acc::new(steps, n);
            for t in chunk * CHUNK..((chunk + 1) * CHUNK).min(trials) {
                let mut rng = trial_rng(seed, t as u64);
                let e0 = gaussian(&mut rng, &p0_sqrt);
                let init = StateEstimate::new(&x0 - e0, p0.clone(), 0).expect("validated P0");
                let traj =
                    sim::simulate_from(config, &x0, &mut rng).map_err(|source| RunError {
                        step: 0,
                        method: "simulation".into(),
                        source,
                    })?;
                run_method(config, filter.as_ref(), &traj, &init, |k, r| {
                    let i = k as usize - 1;
                    let e = traj.truth[k as usize].clone() - r.estimate.mean();
                    acc.sum_ee[i] += &e * e.transpose();
                    acc.sum_p[i] += r.estimate.covariance();
                    acc.sum_sq += e.norm_squared();
                    if let Some(a) = &linear_a {
                        acc.sum_constraint_sq += (a * &e).norm_squared();
                    }
                    acc.sum_e[i] += e;
                })?;
            }
            Ok(acc)
        })
        .collect::<Result<_, RunError>>()?;
    let acc = chunks
        .iter()
        .fold(Acc::new(steps, n), |total, c| total.merge(c));

    let count = trials as f64;
    let mut worst = (0.0_f64, 0_u64);
    for k in 0..steps {
        let mean = &acc.sum_e[k] / count;
        let emp = (&acc.sum_ee[k] - &mean * mean.transpose() * count) / (count - 1.0);
        let reported = &acc.sum_p[k] / count;
        let floor = ENTRY_FLOOR * reported.trace();
        for (e, p) in emp.iter().zip(reported.iter()) {
            if p.abs() > floor {
                let dev = (e - p).abs() / p.abs();
                if dev > worst.0 {
                    worst = (dev, k as u64 + 1);
                }
            }
        }
    }
    let samples = (count * steps.max(1) as f64).max(1.0);
    Ok(McReport {
        method: method.name.clone(),
        trials,
        steps: config.steps,
        max_relative_deviation: worst.0,
        worst_step: worst.1,
        rms_error: (acc.sum_sq / samples).sqrt(),
        constraint_error_rms: linear_a.map(|_| (acc.sum_constraint_sq / samples).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_config_with, Overrides};

    #[test]
    fn noise_free_errors_vanish() {
        let doc = r#"{
            "name": "quiet", "steps": 5,
            "model": {"transition": [[1.0]], "process_noise": [[0.0]],
                      "observation": [[1.0]], "measurement_noise": [[1e-12]]},
            "initial_truth": [1.0],
            "initial_estimate": {"mean": [1.0], "covariance": [[1e-12]]},
            "methods": ["unconstrained"]
        }"#;
        let c = load_config_with(doc, &Overrides::default()).unwrap();
        let r = empirical_covariance_check(&c, &c.methods[0], 1000, 1).unwrap();
        assert!(r.rms_error < 1e-5, "{}", r.rms_error);
    }
}
