//! Running the configured methods side by side on one simulated trajectory.

use std::collections::BTreeMap;

use eqkf::constrained::ConstrainedUpdateResult;
use eqkf::kalman;
use eqkf::matops;
use eqkf::{MethodRegistry, StateEstimate, UpdateMethod};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{MethodSpec, RawConfig, ScenarioConfig};
use crate::sim::{self, Trajectory, RNG_ALGORITHM};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("numerical failure at step {step} in method `{method}`: {source}")]
pub struct RunError {
    pub step: u64,
    pub method: String,
    #[source]
    pub source: eqkf::Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub method: String,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub err_norm: f64,
    pub constraint_residual: f64,
    pub cov_min_eig: f64,
    /// `||P - P'||_inf`.
    pub cov_asym: f64,
    pub cov_inf_norm: f64,
    pub cov_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub rmse: f64,
    pub max_constraint_residual: f64,
    pub rms_constraint_residual: f64,
}

/// Largest `||m_a - m_b|| / ||m_b||` over the run for two methods of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub class: String,
    pub first: String,
    pub second: String,
    pub max_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
    pub divergences: Vec<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub rng: &'static str,
    pub seed: u64,
    pub steps: u64,
    pub state_dim: usize,
    pub config: RawConfig,
    /// Ordered by step, then by the configured method order.
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

pub fn build_method(spec: &MethodSpec) -> Box<dyn UpdateMethod> {
    MethodRegistry::with_builtins()
        .build(&spec.registry_key, &spec.params)
        .expect("validated at load time")
}

/// Runs one method's recursion over a trajectory, handing each step's result to `visit`.
///
/// Nonlinear constraints are linearized about the prediction. With feedback off the
/// recursion carries the unconstrained Joseph posterior and the constrained estimate is
/// only reported.
pub fn run_method<F>(
    config: &ScenarioConfig,
    method: &dyn UpdateMethod,
    trajectory: &Trajectory,
    initial: &StateEstimate,
    mut visit: F,
) -> Result<(), RunError>
where
    F: FnMut(u64, &ConstrainedUpdateResult),
{
    let mut state = initial.clone();
    for (i, z) in trajectory.measurements.iter().enumerate() {
        let k = i as u64 + 1;
        let fail = |source| RunError {
            step: k,
            method: method.name().to_string(),
            source,
        };
        let model = config.model_at(k);
        let pred = kalman::predict(&state, model).map_err(fail)?;
        let c = config.constraint.at(pred.mean()).map_err(fail)?;
        let result = method.update(&pred, z, model, &c).map_err(fail)?;
        visit(k, &result);
        state = if config.feedback {
            result.estimate
        } else {
            kalman::update_joseph(&pred, z, model).map_err(fail)?.0
        };
    }
    Ok(())
}

fn record(
    config: &ScenarioConfig,
    name: &str,
    k: u64,
    trajectory: &Trajectory,
    r: &ConstrainedUpdateResult,
) -> StepRecord {
    let truth = &trajectory.truth[k as usize];
    let mean = r.estimate.mean();
    let cov = r.estimate.covariance();
    StepRecord {
        step: k,
        method: name.to_string(),
        truth: truth.iter().copied().collect(),
        mean: mean.iter().copied().collect(),
        err_norm: (mean - truth).norm(),
        constraint_residual: config.constraint.residual_norm(mean),
        cov_min_eig: matops::min_eigenvalue(cov).unwrap_or(f64::NAN),
        cov_asym: matops::asymmetry(cov),
        cov_inf_norm: matops::inf_norm(cov),
        cov_trace: cov.trace(),
    }
}

fn summarize(config: &ScenarioConfig, per_method: &[Vec<StepRecord>]) -> Summary {
    let methods = config
        .methods
        .iter()
        .zip(per_method)
        .map(|(spec, recs)| {
            let count = recs.len().max(1) as f64;
            MethodSummary {
                method: spec.name.clone(),
                rmse: (recs.iter().map(|r| r.err_norm.powi(2)).sum::<f64>() / count).sqrt(),
                max_constraint_residual: recs
                    .iter()
                    .map(|r| r.constraint_residual)
                    .fold(0.0, f64::max),
                rms_constraint_residual: (recs
                    .iter()
                    .map(|r| r.constraint_residual.powi(2))
                    .sum::<f64>()
                    / count)
                    .sqrt(),
            }
        })
        .collect();

    let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, spec) in config.methods.iter().enumerate() {
        if let Some(class) = build_method(spec).equivalence_class() {
            classes.entry(class.to_string()).or_default().push(i);
        }
    }
    let mut divergences = Vec::new();
    for (class, members) in &classes {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                let max_relative = per_method[i]
                    .iter()
                    .zip(&per_method[j])
                    .map(|(x, y)| {
                        let diff: f64 = x
                            .mean
                            .iter()
                            .zip(&y.mean)
                            .map(|(p, q)| (p - q).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        let scale = y.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                        diff / scale.max(f64::MIN_POSITIVE)
                    })
                    .fold(0.0, f64::max);
                divergences.push(Divergence {
                    class: class.clone(),
                    first: config.methods[i].name.clone(),
                    second: config.methods[j].name.clone(),
                    max_relative,
                });
            }
        }
    }
    Summary {
        methods,
        divergences,
    }
}

/// Simulates the scenario and runs every configured method on the same measurements.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, RunError> {
    let trajectory = sim::simulate_truth(config).map_err(|source| RunError {
        step: 0,
        method: "simulation".into(),
        source,
    })?;
    run_on(config, &trajectory)
}

pub fn run_on(config: &ScenarioConfig, trajectory: &Trajectory) -> Result<RunReport, RunError> {
    let per_method: Vec<Vec<StepRecord>> = config
        .methods
        .par_iter()
        .map(|spec| {
            let method = build_method(spec);
            let mut recs = Vec::with_capacity(config.steps as usize);
            run_method(
                config,
                method.as_ref(),
                trajectory,
                &config.initial_estimate,
                |k, r| recs.push(record(config, &spec.name, k, trajectory, r)),
            )?;
            Ok(recs)
        })
        .collect::<Result<_, RunError>>()?;

    let summary = summarize(config, &per_method);
    let mut records = Vec::with_capacity(per_method.iter().map(Vec::len).sum());
    for k in 0..config.steps as usize {
        for recs in &per_method {
            records.push(recs[k].clone());
        }
    }
    Ok(RunReport {
        name: config.name.clone(),
        rng: RNG_ALGORITHM,
        seed: config.seed,
        steps: config.steps,
        state_dim: config.state_dim(),
        config: config.echo.clone(),
        records,
        summary,
    })
}
