//! The acceptance criteria and the supporting invariants as pass/fail checks.
//!
//! Every check is deterministic: random instances come from the published seeds, with
//! instance `i` of a suite drawn from `seed + i`.

use std::fmt;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use eqkf::constrained::{
    self, augmented_update, block_s_inverse, constrain_posterior, fusion_constrained_update,
    gamma_projector, project, soft_augmented_update,
};
use eqkf::kalman::{self, update_fusion, update_joseph};
use eqkf::matops::{self, kron, min_eigenvalue, relative_diff, saddle_inverse, vec};
use eqkf::oracle::{self, sample, KktSystem};
use eqkf::{
    ConstrainedUpdateResult, DenseMatrix, DenseVector, EqualityConstraint, Measurement,
    MethodParams, MethodRegistry, ProjectionSpec, ProjectionWeight, StateEstimate, SystemModel,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Overrides, ScenarioConfig};
use crate::montecarlo::{empirical_covariance_check, McReport};
use crate::report::to_csv;
use crate::run::{run_scenario, RunReport};
use crate::scenarios;
use crate::sim;

/// Pass bars, pinned.
pub mod tol {
    pub const EQUIV_MEAN: f64 = 1e-7;
    pub const EQUIV_COV: f64 = 1e-6;
    pub const RESTRICTED_GAIN: f64 = 1e-8;
    pub const EQUIV_RUNTIME_S: f64 = 60.0;
    /// Times `1 + ||b||`.
    pub const FEASIBILITY: f64 = 1e-9;
    /// Times `||Pc||`.
    pub const NULL_SPACE: f64 = 1e-8;
    /// Times the trace of the unconstrained posterior covariance.
    pub const SHRINKAGE: f64 = 1e-9;
    pub const IDENTITY: f64 = 1e-9;
    pub const STABILITY_ASYMMETRY: f64 = 1e-12;
    pub const STABILITY_MIN_EIG: f64 = 1e-9;
    pub const SOFT_HARD: f64 = 1e-8;
    pub const SOFT_UNCONSTRAINED: f64 = 1e-3;
    pub const NONLINEAR_FRACTION: f64 = 0.95;
    pub const FUSION: f64 = 1e-8;
    pub const MC_DEVIATION: f64 = 0.05;
    pub const MC_CONSTRAINT_RATIO: f64 = 1e-2;
    pub const MC_RUNTIME_S: f64 = 300.0;
    pub const KKT_ORACLE: f64 = 1e-9;
    pub const IDEMPOTENCE: f64 = 1e-9;
    pub const DIVERGENCE_POSTERIOR: f64 = 1e-6;
    pub const DIVERGENCE_IDENTITY: f64 = 1e-7;
}

pub const RANDOM_INSTANCES: usize = 1000;
pub const MC_TRIALS: usize = 100_000;
/// Steps per Monte-Carlo trial.
pub const MC_STEPS: u64 = 20;
/// Leading steps of each constrained scenario used for the soft-constraint limits.
pub const SOFT_STEPS: u64 = 5;
pub const SOFT_GRID: [f64; 5] = [1e-6, 1e-3, 1.0, 1e3, 1e6];
pub const DOMINANCE_INSTANCES: usize = 100;
pub const DOMINANCE_WEIGHTS: usize = 100;
pub const NONLINEAR_TRIALS: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(id: &str, name: &str, passed: bool, detail: String) -> Self {
        Self {
            id: id.to_string(),
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn failed(id: &str, name: &str, detail: String) -> Self {
        Self::new(id, name, false, detail)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{}] {}: {}", self.id, self.name, self.detail)
    }
}

fn vec_rel(a: &DenseVector, b: &DenseVector) -> f64 {
    let scale = b.norm();
    if scale > 0.0 {
        (a - b).norm() / scale
    } else {
        (a - b).norm()
    }
}

fn suite_rng(suite: &str, i: usize) -> ChaCha8Rng {
    sim::rng(oracle::published_seed(suite).wrapping_add(i as u64))
}

fn instances(suite: &'static str) -> impl Iterator<Item = sample::Instance> {
    (0..RANDOM_INSTANCES).map(move |i| sample::instance(&mut suite_rng(suite, i), 8, 4, 3, 1e4))
}

fn method(name: &str, weight: Option<ProjectionWeight>) -> Box<dyn eqkf::UpdateMethod> {
    MethodRegistry::with_builtins()
        .build(
            name,
            &MethodParams {
                weight,
                ..Default::default()
            },
        )
        .expect("builtin method")
}

fn weighted(w: ProjectionWeight) -> ProjectionSpec {
    ProjectionSpec::new(w)
}

/// Tracks the largest value seen and where.
#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    at: usize,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, at: 0 }
    }

    fn lowest() -> Self {
        Self {
            value: f64::INFINITY,
            at: 0,
        }
    }

    fn max(&mut self, v: f64, at: usize) {
        if v > self.value || v.is_nan() {
            *self = Self { value: v, at };
        }
    }

    fn min(&mut self, v: f64, at: usize) {
        if v < self.value || v.is_nan() {
            *self = Self { value: v, at };
        }
    }

    fn describe(&self) -> String {
        format!("{:.2e} at #{}", self.value, self.at)
    }

    fn within(&self, bar: f64) -> bool {
        self.value <= bar
    }
}

// 1 ------------------------------------------------------------------------------------

pub fn equivalence() -> Outcome {
    const NAME: &str = "four-way equivalence";
    let start = Instant::now();
    let (mut mean, mut cov, mut rg) = (Worst::new(), Worst::new(), Worst::new());
    let posterior = [
        method("augmented", None),
        method("fusion", None),
        method("projection", Some(ProjectionWeight::PosteriorInverse)),
    ];
    let restricted = method("restricted-gain", None);
    let identity = method("projection", Some(ProjectionWeight::Identity));
    let unconstrained = method("unconstrained", None);
    for (i, inst) in instances("equivalence").enumerate() {
        let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
        let mut step = || -> eqkf::Result<()> {
            let post = unconstrained.update(pred, z, model, c)?.estimate;
            let reference = project(&post, c, &weighted(ProjectionWeight::PosteriorInverse))?;
            for m in &posterior {
                let r = m.update(pred, z, model, c)?;
                mean.max(vec_rel(r.estimate.mean(), reference.estimate.mean()), i);
                cov.max(
                    relative_diff(r.estimate.covariance(), reference.estimate.covariance()),
                    i,
                );
            }
            let target = project(&post, c, &weighted(ProjectionWeight::Identity))?;
            for r in [
                restricted.update(pred, z, model, c)?,
                identity.update(pred, z, model, c)?,
            ] {
                rg.max(vec_rel(r.estimate.mean(), target.estimate.mean()), i);
                rg.max(
                    relative_diff(r.estimate.covariance(), target.estimate.covariance()),
                    i,
                );
            }
            Ok(())
        };
        if let Err(e) = step() {
            return Outcome::failed("1", NAME, format!("instance {i}: {e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = mean.within(tol::EQUIV_MEAN)
        && cov.within(tol::EQUIV_COV)
        && rg.within(tol::RESTRICTED_GAIN)
        && secs <= tol::EQUIV_RUNTIME_S;
    Outcome::new(
        "1",
        NAME,
        passed,
        format!(
            "{RANDOM_INSTANCES} instances; mean {} (bar {:.0e}), cov {} (bar {:.0e}), \
             restricted gain vs W=I {} (bar {:.0e}), {secs:.2} s (bar {:.0} s)",
            mean.describe(),
            tol::EQUIV_MEAN,
            cov.describe(),
            tol::EQUIV_COV,
            rg.describe(),
            tol::RESTRICTED_GAIN,
            tol::EQUIV_RUNTIME_S
        ),
    )
}

// 2, 3 ---------------------------------------------------------------------------------

/// Every hard method on one instance, plus a projection under a random SPD weight.
fn hard_results(
    inst: &sample::Instance,
    rng: &mut ChaCha8Rng,
) -> eqkf::Result<Vec<(&'static str, ConstrainedUpdateResult)>> {
    let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
    let (post, _) = update_joseph(pred, z, model)?;
    let w = sample::spd_conditioned(rng, pred.dim(), 1e4);
    Ok(vec![
        (
            "augmented",
            method("augmented", None).update(pred, z, model, c)?,
        ),
        ("fusion", method("fusion", None).update(pred, z, model, c)?),
        (
            "projection:posterior-inverse",
            project(&post, c, &weighted(ProjectionWeight::PosteriorInverse))?,
        ),
        ("constrain-posterior", constrain_posterior(&post, c)?),
        (
            "projection:identity",
            project(&post, c, &weighted(ProjectionWeight::Identity))?,
        ),
        (
            "projection:weighted",
            project(&post, c, &weighted(ProjectionWeight::Explicit(w)))?,
        ),
        (
            "restricted-gain",
            method("restricted-gain", None).update(pred, z, model, c)?,
        ),
    ])
}

pub fn feasibility() -> Outcome {
    const NAME: &str = "feasibility and null space";
    let (mut feas, mut null) = (Worst::new(), Worst::new());
    let mut worst_method = ("", "");
    for (i, inst) in instances("feasibility").enumerate() {
        let mut rng = suite_rng("feasibility", i + RANDOM_INSTANCES);
        let results = match hard_results(&inst, &mut rng) {
            Ok(r) => r,
            Err(e) => return Outcome::failed("2", NAME, format!("instance {i}: {e}")),
        };
        let c = &inst.constraint;
        for (name, r) in results {
            let f = r.constraint_residual / (1.0 + c.rhs().norm());
            if f > feas.value {
                worst_method.0 = name;
            }
            feas.max(f, i);
            let pc = r.estimate.covariance();
            let scale = pc.norm();
            let n = if scale > 0.0 {
                (c.matrix() * pc).norm() / scale
            } else {
                (c.matrix() * pc).norm()
            };
            if n > null.value {
                worst_method.1 = name;
            }
            null.max(n, i);
        }
    }
    Outcome::new(
        "2",
        NAME,
        feas.within(tol::FEASIBILITY) && null.within(tol::NULL_SPACE),
        format!(
            "{RANDOM_INSTANCES} instances x 7 methods; ||Ax-b||/(1+||b||) {:.2e} ({}, bar {:.0e}), \
             ||A Pc||/||Pc|| {:.2e} ({}, bar {:.0e})",
            feas.value,
            worst_method.0,
            tol::FEASIBILITY,
            null.value,
            worst_method.1,
            tol::NULL_SPACE
        ),
    )
}

pub fn shrinkage() -> Outcome {
    const NAME: &str = "shrinkage";
    let mut worst = Worst::lowest();
    for (i, inst) in instances("feasibility").enumerate() {
        let (pred, z, model, c) = (&inst.pred, &inst.z, &inst.model, &inst.constraint);
        let eval = || -> eqkf::Result<f64> {
            let (post, _) = update_joseph(pred, z, model)?;
            let trace = post.covariance().trace();
            let mut lowest = f64::INFINITY;
            for r in [
                augmented_update(pred, z, model, c)?,
                fusion_constrained_update(pred, z, model, c)?,
                project(&post, c, &weighted(ProjectionWeight::PosteriorInverse))?,
                constrain_posterior(&post, c)?,
            ] {
                let gap = post.covariance() - r.estimate.covariance();
                lowest = lowest.min(min_eigenvalue(&gap)? / trace);
            }
            Ok(lowest)
        };
        match eval() {
            Ok(v) => worst.min(v, i),
            Err(e) => return Outcome::failed("3", NAME, format!("instance {i}: {e}")),
        }
    }
    Outcome::new(
        "3",
        NAME,
        worst.value >= -tol::SHRINKAGE,
        format!(
            "{RANDOM_INSTANCES} instances x 4 posterior-weighted methods; \
             min eig(P - Pc)/trace(P) {:.2e} (bar -{:.0e})",
            worst.value,
            tol::SHRINKAGE
        ),
    )
}

// 4 ------------------------------------------------------------------------------------

type Identity = (&'static str, fn(&mut ChaCha8Rng) -> eqkf::Result<f64>);

fn dim(r: &mut ChaCha8Rng) -> usize {
    r.random_range(1..=5)
}

fn scalar_rel(value: f64, direct: f64) -> f64 {
    (value - direct).abs() / (1.0 + direct.abs())
}

const IDENTITIES: &[Identity] = &[
    ("kron transpose", |r| {
        let (p, q, s, t) = (dim(r), dim(r), dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, s, t);
        Ok(relative_diff(
            &kron(&a, &b).transpose(),
            &kron(&a.transpose(), &b.transpose()),
        ))
    }),
    ("kron inverse", |r| {
        let (p, s) = (dim(r), dim(r));
        let a = sample::invertible(r, p, 1e3);
        let b = sample::invertible(r, s, 1e3);
        let lhs = oracle::dense_inverse(&kron(&a, &b))?;
        let rhs = kron(&oracle::dense_inverse(&a)?, &oracle::dense_inverse(&b)?);
        Ok(relative_diff(&lhs, &rhs))
    }),
    ("kron mixed product", |r| {
        let (p, q, s, t, u, w) = (dim(r), dim(r), dim(r), dim(r), dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, s, t);
        let c = sample::normal_matrix(r, q, u);
        let d = sample::normal_matrix(r, t, w);
        Ok(relative_diff(
            &(kron(&a, &b) * kron(&c, &d)),
            &kron(&(&a * &c), &(&b * &d)),
        ))
    }),
    ("vec additivity", |r| {
        let (p, q) = (dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, p, q);
        Ok(vec_rel(&vec(&(&a + &b)), &(vec(&a) + vec(&b))))
    }),
    ("vec(AB) = (B' kron I) vec(A)", |r| {
        let (p, q, s) = (dim(r), dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, q, s);
        let via = kron(&b.transpose(), &DenseMatrix::identity(p, p)) * vec(&a);
        Ok(vec_rel(&via, &vec(&(&a * &b))))
    }),
    ("vec(ABC) = (C' kron A) vec(B)", |r| {
        let (p, q, s, t) = (dim(r), dim(r), dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, q, s);
        let c = sample::normal_matrix(r, s, t);
        let via = kron(&c.transpose(), &a) * vec(&b);
        Ok(vec_rel(&via, &vec(&(&a * &b * &c))))
    }),
    ("tr(AB) = vec(B')' vec(A)", |r| {
        let (p, q) = (dim(r), dim(r));
        let a = sample::normal_matrix(r, p, q);
        let b = sample::normal_matrix(r, q, p);
        Ok(scalar_rel(
            vec(&b.transpose()).dot(&vec(&a)),
            (&a * &b).trace(),
        ))
    }),
    ("tr(ABC) = vec(A')' (C' kron I) vec(B)", |r| {
        let (a, b, c) = trace_triple(r);
        let q = b.nrows();
        let v = vec(&a.transpose())
            .dot(&(kron(&c.transpose(), &DenseMatrix::identity(q, q)) * vec(&b)));
        Ok(scalar_rel(v, (&a * &b * &c).trace()))
    }),
    ("tr(ABC) = vec(A')' (I kron B) vec(C)", |r| {
        let (a, b, c) = trace_triple(r);
        let p = a.nrows();
        let v = vec(&a.transpose()).dot(&(kron(&DenseMatrix::identity(p, p), &b) * vec(&c)));
        Ok(scalar_rel(v, (&a * &b * &c).trace()))
    }),
    ("tr(ABC) = vec(B')' (I kron C) vec(A)", |r| {
        let (a, b, c) = trace_triple(r);
        let q = b.nrows();
        let v = vec(&b.transpose()).dot(&(kron(&DenseMatrix::identity(q, q), &c) * vec(&a)));
        Ok(scalar_rel(v, (&a * &b * &c).trace()))
    }),
    ("A (P - P H' S^-1 H P) A' = A P+ A'", |r| {
        let inst = sample::instance(r, 8, 4, 3, 1e4);
        let p = inst.pred.covariance();
        let h = inst.model.observation();
        let innov = kalman::innovate(&inst.pred, &inst.z, &inst.model)?;
        let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
        let a = inst.constraint.matrix();
        let reduced = p - p * h.transpose() * innov.residual_cov_inverse() * h * p;
        Ok(relative_diff(
            &(a * reduced * a.transpose()),
            &(a * post.covariance() * a.transpose()),
        ))
    }),
    ("P - P H' K' = P+", |r| {
        let inst = sample::instance(r, 8, 4, 3, 1e4);
        let p = inst.pred.covariance();
        let innov = kalman::innovate(&inst.pred, &inst.z, &inst.model)?;
        let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
        let lhs = p - p * inst.model.observation().transpose() * innov.gain.transpose();
        Ok(relative_diff(&lhs, post.covariance()))
    }),
    ("saddle block inverse", |r| {
        let (n, q) = (dim(r), dim(r));
        loop {
            let a = sample::spd(r, n) + DenseMatrix::identity(n, n);
            let b = sample::normal_matrix(r, q, n);
            let c = sample::spd(r, q) + DenseMatrix::identity(q, q);
            let blocks = matops::SaddlePointBlocks::new(a, b, c)?;
            let assembled = blocks.assemble();
            if matops::condition_number(&assembled) > 1e4 {
                continue;
            }
            let inv = saddle_inverse(&blocks)?;
            return Ok(relative_diff(
                &inv.assemble(),
                &oracle::dense_inverse(&assembled)?,
            ));
        }
    }),
    ("augmented S^-1 blocks", |r| {
        let inst = sample::instance(r, 8, 4, 3, 1e4);
        let p = inst.pred.covariance();
        let innov = kalman::innovate(&inst.pred, &inst.z, &inst.model)?;
        let blocks = block_s_inverse(p, &inst.model, &inst.constraint, &innov)?;
        let s_aug = constrained::augmented_innovation_cov(p, &inst.model, &inst.constraint, None);
        Ok(relative_diff(
            &blocks.assemble(),
            &oracle::dense_inverse(&s_aug)?,
        ))
    }),
    ("closed-form Lagrange solve", |r| {
        let inst = sample::instance(r, 8, 4, 3, 1e4);
        let innov = kalman::innovate(&inst.pred, &inst.z, &inst.model)?;
        let gap = sample::normal_vector(r, inst.constraint.rows());
        let (ell, lambda) = constrained::solve_lagrange_system(&innov, &inst.constraint, &gap)?;
        let (ell_d, lambda_d) = oracle::dense_lagrange_solve(&innov, &inst.constraint, &gap)?;
        Ok(vec_rel(&ell, &ell_d).max(vec_rel(&lambda, &lambda_d)))
    }),
];

fn trace_triple(r: &mut ChaCha8Rng) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let (p, q, s) = (dim(r), dim(r), dim(r));
    (
        sample::normal_matrix(r, p, q),
        sample::normal_matrix(r, q, s),
        sample::normal_matrix(r, s, p),
    )
}

pub fn identities() -> Outcome {
    const NAME: &str = "identity suites";
    let mut lines = Vec::new();
    let mut passed = true;
    for (k, (label, check)) in IDENTITIES.iter().enumerate() {
        let mut worst = Worst::new();
        for i in 0..RANDOM_INSTANCES {
            let mut r = suite_rng("identities", k * RANDOM_INSTANCES + i);
            match check(&mut r) {
                Ok(v) => worst.max(v, i),
                Err(e) => return Outcome::failed("4", NAME, format!("{label}, instance {i}: {e}")),
            }
        }
        passed &= worst.within(tol::IDENTITY);
        lines.push(format!("{label} {:.1e}", worst.value));
    }
    Outcome::new(
        "4",
        NAME,
        passed,
        format!(
            "{} identities x {RANDOM_INSTANCES} (bar {:.0e}): {}",
            IDENTITIES.len(),
            tol::IDENTITY,
            lines.join("; ")
        ),
    )
}

// 5 ------------------------------------------------------------------------------------

/// Worst telemetry of a covariance sequence.
#[derive(Debug, Clone, Copy)]
pub struct Telemetry {
    pub max_relative_asymmetry: f64,
    /// Smallest `min eig / trace`.
    pub min_relative_eig: f64,
}

impl Telemetry {
    fn of(report: &RunReport, method: &str) -> Self {
        let mut t = Telemetry {
            max_relative_asymmetry: 0.0,
            min_relative_eig: f64::INFINITY,
        };
        for r in report.records.iter().filter(|r| r.method == method) {
            let asym = if r.cov_inf_norm > 0.0 {
                r.cov_asym / r.cov_inf_norm
            } else {
                r.cov_asym
            };
            t.max_relative_asymmetry = t.max_relative_asymmetry.max(asym);
            let eig = if r.cov_trace > 0.0 {
                r.cov_min_eig / r.cov_trace
            } else {
                r.cov_min_eig
            };
            t.min_relative_eig = t.min_relative_eig.min(eig);
        }
        t
    }

    fn passes(&self) -> bool {
        self.max_relative_asymmetry <= tol::STABILITY_ASYMMETRY
            && self.min_relative_eig >= -tol::STABILITY_MIN_EIG
    }
}

/// `(I - K H) P` followed by `Gamma P`, with no symmetrization anywhere.
fn naive_recursion(config: &ScenarioConfig) -> Result<Telemetry, String> {
    let c = config
        .constraint
        .at(&config.initial_truth)
        .map_err(|e| e.to_string())?;
    let a = c.matrix();
    let n = config.state_dim();
    let eye = DenseMatrix::identity(n, n);
    let mut p = config.initial_estimate.covariance().clone();
    let mut t = Telemetry {
        max_relative_asymmetry: 0.0,
        min_relative_eig: f64::INFINITY,
    };
    for k in 1..=config.steps {
        let model = config.model_at(k);
        let (f, h) = (model.transition(), model.observation());
        p = f * &p * f.transpose() + model.process_noise();
        let s = h * &p * h.transpose() + model.measurement_noise();
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| format!("singular S at step {k}"))?;
        let gain = &p * h.transpose() * s_inv;
        p = (&eye - gain * h) * &p;
        let gram_inv = (a * &p * a.transpose())
            .try_inverse()
            .ok_or_else(|| format!("singular A P A' at step {k}"))?;
        p = (&eye - &p * a.transpose() * gram_inv * a) * &p;
        let norm = matops::inf_norm(&p);
        if !norm.is_finite() {
            return Err(format!("non-finite covariance at step {k}"));
        }
        t.max_relative_asymmetry = t.max_relative_asymmetry.max(matops::asymmetry(&p) / norm);
        let eig = min_eigenvalue(&p).map_err(|e| e.to_string())?;
        t.min_relative_eig = t.min_relative_eig.min(eig / p.trace());
    }
    Ok(t)
}

pub fn stability() -> Outcome {
    const NAME: &str = "long-run stability";
    const METHOD: &str = "projection:posterior-inverse";
    let config = match scenarios::load("stability", &Overrides::default()) {
        Ok(c) => c,
        Err(e) => return Outcome::failed("5", NAME, e.to_string()),
    };
    let report = match run_scenario(&config) {
        Ok(r) => r,
        Err(e) => return Outcome::failed("5", NAME, e.to_string()),
    };
    let t = Telemetry::of(&report, METHOD);
    let naive = match naive_recursion(&config) {
        Ok(n) => format!(
            "asymmetry {:.2e}, min eig/trace {:.2e}",
            n.max_relative_asymmetry, n.min_relative_eig
        ),
        Err(e) => e,
    };
    Outcome::new(
        "5",
        NAME,
        t.passes(),
        format!(
            "{} steps, cond(P0) 1e6; Joseph + Gamma P Gamma': ||P-P'||/||P|| {:.2e} (bar {:.0e}), \
             min eig/trace {:.2e} (bar -{:.0e}); naive (I-KH)P + Gamma P [control]: {naive}",
            config.steps,
            t.max_relative_asymmetry,
            tol::STABILITY_ASYMMETRY,
            t.min_relative_eig,
            tol::STABILITY_MIN_EIG
        ),
    )
}

// 6 ------------------------------------------------------------------------------------

const CONSTRAINED_SCENARIOS: &[&str] = &[
    "planar_line",
    "motor_speed",
    "track4d",
    "unit_circle",
    "stability",
];

struct SoftLimits {
    hard: f64,
    unconstrained: f64,
    monotone: bool,
}

fn soft_limits_step(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
) -> eqkf::Result<SoftLimits> {
    let q = c.rows();
    let noise = |s: f64| DenseMatrix::identity(q, q) * s;
    let hard = augmented_update(pred, z, model, c)?;
    let tight = soft_augmented_update(pred, z, model, c, &noise(1e-12))?;
    let (plain, _) = update_joseph(pred, z, model)?;
    let loose = soft_augmented_update(pred, z, model, c, &noise(1e12))?;
    let hard_gap = vec_rel(tight.estimate.mean(), hard.estimate.mean()).max(relative_diff(
        tight.estimate.covariance(),
        hard.estimate.covariance(),
    ));
    let loose_gap = vec_rel(loose.estimate.mean(), plain.mean()).max(relative_diff(
        loose.estimate.covariance(),
        plain.covariance(),
    ));
    let residuals = SOFT_GRID
        .iter()
        .map(|&s| Ok(soft_augmented_update(pred, z, model, c, &noise(s))?.constraint_residual))
        .collect::<eqkf::Result<Vec<f64>>>()?;
    let slack = 1e-12 * (1.0 + c.rhs().norm());
    let monotone = residuals.windows(2).all(|w| w[0] <= w[1] + slack);
    Ok(SoftLimits {
        hard: hard_gap,
        unconstrained: loose_gap,
        monotone,
    })
}

pub fn soft_limits() -> Outcome {
    const NAME: &str = "soft-constraint limits";
    let (mut hard, mut loose) = (Worst::new(), Worst::new());
    let mut non_monotone = Vec::new();
    for (s, name) in CONSTRAINED_SCENARIOS.iter().enumerate() {
        let config = match scenarios::load(
            name,
            &Overrides {
                steps: Some(SOFT_STEPS),
                ..Default::default()
            },
        ) {
            Ok(c) => c,
            Err(e) => return Outcome::failed("6", NAME, format!("{name}: {e}")),
        };
        let mut run = || -> eqkf::Result<()> {
            let traj = sim::simulate_truth(&config)?;
            let mut state = config.initial_estimate.clone();
            for (i, z) in traj.measurements.iter().enumerate() {
                let k = i as u64 + 1;
                let model = config.model_at(k);
                let pred = kalman::predict(&state, model)?;
                let c = config.constraint.at(pred.mean())?;
                let limits = soft_limits_step(&pred, z, model, &c)?;
                hard.max(limits.hard, s);
                loose.max(limits.unconstrained, s);
                if !limits.monotone {
                    non_monotone.push(format!("{name}@{k}"));
                }
                state = if config.feedback {
                    augmented_update(&pred, z, model, &c)?.estimate
                } else {
                    update_joseph(&pred, z, model)?.0
                };
            }
            Ok(())
        };
        if let Err(e) = run() {
            return Outcome::failed("6", NAME, format!("{name}: {e}"));
        }
    }
    let passed = hard.within(tol::SOFT_HARD)
        && loose.within(tol::SOFT_UNCONSTRAINED)
        && non_monotone.is_empty();
    Outcome::new(
        "6",
        NAME,
        passed,
        format!(
            "{} scenarios x {SOFT_STEPS} steps; sigma^2=1e-12 vs hard {:.2e} (bar {:.0e}), \
             sigma^2=1e12 vs unconstrained {:.2e} (bar {:.0e}), residual monotone over {:?}: {}",
            CONSTRAINED_SCENARIOS.len(),
            hard.value,
            tol::SOFT_HARD,
            loose.value,
            tol::SOFT_UNCONSTRAINED,
            SOFT_GRID,
            if non_monotone.is_empty() {
                "yes".to_string()
            } else {
                format!("no at {}", non_monotone.join(", "))
            }
        ),
    )
}

// 7 ------------------------------------------------------------------------------------

pub fn nonlinear() -> Outcome {
    const NAME: &str = "nonlinear unit circle";
    const UNC: &str = "unconstrained";
    const CON: &str = "projection:posterior-inverse";
    let config = match scenarios::load(
        "unit_circle",
        &Overrides {
            methods: Some(vec![UNC.into(), CON.into()]),
            ..Default::default()
        },
    ) {
        Ok(c) => c,
        Err(e) => return Outcome::failed("7", NAME, e.to_string()),
    };
    let report = match run_scenario(&config) {
        Ok(r) => r,
        Err(e) => return Outcome::failed("7", NAME, e.to_string()),
    };
    let pick = |m: &'static str| report.records.iter().filter(move |r| r.method == m);
    let improved = pick(UNC)
        .zip(pick(CON))
        .filter(|(u, c)| c.constraint_residual < u.constraint_residual)
        .count();
    let steps = config.steps as f64;
    let fraction = improved as f64 / steps;
    let rms = |m: &'static str, f: fn(&crate::run::StepRecord) -> f64| {
        (pick(m).map(|r| f(r).powi(2)).sum::<f64>() / steps).sqrt()
    };
    let (res_u, res_c) = (
        rms(UNC, |r| r.constraint_residual),
        rms(CON, |r| r.constraint_residual),
    );
    let (err_u, err_c) = (rms(UNC, |r| r.err_norm), rms(CON, |r| r.err_norm));
    Outcome::new(
        "7",
        NAME,
        fraction >= tol::NONLINEAR_FRACTION && res_c < res_u,
        format!(
            "{} steps; violation reduced on {:.1}% of steps (bar {:.0}%), RMS violation \
             {res_c:.3e} vs {res_u:.3e} unconstrained; RMS error {err_c:.4} vs {err_u:.4}",
            config.steps,
            100.0 * fraction,
            100.0 * tol::NONLINEAR_FRACTION
        ),
    )
}

// 8 ------------------------------------------------------------------------------------

pub fn fusion_identity() -> Outcome {
    const NAME: &str = "fusion equals Kalman update";
    let (mut mean, mut cov) = (Worst::new(), Worst::new());
    for (i, inst) in instances("fusion").enumerate() {
        let eval = || -> eqkf::Result<(f64, f64)> {
            let fused = update_fusion(&inst.pred, &inst.z, &inst.model)?;
            let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
            Ok((
                vec_rel(fused.mean(), post.mean()),
                relative_diff(fused.covariance(), post.covariance()),
            ))
        };
        match eval() {
            Ok((m, c)) => {
                mean.max(m, i);
                cov.max(c, i);
            }
            Err(e) => return Outcome::failed("8", NAME, format!("instance {i}: {e}")),
        }
    }
    Outcome::new(
        "8",
        NAME,
        mean.within(tol::FUSION) && cov.within(tol::FUSION),
        format!(
            "{RANDOM_INSTANCES} instances; mean {}, cov {} (bar {:.0e})",
            mean.describe(),
            cov.describe(),
            tol::FUSION
        ),
    )
}

// 9 ------------------------------------------------------------------------------------

fn mc_run(scenario: &str, methods: &[&str]) -> Result<Vec<McReport>, String> {
    let config = scenarios::load(
        scenario,
        &Overrides {
            methods: Some(methods.iter().map(|m| m.to_string()).collect()),
            steps: Some(MC_STEPS),
            ..Default::default()
        },
    )
    .map_err(|e| format!("{scenario}: {e}"))?;
    let seed = oracle::published_seed("monte-carlo");
    config
        .methods
        .iter()
        .map(|m| {
            empirical_covariance_check(&config, m, MC_TRIALS, seed)
                .map_err(|e| format!("{scenario}: {e}"))
        })
        .collect()
}

pub fn monte_carlo() -> Outcome {
    const NAME: &str = "Monte-Carlo consistency";
    let start = Instant::now();
    let (scalar, planar) = match (
        mc_run("scalar", &["unconstrained"]),
        mc_run("planar_line", &["augmented", "unconstrained"]),
    ) {
        (Ok(s), Ok(p)) => (s, p),
        (Err(e), _) | (_, Err(e)) => return Outcome::failed("9", NAME, e),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut passed = secs <= tol::MC_RUNTIME_S;
    let mut parts = Vec::new();
    for (scenario, r) in scalar
        .iter()
        .map(|r| ("scalar", r))
        .chain(planar.iter().map(|r| ("planar_line", r)))
    {
        passed &= r.max_relative_deviation <= tol::MC_DEVIATION;
        parts.push(format!(
            "{scenario}/{} {:.2}% (step {})",
            r.method,
            100.0 * r.max_relative_deviation,
            r.worst_step
        ));
    }
    let ratio = match (
        planar[0].constraint_error_rms,
        planar[1].constraint_error_rms,
    ) {
        (Some(c), Some(u)) if u > 0.0 => c / u,
        _ => f64::NAN,
    };
    passed &= ratio <= tol::MC_CONSTRAINT_RATIO;
    Outcome::new(
        "9",
        NAME,
        passed,
        format!(
            "{MC_TRIALS} trials x {MC_STEPS} steps; worst entry deviation (bar {:.0}%): {}; \
             constraint-row error ratio {ratio:.2e} (bar {:.0e}); {secs:.1} s (bar {:.0} s)",
            100.0 * tol::MC_DEVIATION,
            parts.join(", "),
            tol::MC_CONSTRAINT_RATIO,
            tol::MC_RUNTIME_S
        ),
    )
}

// 10 -----------------------------------------------------------------------------------

const DETERMINISM_SCENARIO: &str = "planar_line";
const DETERMINISM_SEED: u64 = 7;

fn cli_csv(exe: &Path, config_path: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(exe)
        .arg("run")
        .arg(config_path)
        .args(["--seed", &DETERMINISM_SEED.to_string(), "--format", "csv"])
        .output()
        .map_err(|e| format!("spawning {}: {e}", exe.display()))?;
    if !out.status.success() {
        return Err(format!(
            "`run` exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out.stdout)
}

fn cli_determinism(exe: &Path) -> Result<usize, String> {
    let path = std::env::temp_dir().join(format!(
        "eqkf-determinism-{}-{DETERMINISM_SCENARIO}.json",
        std::process::id()
    ));
    let text = scenarios::source(DETERMINISM_SCENARIO).expect("bundled");
    std::fs::write(&path, text).map_err(|e| format!("writing {}: {e}", path.display()))?;
    let first = cli_csv(exe, &path);
    let second = cli_csv(exe, &path);
    let _ = std::fs::remove_file(&path);
    let (first, second) = (first?, second?);
    if first.is_empty() || first != second {
        return Err("CLI outputs differ".into());
    }
    Ok(first.len())
}

/// Runs the bundled 2-D scenario twice and compares the CSV bytes, in process and, when
/// `exe` is given, through the `run` subcommand of that binary.
pub fn determinism(exe: Option<&Path>) -> Outcome {
    const NAME: &str = "determinism";
    let overrides = Overrides {
        seed: Some(DETERMINISM_SEED),
        ..Default::default()
    };
    let in_process = || -> Result<String, String> {
        let config =
            scenarios::load(DETERMINISM_SCENARIO, &overrides).map_err(|e| e.to_string())?;
        let a = run_scenario(&config).map_err(|e| e.to_string())?;
        let b = run_scenario(&config).map_err(|e| e.to_string())?;
        Ok(to_csv(&a)).and_then(|x| {
            if x == to_csv(&b) {
                Ok(x)
            } else {
                Err("in-process CSV differs".into())
            }
        })
    };
    let csv = match in_process() {
        Ok(c) => c,
        Err(e) => return Outcome::failed("10", NAME, e),
    };
    let mut detail = format!("in-process: {} identical bytes", csv.len());
    if let Some(exe) = exe {
        match cli_determinism(exe) {
            Ok(bytes) if bytes == csv.len() => {
                detail.push_str(&format!("; `eqkf run` twice: {bytes} identical bytes"))
            }
            Ok(bytes) => {
                return Outcome::failed(
                    "10",
                    NAME,
                    format!(
                        "CLI output ({bytes} bytes) differs from in-process ({})",
                        csv.len()
                    ),
                )
            }
            Err(e) => return Outcome::failed("10", NAME, e),
        }
    }
    Outcome::new("10", NAME, true, detail)
}

// Supporting invariants ----------------------------------------------------------------

pub fn feedback_advantage() -> Outcome {
    const NAME: &str = "feedback residuals";
    let mut worst = f64::NEG_INFINITY;
    let mut at = String::new();
    let mut skipped = Vec::new();
    for name in CONSTRAINED_SCENARIOS {
        // A document that turns feedback off has a feedback-on recursion that is not
        // well posed (e.g. process noise confined to the constraint's null space).
        match scenarios::load(name, &Overrides::default()) {
            Ok(c) if !c.feedback => {
                skipped.push(*name);
                continue;
            }
            Ok(_) => {}
            Err(e) => return Outcome::failed("F", NAME, format!("{name}: {e}")),
        }
        let run = |feedback| {
            let c = scenarios::load(
                name,
                &Overrides {
                    feedback: Some(feedback),
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            let rhs = c.constraint.rhs().norm();
            run_scenario(&c)
                .map(|r| (r, rhs))
                .map_err(|e| e.to_string())
        };
        let ((on, rhs), (off, _)) = match (run(true), run(false)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Outcome::failed("F", NAME, format!("{name}: {e}")),
        };
        let slack = 1e-9 * (1.0 + rhs);
        for (a, b) in on.summary.methods.iter().zip(&off.summary.methods) {
            let excess = a.rms_constraint_residual - b.rms_constraint_residual - slack;
            if excess > worst {
                worst = excess;
                at = format!("{name}/{}", a.method);
            }
        }
    }
    Outcome::new(
        "F",
        NAME,
        worst <= 0.0,
        format!(
            "RMS residual with feedback minus without, over bundled constrained scenarios: \
             worst excess {worst:.2e} ({at}); skipped (feedback off in document): {}",
            skipped.join(", ")
        ),
    )
}

pub fn dominance() -> Outcome {
    const NAME: &str = "posterior weight minimizes trace";
    let mut worst = f64::NEG_INFINITY;
    for i in 0..DOMINANCE_INSTANCES {
        let mut r = suite_rng("dominance", i);
        let inst = sample::instance(&mut r, 8, 4, 3, 1e4);
        let eval = |r: &mut ChaCha8Rng| -> eqkf::Result<f64> {
            let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
            let best = project(
                &post,
                &inst.constraint,
                &weighted(ProjectionWeight::PosteriorInverse),
            )?
            .estimate
            .covariance()
            .trace();
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..DOMINANCE_WEIGHTS {
                let w = sample::spd_conditioned(r, post.dim(), 1e4);
                let other = project(
                    &post,
                    &inst.constraint,
                    &weighted(ProjectionWeight::Explicit(w)),
                )?
                .estimate
                .covariance()
                .trace();
                worst = worst.max((best - other) / other);
            }
            Ok(worst)
        };
        match eval(&mut r) {
            Ok(v) => worst = worst.max(v),
            Err(e) => return Outcome::failed("D", NAME, format!("instance {i}: {e}")),
        }
    }
    Outcome::new(
        "D",
        NAME,
        worst <= 1e-10,
        format!(
            "{DOMINANCE_INSTANCES} instances x {DOMINANCE_WEIGHTS} weights; \
             max (tr Pc(P^-1) - tr Pc(W))/tr Pc(W) {worst:.2e}"
        ),
    )
}

pub fn kkt_oracle() -> Outcome {
    const NAME: &str = "projection vs dense KKT";
    let mut worst = Worst::new();
    for (i, inst) in instances("feasibility").enumerate() {
        let mut r = suite_rng("feasibility", 2 * RANDOM_INSTANCES + i);
        let mut eval = || -> eqkf::Result<f64> {
            let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
            let w = sample::spd_conditioned(&mut r, post.dim(), 1e4);
            let projected = project(
                &post,
                &inst.constraint,
                &weighted(ProjectionWeight::Explicit(w.clone())),
            )?;
            let dense = oracle::dense_kkt_project(&KktSystem {
                weight: w,
                constraint: inst.constraint.clone(),
                target: post.mean().clone(),
            })?;
            Ok(vec_rel(projected.estimate.mean(), &dense))
        };
        match eval() {
            Ok(v) => worst.max(v, i),
            Err(e) => return Outcome::failed("K", NAME, format!("instance {i}: {e}")),
        }
    }
    Outcome::new(
        "K",
        NAME,
        worst.within(tol::KKT_ORACLE),
        format!(
            "{RANDOM_INSTANCES} instances, cond(W) <= 1e4; worst mean {} (bar {:.0e})",
            worst.describe(),
            tol::KKT_ORACLE
        ),
    )
}

pub fn idempotence() -> Outcome {
    const NAME: &str = "Gamma and Upsilon A idempotent";
    let mut worst = Worst::new();
    for (i, inst) in instances("feasibility").enumerate() {
        let eval = || -> eqkf::Result<f64> {
            let (post, _) = update_joseph(&inst.pred, &inst.z, &inst.model)?;
            let gamma = gamma_projector(post.covariance(), &inst.constraint)?;
            let n = post.dim();
            let ua = DenseMatrix::identity(n, n) - &gamma;
            let g = (&gamma * &gamma - &gamma).norm() / gamma.norm().max(1.0);
            let u = (&ua * &ua - &ua).norm() / ua.norm().max(1.0);
            Ok(g.max(u))
        };
        match eval() {
            Ok(v) => worst.max(v, i),
            Err(e) => return Outcome::failed("G", NAME, format!("instance {i}: {e}")),
        }
    }
    Outcome::new(
        "G",
        NAME,
        worst.within(tol::IDEMPOTENCE),
        format!(
            "{RANDOM_INSTANCES} instances; worst {:.2e} (bar {:.0e})",
            worst.value,
            tol::IDEMPOTENCE
        ),
    )
}

pub fn nonlinear_trials() -> Outcome {
    const NAME: &str = "circle linearize+project trials";
    let config = match scenarios::load("unit_circle", &Overrides::default()) {
        Ok(c) => c,
        Err(e) => return Outcome::failed("N", NAME, e.to_string()),
    };
    let model = config.model_at(1);
    // Prediction spread near the filter's steady state; measurement noise as configured.
    let sd = 0.05;
    let meas_sd = model.measurement_noise()[(0, 0)].sqrt();
    let mut improved = 0;
    for i in 0..NONLINEAR_TRIALS {
        let mut r = suite_rng("feasibility", 3 * RANDOM_INSTANCES + i);
        let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let truth = DenseVector::from_column_slice(&[angle.cos(), angle.sin()]);
        let mut eval = || -> eqkf::Result<bool> {
            let mean = &truth + sample::normal_vector(&mut r, 2) * sd;
            let z = Measurement::new(&truth + sample::normal_vector(&mut r, 2) * meas_sd, 1)?;
            let pred = StateEstimate::new(mean, DenseMatrix::identity(2, 2) * sd * sd, 1)?;
            let (post, _) = update_joseph(&pred, &z, model)?;
            let c = config.constraint.at(pred.mean())?;
            let r = project(&post, &c, &weighted(ProjectionWeight::PosteriorInverse))?;
            Ok(config.constraint.residual_norm(r.estimate.mean())
                <= config.constraint.residual_norm(post.mean()))
        };
        match eval() {
            Ok(true) => improved += 1,
            Ok(false) => {}
            Err(e) => return Outcome::failed("N", NAME, format!("trial {i}: {e}")),
        }
    }
    let fraction = improved as f64 / NONLINEAR_TRIALS as f64;
    Outcome::new(
        "N",
        NAME,
        fraction >= tol::NONLINEAR_FRACTION,
        format!(
            "{NONLINEAR_TRIALS} trials; violation not increased in {:.1}% (bar {:.0}%)",
            100.0 * fraction,
            100.0 * tol::NONLINEAR_FRACTION
        ),
    )
}

pub fn scenario_divergence() -> Outcome {
    const NAME: &str = "run-level method divergence";
    let mut worst_pw = 0.0_f64;
    let mut worst_iw = 0.0_f64;
    let mut telemetry_ok = true;
    let mut worst_eig = f64::INFINITY;
    for (name, _) in scenarios::BUNDLED {
        let report = match scenarios::load(name, &Overrides::default())
            .map_err(|e| e.to_string())
            .and_then(|c| run_scenario(&c).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => return Outcome::failed("R", NAME, format!("{name}: {e}")),
        };
        for d in &report.summary.divergences {
            match d.class.as_str() {
                "posterior-weighted" => worst_pw = worst_pw.max(d.max_relative),
                _ => worst_iw = worst_iw.max(d.max_relative),
            }
        }
        for m in &report.summary.methods {
            let t = Telemetry::of(&report, &m.method);
            telemetry_ok &= t.min_relative_eig >= -tol::STABILITY_MIN_EIG;
            worst_eig = worst_eig.min(t.min_relative_eig);
        }
    }
    Outcome::new(
        "R",
        NAME,
        worst_pw <= tol::DIVERGENCE_POSTERIOR
            && worst_iw <= tol::DIVERGENCE_IDENTITY
            && telemetry_ok,
        format!(
            "bundled scenarios; posterior-weighted {worst_pw:.2e} (bar {:.0e}), identity-weighted \
             {worst_iw:.2e} (bar {:.0e}); min eig/trace over all methods {worst_eig:.2e}",
            tol::DIVERGENCE_POSTERIOR,
            tol::DIVERGENCE_IDENTITY
        ),
    )
}

/// The ten acceptance criteria in order.
pub fn acceptance(exe: Option<&Path>) -> Vec<Outcome> {
    vec![
        equivalence(),
        feasibility(),
        shrinkage(),
        identities(),
        stability(),
        soft_limits(),
        nonlinear(),
        fusion_identity(),
        monte_carlo(),
        determinism(exe),
    ]
}

/// Supporting invariants beyond the acceptance criteria.
pub fn properties() -> Vec<Outcome> {
    vec![
        feedback_advantage(),
        dominance(),
        kkt_oracle(),
        idempotence(),
        nonlinear_trials(),
        scenario_divergence(),
    ]
}

pub fn run_all(exe: Option<&Path>) -> Vec<Outcome> {
    let mut all = acceptance(exe);
    all.extend(properties());
    all
}
