//! Scenario configuration: JSON document, overrides and validation.

use std::fmt;

use eqkf::constrained::{self, EqualityConstraint, NonlinearConstraint, ProjectionWeight};
use eqkf::matops;
use eqkf::{DenseMatrix, DenseVector, MethodParams, MethodRegistry, StateEstimate, SystemModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility demanded of the initial truth.
pub const INITIAL_FEASIBILITY_TOL: f64 = 1e-9;

/// Methods run when the document does not list any.
pub const DEFAULT_METHODS: &[&str] = &[
    "unconstrained",
    "augmented",
    "fusion",
    "projection:posterior-inverse",
    "restricted-gain",
    "projection:identity",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("validation failed ({invariant}): {message}")]
    Validation {
        invariant: &'static str,
        message: String,
    },
}

impl ConfigError {
    fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    fn invalid(invariant: &'static str, message: impl fmt::Display) -> Self {
        Self::Validation {
            invariant,
            message: message.to_string(),
        }
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub transition: Rows,
    pub process_noise: Rows,
    pub observation: Rows,
    pub measurement_noise: Rows,
}

/// One model for every step, or a list applied cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawModels {
    Constant(RawModel),
    PerStep(Vec<RawModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum RawConstraint {
    /// `A x = b`.
    Linear { matrix: Rows, rhs: Vec<f64> },
    /// `M x = b` routed through the nonlinear path (exact linearization).
    Affine { matrix: Rows, rhs: Vec<f64> },
    /// `sum_i (x[idx_i] - c_i)^2 = r^2`.
    #[serde(alias = "sphere")]
    Circle {
        indices: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `x[i] * x[j] = value`.
    Product { indices: [usize; 2], value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEstimate {
    pub mean: Vec<f64>,
    pub covariance: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawMethod {
    Name(String),
    Weighted {
        method: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight: Option<Rows>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: String,
    pub steps: u64,
    pub model: RawModels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<RawConstraint>,
    pub initial_truth: Vec<f64>,
    pub initial_estimate: RawEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<RawMethod>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_noise: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<bool>,
}

/// Command-line values that replace fields of the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub feedback: Option<bool>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| {
            ConfigError::parse(
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(methods) = &o.methods {
            self.methods = Some(methods.iter().cloned().map(RawMethod::Name).collect());
        }
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(steps) = o.steps {
            self.steps = steps;
        }
        if let Some(feedback) = o.feedback {
            self.feedback = Some(feedback);
        }
    }

    /// Fills defaulted fields so the echo reloads to the same configuration.
    fn with_defaults(mut self) -> Self {
        self.seed.get_or_insert(0);
        self.feedback.get_or_insert(true);
        self.methods.get_or_insert_with(|| {
            DEFAULT_METHODS
                .iter()
                .map(|m| RawMethod::Name(m.to_string()))
                .collect()
        });
        self
    }
}

/// The scenario constraint: linear, or a nonlinear family linearized per step.
#[derive(Debug, Clone)]
pub enum ScenarioConstraint {
    Linear(EqualityConstraint),
    Nonlinear {
        family: &'static str,
        constraint: NonlinearConstraint,
    },
}

impl ScenarioConstraint {
    pub fn rows(&self) -> usize {
        match self {
            Self::Linear(c) => c.rows(),
            Self::Nonlinear { constraint, .. } => constraint.rhs().len(),
        }
    }

    pub fn rhs(&self) -> &DenseVector {
        match self {
            Self::Linear(c) => c.rhs(),
            Self::Nonlinear { constraint, .. } => constraint.rhs(),
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self, Self::Nonlinear { .. })
    }

    /// Linear constraint to use for an update whose linearization point is `x_ref`.
    pub fn at(&self, x_ref: &DenseVector) -> eqkf::Result<EqualityConstraint> {
        match self {
            Self::Linear(c) => Ok(c.clone()),
            Self::Nonlinear { constraint, .. } => constrained::linearize(constraint, x_ref),
        }
    }

    /// `||a(x) - b||` of the original (not linearized) constraint.
    pub fn residual_norm(&self, x: &DenseVector) -> f64 {
        match self {
            Self::Linear(c) => c.residual_norm(x),
            Self::Nonlinear { constraint, .. } => constraint.violation(x).norm(),
        }
    }

    /// Minimum-norm correction of `x` onto the constraint set. Exact for linear
    /// constraints; Gauss-Newton iterations otherwise.
    pub fn project_point(&self, x: &DenseVector) -> eqkf::Result<DenseVector> {
        let mut x = x.clone();
        let iterations = if self.is_nonlinear() { 50 } else { 1 };
        for _ in 0..iterations {
            let c = self.at(&x)?;
            if c.is_empty() {
                break;
            }
            let a = c.matrix();
            let gram_inv = matops::spd_inverse(&(a * a.transpose())).map_err(|s| {
                eqkf::Error::SingularConstraintGram {
                    condition: s.condition,
                }
            })?;
            x -= a.transpose() * gram_inv * c.residual(&x);
            if self.residual_norm(&x) <= 1e-14 * (1.0 + self.rhs().norm()) {
                break;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub registry_key: String,
    pub params: MethodParams,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub steps: u64,
    pub models: Vec<SystemModel>,
    pub constraint: ScenarioConstraint,
    pub initial_truth: DenseVector,
    pub initial_estimate: StateEstimate,
    pub methods: Vec<MethodSpec>,
    pub soft_noise: Option<DenseMatrix>,
    pub seed: u64,
    pub feedback: bool,
    /// The document with defaults filled in, echoed into structured reports.
    pub echo: RawConfig,
}

impl ScenarioConfig {
    pub fn state_dim(&self) -> usize {
        self.initial_truth.len()
    }

    /// Model used for step `k >= 1`.
    pub fn model_at(&self, k: u64) -> &SystemModel {
        &self.models[((k - 1) % self.models.len() as u64) as usize]
    }
}

pub fn load_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    load_config_with(text, &Overrides::default())
}

pub fn load_config_with(text: &str, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;
    raw.apply(overrides);
    validate(raw)
}

fn matrix(rows: &Rows, field: &str) -> Result<DenseMatrix, ConfigError> {
    let cols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(ConfigError::parse(
                format!("{field}[{i}]"),
                format!("row has {} entries, expected {cols}", row.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    matops::dense(rows.len(), cols, &flat).map_err(|e| ConfigError::parse(field, e.to_string()))
}

fn vector(v: &[f64], field: &str) -> Result<DenseVector, ConfigError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ConfigError::parse(field, "non-finite entry"));
    }
    Ok(DenseVector::from_column_slice(v))
}

fn model(raw: &RawModel, field: &str, n: usize) -> Result<SystemModel, ConfigError> {
    let f = matrix(&raw.transition, &format!("{field}.transition"))?;
    let q = matrix(&raw.process_noise, &format!("{field}.process_noise"))?;
    let h = matrix(&raw.observation, &format!("{field}.observation"))?;
    let r = matrix(
        &raw.measurement_noise,
        &format!("{field}.measurement_noise"),
    )?;
    if f.ncols() != n {
        return Err(ConfigError::invalid(
            "dimensions",
            format!(
                "{field}.transition has {} columns, state has {n}",
                f.ncols()
            ),
        ));
    }
    SystemModel::new(f, q, h, r).map_err(|e| ConfigError::invalid("model", format!("{field}: {e}")))
}

fn nonlinear(raw: &RawConstraint, n: usize) -> Result<ScenarioConstraint, ConfigError> {
    let check_index = |i: usize| {
        if i >= n {
            Err(ConfigError::invalid(
                "dimensions",
                format!("constraint index {i} out of range for state dimension {n}"),
            ))
        } else {
            Ok(())
        }
    };
    let (family, constraint) = match raw {
        RawConstraint::Linear { .. } => unreachable!("handled by the caller"),
        RawConstraint::Affine { matrix: m, rhs } => {
            let m = matrix(m, "constraint.matrix")?;
            let b = vector(rhs, "constraint.rhs")?;
            if m.ncols() != n || m.nrows() != b.len() {
                return Err(ConfigError::invalid(
                    "dimensions",
                    "affine constraint shape",
                ));
            }
            let jac = m.clone();
            (
                "affine",
                NonlinearConstraint::new(move |x| &m * x, move |_| jac.clone(), b),
            )
        }
        RawConstraint::Circle {
            indices,
            center,
            radius,
        } => {
            if indices.is_empty() || indices.len() != center.len() {
                return Err(ConfigError::invalid(
                    "dimensions",
                    "circle indices and center must have the same nonzero length",
                ));
            }
            indices.iter().try_for_each(|&i| check_index(i))?;
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(ConfigError::invalid(
                    "constraint",
                    "radius must be positive",
                ));
            }
            let (idx, c) = (indices.clone(), center.clone());
            let (idx_j, c_j) = (indices.clone(), center.clone());
            (
                "circle",
                NonlinearConstraint::new(
                    move |x| {
                        let s = idx.iter().zip(&c).map(|(&i, ci)| (x[i] - ci).powi(2)).sum();
                        DenseVector::from_element(1, s)
                    },
                    move |x| {
                        let mut j = DenseMatrix::zeros(1, x.len());
                        for (&i, ci) in idx_j.iter().zip(&c_j) {
                            j[(0, i)] += 2.0 * (x[i] - ci);
                        }
                        j
                    },
                    DenseVector::from_element(1, radius * radius),
                ),
            )
        }
        RawConstraint::Product { indices, value } => {
            let [i, k] = *indices;
            check_index(i)?;
            check_index(k)?;
            (
                "product",
                NonlinearConstraint::new(
                    move |x| DenseVector::from_element(1, x[i] * x[k]),
                    move |x| {
                        let mut j = DenseMatrix::zeros(1, x.len());
                        j[(0, i)] += x[k];
                        j[(0, k)] += x[i];
                        j
                    },
                    DenseVector::from_element(1, *value),
                ),
            )
        }
    };
    Ok(ScenarioConstraint::Nonlinear { family, constraint })
}

fn constraint(raw: Option<&RawConstraint>, n: usize) -> Result<ScenarioConstraint, ConfigError> {
    match raw {
        None => Ok(ScenarioConstraint::Linear(EqualityConstraint::empty(n))),
        Some(RawConstraint::Linear { matrix: m, rhs }) => {
            let a = matrix(m, "constraint.matrix")?;
            let b = vector(rhs, "constraint.rhs")?;
            let a = if m.is_empty() {
                DenseMatrix::zeros(0, n)
            } else {
                a
            };
            if a.ncols() != n {
                return Err(ConfigError::invalid(
                    "dimensions",
                    format!("constraint has {} columns, state has {n}", a.ncols()),
                ));
            }
            EqualityConstraint::new(a, b)
                .map(ScenarioConstraint::Linear)
                .map_err(|e| match e {
                    eqkf::Error::RankDeficientConstraint { .. } => {
                        ConfigError::invalid("constraint rank", e)
                    }
                    other => ConfigError::invalid("dimensions", other),
                })
        }
        Some(other) => nonlinear(other, n),
    }
}

fn method(
    raw: &RawMethod,
    index: usize,
    n: usize,
    soft_noise: Option<&DenseMatrix>,
    feedback: bool,
) -> Result<MethodSpec, ConfigError> {
    let field = format!("methods[{index}]");
    let (tag, weight) = match raw {
        RawMethod::Name(name) => (name.as_str(), None),
        RawMethod::Weighted { method, weight } => (method.as_str(), weight.as_ref()),
    };
    let mut params = MethodParams {
        feedback: Some(feedback),
        ..Default::default()
    };
    let (name, key) = match (tag, weight) {
        ("projection", Some(w)) => {
            let w = matrix(w, &format!("{field}.weight"))?;
            if w.shape() != (n, n) {
                return Err(ConfigError::invalid(
                    "dimensions",
                    format!("{field}.weight must be {n}x{n}"),
                ));
            }
            params.weight = Some(ProjectionWeight::Explicit(w));
            ("projection:weighted", "projection")
        }
        (_, Some(_)) => {
            return Err(ConfigError::invalid(
                "methods",
                format!("{field}: only `projection` takes a weight"),
            ))
        }
        ("projection" | "projection:posterior-inverse", None) => {
            params.weight = Some(ProjectionWeight::PosteriorInverse);
            ("projection:posterior-inverse", "projection")
        }
        ("projection:identity", None) => {
            params.weight = Some(ProjectionWeight::Identity);
            ("projection:identity", "projection")
        }
        ("soft", None) => {
            let noise = soft_noise.ok_or_else(|| {
                ConfigError::invalid("soft noise", "method `soft` requires `soft_noise`")
            })?;
            params.soft_noise = Some(noise.clone());
            ("soft", "soft")
        }
        (other, None) => (other, other),
    };
    Ok(MethodSpec {
        name: name.to_string(),
        registry_key: key.to_string(),
        params,
    })
}

pub fn validate(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    let raw = raw.with_defaults();
    let n = raw.initial_truth.len();
    if n == 0 {
        return Err(ConfigError::invalid(
            "dimensions",
            "state dimension is zero",
        ));
    }
    let initial_truth = vector(&raw.initial_truth, "initial_truth")?;

    let models = match &raw.model {
        RawModels::Constant(m) => vec![model(m, "model", n)?],
        RawModels::PerStep(list) => {
            if list.is_empty() {
                return Err(ConfigError::invalid("dimensions", "model list is empty"));
            }
            list.iter()
                .enumerate()
                .map(|(i, m)| model(m, &format!("model[{i}]"), n))
                .collect::<Result<_, _>>()?
        }
    };

    let constraint = constraint(raw.constraint.as_ref(), n)?;
    let violation = constraint.residual_norm(&initial_truth);
    if !(violation <= INITIAL_FEASIBILITY_TOL) {
        return Err(ConfigError::invalid(
            "initial truth feasibility",
            format!("constraint violation {violation:e} exceeds {INITIAL_FEASIBILITY_TOL:e}"),
        ));
    }

    let mean = vector(&raw.initial_estimate.mean, "initial_estimate.mean")?;
    let cov = matrix(
        &raw.initial_estimate.covariance,
        "initial_estimate.covariance",
    )?;
    if mean.len() != n || cov.shape() != (n, n) {
        return Err(ConfigError::invalid(
            "dimensions",
            format!("initial estimate must have dimension {n}"),
        ));
    }
    let spd = (&cov - cov.transpose()).norm() <= 1e-12 * cov.norm()
        && matops::min_eigenvalue(&cov).is_ok_and(|e| e > 0.0);
    if !spd {
        return Err(ConfigError::invalid(
            "initial covariance positive definite",
            "initial_estimate.covariance must be symmetric positive definite",
        ));
    }
    let initial_estimate = StateEstimate::new(mean, cov, 0)
        .map_err(|e| ConfigError::invalid("initial covariance positive definite", e))?;

    let soft_noise = match &raw.soft_noise {
        None => None,
        Some(rows) => {
            let s = matrix(rows, "soft_noise")?;
            let q = constraint.rows();
            if s.shape() != (q, q) {
                return Err(ConfigError::invalid(
                    "soft noise",
                    format!("soft_noise must be {q}x{q}"),
                ));
            }
            Some(s)
        }
    };

    let feedback = raw.feedback.unwrap_or(true);
    let registry = MethodRegistry::with_builtins();
    let mut methods: Vec<MethodSpec> = Vec::new();
    for (i, m) in raw
        .methods
        .as_deref()
        .unwrap_or_default()
        .iter()
        .enumerate()
    {
        let spec = method(m, i, n, soft_noise.as_ref(), feedback)?;
        registry
            .build(&spec.registry_key, &spec.params)
            .map_err(|e| ConfigError::invalid("methods", e))?;
        if methods.iter().any(|o| o.name == spec.name) {
            return Err(ConfigError::invalid(
                "methods",
                format!("method `{}` listed twice", spec.name),
            ));
        }
        methods.push(spec);
    }
    if methods.is_empty() {
        return Err(ConfigError::invalid("methods", "no methods selected"));
    }

    Ok(ScenarioConfig {
        name: raw.name.clone(),
        steps: raw.steps,
        models,
        constraint,
        initial_truth,
        initial_estimate,
        methods,
        soft_noise,
        seed: raw.seed.unwrap_or(0),
        feedback,
        echo: raw,
    })
}
