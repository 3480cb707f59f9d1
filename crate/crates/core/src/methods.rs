//! Update methods behind a common trait, registered by name.
//!
//! A [`MethodRegistry`] maps method names to factories; callers pick methods at runtime
//! (from a config file or the command line) and drive every one of them through
//! [`UpdateMethod::update`].

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::constrained::{
    self, ConstrainedUpdateResult, ConstraintMethod, EqualityConstraint, ProjectionSpec,
    ProjectionWeight,
};
use crate::error::{Error, Result};
use crate::kalman::{self, Measurement, StateEstimate, SystemModel};
use crate::matops::DenseMatrix;

/// Methods within one class produce the same estimate in exact arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EquivalenceClass {
    /// Augmented, fusion and `W = P^-1` projection.
    PosteriorWeighted,
    /// Restricted gain and `W = I` projection.
    IdentityWeighted,
}

impl fmt::Display for EquivalenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquivalenceClass::PosteriorWeighted => f.write_str("posterior-weighted"),
            EquivalenceClass::IdentityWeighted => f.write_str("identity-weighted"),
        }
    }
}

/// One measurement-update strategy.
pub trait UpdateMethod: Send + Sync + fmt::Debug {
    /// Instance name, unique within a run (e.g. `projection:identity`).
    fn name(&self) -> &str;

    fn kind(&self) -> ConstraintMethod;

    fn equivalence_class(&self) -> Option<EquivalenceClass> {
        None
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult>;
}

#[derive(Debug, Clone, Default)]
pub struct Unconstrained;

impl UpdateMethod for Unconstrained {
    fn name(&self) -> &str {
        "unconstrained"
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::Unconstrained
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        let (estimate, _) = kalman::update_joseph(pred, z, model)?;
        let constraint_residual = constraint.residual_norm(estimate.mean());
        Ok(ConstrainedUpdateResult {
            estimate,
            method: ConstraintMethod::Unconstrained,
            constraint_residual,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Augmented;

impl UpdateMethod for Augmented {
    fn name(&self) -> &str {
        "augmented"
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::Augmented
    }

    fn equivalence_class(&self) -> Option<EquivalenceClass> {
        Some(EquivalenceClass::PosteriorWeighted)
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        constrained::augmented_update(pred, z, model, constraint)
    }
}

/// Augmented update with noise on the constraint pseudo-measurement.
#[derive(Debug, Clone)]
pub struct SoftAugmented {
    pub constraint_noise: DenseMatrix,
}

impl UpdateMethod for SoftAugmented {
    fn name(&self) -> &str {
        "soft"
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::SoftAugmented
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        constrained::soft_augmented_update(pred, z, model, constraint, &self.constraint_noise)
    }
}

/// Unconstrained Joseph update followed by a weighted projection.
#[derive(Debug, Clone)]
pub struct Projection {
    spec: ProjectionSpec,
    name: String,
}

impl Projection {
    pub fn new(spec: ProjectionSpec) -> Self {
        let name = match &spec.weight {
            ProjectionWeight::PosteriorInverse => "projection:posterior-inverse",
            ProjectionWeight::Identity => "projection:identity",
            ProjectionWeight::Explicit(_) => "projection:weighted",
        }
        .to_string();
        Self { spec, name }
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }
}

impl UpdateMethod for Projection {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::Projection
    }

    fn equivalence_class(&self) -> Option<EquivalenceClass> {
        match &self.spec.weight {
            ProjectionWeight::PosteriorInverse => Some(EquivalenceClass::PosteriorWeighted),
            ProjectionWeight::Identity => Some(EquivalenceClass::IdentityWeighted),
            ProjectionWeight::Explicit(_) => None,
        }
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        let (post, _) = kalman::update_joseph(pred, z, model)?;
        constrained::project(&post, constraint, &self.spec)
    }
}

/// Restricted-gain update. When the innovation is degenerate the gain problem has no
/// unique solution; the identity-weight projection gives the same mean and is used instead.
#[derive(Debug, Clone, Default)]
pub struct RestrictedGain;

impl UpdateMethod for RestrictedGain {
    fn name(&self) -> &str {
        "restricted-gain"
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::RestrictedGain
    }

    fn equivalence_class(&self) -> Option<EquivalenceClass> {
        Some(EquivalenceClass::IdentityWeighted)
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        match constrained::restricted_gain_update(pred, z, model, constraint) {
            Ok((_, result)) => Ok(result),
            Err(Error::DegenerateResidual { .. }) => {
                let (post, _) = kalman::update_joseph(pred, z, model)?;
                let mut result = constrained::project(
                    &post,
                    constraint,
                    &ProjectionSpec::new(ProjectionWeight::Identity),
                )?;
                result.method = ConstraintMethod::RestrictedGain;
                Ok(result)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FusionConstrained;

impl UpdateMethod for FusionConstrained {
    fn name(&self) -> &str {
        "fusion"
    }

    fn kind(&self) -> ConstraintMethod {
        ConstraintMethod::Fusion
    }

    fn equivalence_class(&self) -> Option<EquivalenceClass> {
        Some(EquivalenceClass::PosteriorWeighted)
    }

    fn update(
        &self,
        pred: &StateEstimate,
        z: &Measurement,
        model: &SystemModel,
        constraint: &EqualityConstraint,
    ) -> Result<ConstrainedUpdateResult> {
        constrained::fusion_constrained_update(pred, z, model, constraint)
    }
}

/// Options a factory may consume.
#[derive(Debug, Clone, Default)]
pub struct MethodParams {
    pub weight: Option<ProjectionWeight>,
    pub soft_noise: Option<DenseMatrix>,
    pub feedback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown method `{name}` (known: {known})")]
    UnknownMethod { name: String, known: String },
    #[error("method `{method}` requires parameter `{parameter}`")]
    MissingParameter {
        method: String,
        parameter: &'static str,
    },
}

type Factory = Box<
    dyn Fn(&MethodParams) -> std::result::Result<Box<dyn UpdateMethod>, RegistryError>
        + Send
        + Sync,
>;

/// Name-to-factory table of update methods.
pub struct MethodRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registers `unconstrained`, `augmented`, `soft`, `projection`, `restricted-gain`
    /// and `fusion`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("unconstrained", |_| Ok(Box::new(Unconstrained)));
        reg.register("augmented", |_| Ok(Box::new(Augmented)));
        reg.register("soft", |params| {
            let constraint_noise =
                params
                    .soft_noise
                    .clone()
                    .ok_or_else(|| RegistryError::MissingParameter {
                        method: "soft".into(),
                        parameter: "soft_noise",
                    })?;
            Ok(Box::new(SoftAugmented { constraint_noise }))
        });
        reg.register("projection", |params| {
            let weight = params
                .weight
                .clone()
                .unwrap_or(ProjectionWeight::PosteriorInverse);
            Ok(Box::new(Projection::new(ProjectionSpec {
                weight,
                feedback: params.feedback.unwrap_or(true),
            })))
        });
        reg.register("restricted-gain", |_| Ok(Box::new(RestrictedGain)));
        reg.register("fusion", |_| Ok(Box::new(FusionConstrained)));
        reg
    }

    /// Adds or replaces a factory.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&MethodParams) -> std::result::Result<Box<dyn UpdateMethod>, RegistryError>
            + Send
            + Sync
            + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        name: &str,
        params: &MethodParams,
    ) -> std::result::Result<Box<dyn UpdateMethod>, RegistryError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| RegistryError::UnknownMethod {
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            })?;
        factory(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::DenseVector;

    fn instance() -> (StateEstimate, Measurement, SystemModel, EqualityConstraint) {
        let model = SystemModel::new(
            DenseMatrix::identity(2, 2),
            DenseMatrix::zeros(2, 2),
            DenseMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DenseMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        (
            StateEstimate::new(DenseVector::zeros(2), DenseMatrix::identity(2, 2), 0).unwrap(),
            Measurement::new(DenseVector::from_column_slice(&[2.0]), 1).unwrap(),
            model,
            EqualityConstraint::new(
                DenseMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                DenseVector::from_column_slice(&[0.0]),
            )
            .unwrap(),
        )
    }

    #[test]
    fn builtins_are_registered() {
        let reg = MethodRegistry::with_builtins();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(
            names,
            [
                "augmented",
                "fusion",
                "projection",
                "restricted-gain",
                "soft",
                "unconstrained"
            ]
        );
    }

    #[test]
    fn unknown_and_missing_parameters() {
        let reg = MethodRegistry::with_builtins();
        assert!(matches!(
            reg.build("nope", &MethodParams::default()),
            Err(RegistryError::UnknownMethod { .. })
        ));
        assert!(matches!(
            reg.build("soft", &MethodParams::default()),
            Err(RegistryError::MissingParameter { .. })
        ));
    }

    #[test]
    fn equivalent_methods_agree_on_worked_instance() {
        let reg = MethodRegistry::with_builtins();
        let (pred, z, model, c) = instance();
        let run = |name: &str, params: MethodParams| {
            let m = reg.build(name, &params).unwrap();
            (
                m.equivalence_class(),
                m.update(&pred, &z, &model, &c).unwrap(),
            )
        };
        let (cls_a, aug) = run("augmented", MethodParams::default());
        let (cls_f, fus) = run("fusion", MethodParams::default());
        let (cls_p, proj) = run("projection", MethodParams::default());
        assert_eq!(cls_a, cls_f);
        assert_eq!(cls_a, cls_p);
        for other in [&fus, &proj] {
            assert!((aug.estimate.mean() - other.estimate.mean()).norm() < 1e-12);
        }
        let (cls_r, rg) = run("restricted-gain", MethodParams::default());
        let (cls_i, pi) = run(
            "projection",
            MethodParams {
                weight: Some(ProjectionWeight::Identity),
                ..Default::default()
            },
        );
        assert_eq!(cls_r, cls_i);
        assert_eq!(cls_r, Some(EquivalenceClass::IdentityWeighted));
        assert!((rg.estimate.mean() - pi.estimate.mean()).norm() < 1e-12);
    }

    #[test]
    fn restricted_gain_falls_back_on_zero_innovation() {
        let (pred, _, model, _) = instance();
        let z = Measurement::new(DenseVector::from_column_slice(&[0.0]), 1).unwrap();
        let c = EqualityConstraint::new(
            DenseMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DenseVector::from_column_slice(&[1.0]),
        )
        .unwrap();
        let r = RestrictedGain.update(&pred, &z, &model, &c).unwrap();
        assert_eq!(r.method, ConstraintMethod::RestrictedGain);
        assert!((r.estimate.mean() - DenseVector::from_column_slice(&[0.5, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn custom_registration() {
        let mut reg = MethodRegistry::empty();
        reg.register("plain", |_| Ok(Box::new(Unconstrained)));
        assert_eq!(
            reg.build("plain", &MethodParams::default()).unwrap().name(),
            "unconstrained"
        );
    }
}
