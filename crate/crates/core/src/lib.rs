//! Linear Kalman filtering with equality-constrained measurement updates.
//!
//! * [`matops`]: dense substrate (Kronecker products, vectorization, saddle-point inverses,
//!   pseudo-inverse, symmetric utilities).
//! * [`kalman`]: the unconstrained filter in gain/Joseph and fusion form.
//! * [`constrained`]: augmented, projected, restricted-gain and fusion constrained updates,
//!   the `Gamma P Gamma'` covariance, nonlinear constraint linearization and soft constraints.
//! * [`methods`]: the update methods behind one trait, selectable by name.
//! * [`oracle`]: dense brute-force references and random instance generators.

pub mod constrained;
pub mod error;
pub mod kalman;
pub mod matops;
pub mod methods;
pub mod oracle;

pub use constrained::{
    ConstrainedUpdateResult, ConstraintMethod, EqualityConstraint, NonlinearConstraint,
    ProjectionSpec, ProjectionWeight, RestrictedGainSolution,
};
pub use error::{Error, Result};
pub use kalman::{InnovationStats, Measurement, StateEstimate, SystemModel};
pub use matops::{DenseMatrix, DenseVector};
pub use methods::{EquivalenceClass, MethodParams, MethodRegistry, UpdateMethod};
