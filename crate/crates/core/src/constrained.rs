//! Equality-constrained measurement updates.
//!
//! Four routes land on the constraint set `A x = b`:
//!
//! * [`augmented_update`] observes the constraint as a noise-free pseudo-measurement.
//! * [`project`] projects the unconstrained posterior under a weighted norm.
//! * [`restricted_gain_update`] minimizes the usual gain objective subject to the corrected
//!   estimate being feasible.
//! * [`fusion_constrained_update`] solves the stacked least-squares fusion of prediction,
//!   measurement and constraint through a pseudo-inverted saddle-point matrix.
//!
//! The augmented, fusion and `W = P^-1` projection routes produce the same estimate; the
//! restricted gain coincides with the `W = I` projection.

use std::fmt;
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::kalman::{self, InnovationStats, Measurement, StateEstimate, SystemModel};
use crate::matops::{self, DenseMatrix, DenseVector, SaddleInverseBlocks};

/// Above this condition number of `A` the weighted Gram inverse is formed through a QR
/// factorization instead of a Cholesky factorization of `A W^-1 A'`.
pub const QR_SWITCH_CONDITION: f64 = 1e4;

/// `nu' S^-1 nu` at or below this value makes the restricted-gain system singular.
pub const DEGENERATE_RESIDUAL_TOL: f64 = 1e-12;

/// Linear equality constraint `A x = b` with `A` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityConstraint {
    matrix: DenseMatrix,
    rhs: DenseVector,
    condition: f64,
    /// Orthonormal basis of the null space of `A`, `n x (n - q)`.
    null_basis: DenseMatrix,
}

impl EqualityConstraint {
    pub fn new(matrix: DenseMatrix, rhs: DenseVector) -> Result<Self> {
        let (q, n) = matrix.shape();
        if rhs.len() != q {
            return Err(Error::dims("constraint rhs", q, rhs.len()));
        }
        if q > n {
            return Err(Error::dims("constraint rows", format!("at most {n}"), q));
        }
        matops::ensure_finite(&matrix, "constraint matrix")?;
        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "constraint rhs",
            });
        }
        let rank = matops::rank(&matrix, matops::default_pinv_tol(&matrix));
        if rank < q {
            return Err(Error::RankDeficientConstraint { rank, rows: q });
        }
        let condition = matops::condition_number(&matrix);
        // Householder QR of the square [A' 0]: trailing columns of Q span null(A).
        let mut padded = DenseMatrix::zeros(n, n);
        padded
            .view_mut((0, 0), (n, q))
            .copy_from(&matrix.transpose());
        let null_basis = padded.qr().q().columns(q, n - q).into_owned();
        Ok(Self {
            matrix,
            rhs,
            condition,
            null_basis,
        })
    }

    /// A constraint with no rows on an `n`-dimensional state. Every method reduces to the
    /// unconstrained update.
    pub fn empty(n: usize) -> Self {
        Self {
            matrix: DenseMatrix::zeros(0, n),
            rhs: DenseVector::zeros(0),
            condition: 1.0,
            null_basis: DenseMatrix::identity(n, n),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn rhs(&self) -> &DenseVector {
        &self.rhs
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    /// Condition number of `A`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `A x - b`.
    pub fn residual(&self, x: &DenseVector) -> DenseVector {
        &self.matrix * x - &self.rhs
    }

    pub fn residual_norm(&self, x: &DenseVector) -> f64 {
        self.residual(x).norm()
    }

    /// Orthonormal basis of `{x : A x = 0}`.
    pub fn null_basis(&self) -> &DenseMatrix {
        &self.null_basis
    }

    /// `N N' P N N'` for the null-space basis `N`. A hard-constrained covariance satisfies
    /// `A P = 0`, so this leaves it unchanged in exact arithmetic and strips the rounding
    /// error that leaks into `range(A')`. With `q = n` the result is exactly zero.
    pub fn confine(&self, cov: &DenseMatrix) -> DenseMatrix {
        let nb = &self.null_basis;
        let inner = nb.transpose() * cov * nb;
        let inner = (&inner + inner.transpose()) * 0.5;
        nb * inner * nb.transpose()
    }

    fn check_state(&self, n: usize) -> Result<()> {
        if self.state_dim() != n {
            return Err(Error::dims("constraint columns", n, self.state_dim()));
        }
        Ok(())
    }
}

type VectorFn = dyn Fn(&DenseVector) -> DenseVector + Send + Sync;
type JacobianFn = dyn Fn(&DenseVector) -> DenseMatrix + Send + Sync;

/// Nonlinear equality constraint `a(x) = b`.
///
/// The closures are shared between threads and must be safe to call concurrently.
#[derive(Clone)]
pub struct NonlinearConstraint {
    eval: Arc<VectorFn>,
    jacobian: Arc<JacobianFn>,
    rhs: DenseVector,
}

impl fmt::Debug for NonlinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearConstraint")
            .field("rhs", &self.rhs)
            .finish_non_exhaustive()
    }
}

impl NonlinearConstraint {
    pub fn new<F, J>(eval: F, jacobian: J, rhs: DenseVector) -> Self
    where
        F: Fn(&DenseVector) -> DenseVector + Send + Sync + 'static,
        J: Fn(&DenseVector) -> DenseMatrix + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
            rhs,
        }
    }

    pub fn eval(&self, x: &DenseVector) -> DenseVector {
        (self.eval)(x)
    }

    pub fn jacobian(&self, x: &DenseVector) -> DenseMatrix {
        (self.jacobian)(x)
    }

    pub fn rhs(&self) -> &DenseVector {
        &self.rhs
    }

    /// `a(x) - b`.
    pub fn violation(&self, x: &DenseVector) -> DenseVector {
        self.eval(x) - &self.rhs
    }
}

/// Weighting used by [`project`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionWeight {
    /// `W = P^-1` of the estimate being projected.
    PosteriorInverse,
    Identity,
    /// Any symmetric positive definite matrix.
    Explicit(DenseMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    pub weight: ProjectionWeight,
    /// When set, the projected estimate replaces the unconstrained one in the recursion.
    /// Otherwise the projection is only reported alongside the unconstrained filter.
    pub feedback: bool,
}

impl ProjectionSpec {
    pub fn new(weight: ProjectionWeight) -> Self {
        Self {
            weight,
            feedback: true,
        }
    }
}

/// Which update produced a [`ConstrainedUpdateResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintMethod {
    Unconstrained,
    Augmented,
    SoftAugmented,
    Projection,
    RestrictedGain,
    Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedUpdateResult {
    pub estimate: StateEstimate,
    pub method: ConstraintMethod,
    /// `||A x - b||` of the returned mean.
    pub constraint_residual: f64,
}

impl ConstrainedUpdateResult {
    /// Result of a hard-constrained update: the covariance is confined to `null(A)`.
    fn hard(estimate: StateEstimate, method: ConstraintMethod, c: &EqualityConstraint) -> Self {
        let (mean, cov, step) = estimate.into_parts();
        let cov = c.confine(&cov);
        Self::new(StateEstimate::from_parts(mean, cov, step), method, c)
    }

    fn new(estimate: StateEstimate, method: ConstraintMethod, c: &EqualityConstraint) -> Self {
        let constraint_residual = c.residual_norm(estimate.mean());
        Self {
            estimate,
            method,
            constraint_residual,
        }
    }
}

/// Gain, `vec(K^R - K)` and Lagrange multipliers of the restricted-gain problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedGainSolution {
    pub gain: DenseMatrix,
    pub ell: DenseVector,
    pub multipliers: DenseVector,
}

/// `W^-1 A' (A W^-1 A')^-1` for a given `W^-1`.
fn weighted_gain(weight_inv: &DenseMatrix, c: &EqualityConstraint) -> Result<DenseMatrix> {
    let a = c.matrix();
    if c.condition() > QR_SWITCH_CONDITION {
        if let Some(chol) = weight_inv.clone().cholesky() {
            return weighted_gain_qr(&chol.l(), a);
        }
    }
    let wa_t = weight_inv * a.transpose();
    let gram = a * &wa_t;
    let gram_inv = matops::spd_inverse(&gram).map_err(|s| Error::SingularConstraintGram {
        condition: s.condition,
    })?;
    Ok(wa_t * gram_inv)
}

/// QR route for an ill-conditioned `A`: with `W^-1 = L L'` and `L' A' = Q R`,
/// `A W^-1 A' = R' R` and the weighted gain is `L Q R^-T`.
fn weighted_gain_qr(l: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    let q_rows = a.nrows();
    let qr = (l.transpose() * a.transpose()).qr();
    let r = qr.r();
    let diag = r.diagonal().map(f64::abs);
    let condition = (diag.max() / diag.min()).powi(2);
    if !(condition <= matops::MAX_CONDITION) {
        return Err(Error::SingularConstraintGram { condition });
    }
    // R^-T solves R' X = I.
    let r_inv_t = r
        .transpose()
        .solve_lower_triangular(&DenseMatrix::identity(q_rows, q_rows))
        .ok_or(Error::SingularConstraintGram { condition })?;
    Ok(l * qr.q() * r_inv_t)
}

/// Projects a posterior onto the constraint under the `W = P^-1` weighting:
/// `x - P A' (A P A')^-1 (A x - b)` and `P - P A' (A P A')^-1 A P`.
pub fn constrain_posterior(
    est: &StateEstimate,
    c: &EqualityConstraint,
) -> Result<ConstrainedUpdateResult> {
    c.check_state(est.dim())?;
    if c.is_empty() {
        return Ok(ConstrainedUpdateResult::new(
            est.clone(),
            ConstraintMethod::Projection,
            c,
        ));
    }
    let p = est.covariance();
    let upsilon = weighted_gain(p, c)?;
    let mean = est.mean() - &upsilon * c.residual(est.mean());
    let cov = matops::symmetrize(&(p - &upsilon * c.matrix() * p))?;
    Ok(ConstrainedUpdateResult::hard(
        StateEstimate::from_parts(mean, cov, est.step()),
        ConstraintMethod::Projection,
        c,
    ))
}

/// `Gamma = I - P A' (A P A')^-1 A`.
pub fn gamma_projector(post_cov: &DenseMatrix, c: &EqualityConstraint) -> Result<DenseMatrix> {
    matops::ensure_square(post_cov, "gamma projector covariance")?;
    c.check_state(post_cov.nrows())?;
    let n = post_cov.nrows();
    if c.is_empty() {
        return Ok(DenseMatrix::identity(n, n));
    }
    if c.rows() == n {
        // A is invertible and the projector's range is {0}.
        return Ok(DenseMatrix::zeros(n, n));
    }
    let upsilon = weighted_gain(post_cov, c)?;
    Ok(DenseMatrix::identity(n, n) - upsilon * c.matrix())
}

/// Constrained covariance in congruence form `Gamma P Gamma'`, symmetrized.
pub fn joseph_constrained_cov(
    post_cov: &DenseMatrix,
    c: &EqualityConstraint,
) -> Result<DenseMatrix> {
    let gamma = gamma_projector(post_cov, c)?;
    matops::symmetrize(&(&gamma * post_cov * gamma.transpose()))
}

/// The augmented residual covariance `[[S, H P A'], [A P H', A P A' + N]]` where `N` is the
/// optional constraint noise.
pub fn augmented_innovation_cov(
    pred_cov: &DenseMatrix,
    model: &SystemModel,
    c: &EqualityConstraint,
    constraint_noise: Option<&DenseMatrix>,
) -> DenseMatrix {
    let h = model.observation();
    let a = c.matrix();
    let (m, q) = (h.nrows(), a.nrows());
    let mut h_aug = DenseMatrix::zeros(m + q, pred_cov.nrows());
    h_aug.view_mut((0, 0), (m, h.ncols())).copy_from(h);
    h_aug.view_mut((m, 0), (q, a.ncols())).copy_from(a);
    let mut s = &h_aug * pred_cov * h_aug.transpose();
    let mut r = s.view_mut((0, 0), (m, m));
    r += model.measurement_noise();
    if let Some(noise) = constraint_noise {
        let mut lower = s.view_mut((m, m), (q, q));
        lower += noise;
    }
    s
}

/// Blocks of the inverse augmented residual covariance through the Schur complement:
/// `(S^-1 + K' A' G^-1 A K, -K' A' G^-1, -G^-1 A K, G^-1)` with `G = A P_post A'`.
pub fn block_s_inverse(
    pred_cov: &DenseMatrix,
    model: &SystemModel,
    c: &EqualityConstraint,
    innov: &InnovationStats,
) -> Result<SaddleInverseBlocks> {
    block_s_inverse_with_noise(pred_cov, model, c, innov, None)
}

/// [`block_s_inverse`] with constraint noise `N` added to the lower-right block, so
/// `G = A P_post A' + N`.
pub fn block_s_inverse_with_noise(
    pred_cov: &DenseMatrix,
    model: &SystemModel,
    c: &EqualityConstraint,
    innov: &InnovationStats,
    constraint_noise: Option<&DenseMatrix>,
) -> Result<SaddleInverseBlocks> {
    let post_cov = kalman::joseph_covariance(
        pred_cov,
        &innov.gain,
        model.observation(),
        model.measurement_noise(),
    );
    let a = c.matrix();
    let mut gram = a * &post_cov * a.transpose();
    if let Some(noise) = constraint_noise {
        gram += noise;
    }
    let gram_inv = matops::spd_inverse(&gram).map_err(|s| Error::SingularConstraintGram {
        condition: s.condition,
    })?;
    let ak = a * &innov.gain;
    let lower_left = -(&gram_inv * &ak);
    let upper_right = lower_left.transpose();
    let upper_left = innov.residual_cov_inverse() + ak.transpose() * &gram_inv * &ak;
    Ok(SaddleInverseBlocks {
        upper_left,
        upper_right,
        lower_left,
        lower_right: gram_inv,
    })
}

/// Kalman update on the stacked system `[z; b] = [H; A] x + noise` with noise covariance
/// `blkdiag(R, 0)`.
pub fn augmented_update(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
) -> Result<ConstrainedUpdateResult> {
    augmented_update_inner(pred, z, model, c, None, ConstraintMethod::Augmented)
}

/// Augmented update with the constraint blurred by `constraint_noise` (`q x q`, PSD).
pub fn soft_augmented_update(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
    constraint_noise: &DenseMatrix,
) -> Result<ConstrainedUpdateResult> {
    let q = c.rows();
    if constraint_noise.shape() != (q, q) {
        return Err(Error::dims(
            "constraint noise",
            format!("{q}x{q}"),
            format!("{}x{}", constraint_noise.nrows(), constraint_noise.ncols()),
        ));
    }
    matops::ensure_finite(constraint_noise, "constraint noise")?;
    if q > 0 {
        let sym = matops::symmetrize(constraint_noise)?;
        let asym = (constraint_noise - &sym).norm();
        let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        let scale = sym.trace().abs().max(f64::MIN_POSITIVE);
        if asym > 1e-9 * scale || min_eig < -1e-9 * scale {
            return Err(Error::SingularCovariance {
                context: "constraint noise is not symmetric PSD",
            });
        }
    }
    augmented_update_inner(
        pred,
        z,
        model,
        c,
        Some(constraint_noise),
        ConstraintMethod::SoftAugmented,
    )
}

fn augmented_update_inner(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
    constraint_noise: Option<&DenseMatrix>,
    method: ConstraintMethod,
) -> Result<ConstrainedUpdateResult> {
    model.check_state(pred)?;
    c.check_state(pred.dim())?;
    if c.is_empty() {
        let (post, _) = kalman::update_joseph(pred, z, model)?;
        return Ok(ConstrainedUpdateResult::new(post, method, c));
    }
    let innov = kalman::innovate(pred, z, model).map_err(|e| match e {
        Error::SingularInnovationCovariance { .. } => Error::SingularAugmentedInnovation,
        other => other,
    })?;
    let s_inv = block_s_inverse_with_noise(pred.covariance(), model, c, &innov, constraint_noise)
        .map_err(|e| match e {
        Error::SingularConstraintGram { .. } => Error::SingularAugmentedInnovation,
        other => other,
    })?;

    let p = pred.covariance();
    let h = model.observation();
    let a = c.matrix();
    let (n, m, q) = (pred.dim(), h.nrows(), a.nrows());

    let ph_t = p * h.transpose();
    let pa_t = p * a.transpose();
    // K^A = [P H', P A'] (S^A)^-1, split by columns.
    let gain_meas = &ph_t * &s_inv.upper_left + &pa_t * &s_inv.lower_left;
    let gain_con = &ph_t * &s_inv.upper_right + &pa_t * &s_inv.lower_right;

    let constraint_innov = c.rhs() - a * pred.mean();
    let mean = pred.mean() + &gain_meas * &innov.residual + &gain_con * &constraint_innov;

    // Joseph form on the stacked system.
    let mut i_kh = DenseMatrix::identity(n, n) - &gain_meas * h;
    i_kh -= &gain_con * a;
    let mut cov = &i_kh * p * i_kh.transpose()
        + &gain_meas * model.measurement_noise() * gain_meas.transpose();
    if let Some(noise) = constraint_noise {
        cov += &gain_con * noise * gain_con.transpose();
    }
    debug_assert_eq!(gain_con.shape(), (n, q));
    debug_assert_eq!(gain_meas.shape(), (n, m));
    let cov = matops::symmetrize(&cov)?;
    let estimate = StateEstimate::from_parts(mean, cov, pred.step());
    Ok(match constraint_noise {
        None => ConstrainedUpdateResult::hard(estimate, method, c),
        Some(_) => ConstrainedUpdateResult::new(estimate, method, c),
    })
}

/// Weighted projection `argmin (x - x_hat)' W (x - x_hat)` subject to `A x = b`.
///
/// The covariance is `(I - U A) P (I - U A)'` with `U = W^-1 A' (A W^-1 A')^-1`. For
/// [`ProjectionWeight::PosteriorInverse`] the estimate's own covariance serves as `W^-1`
/// directly, so it is never inverted.
pub fn project(
    est: &StateEstimate,
    c: &EqualityConstraint,
    spec: &ProjectionSpec,
) -> Result<ConstrainedUpdateResult> {
    let n = est.dim();
    c.check_state(n)?;
    let weight_inv = match &spec.weight {
        ProjectionWeight::PosteriorInverse => est.covariance().clone(),
        ProjectionWeight::Identity => DenseMatrix::identity(n, n),
        ProjectionWeight::Explicit(w) => {
            if w.shape() != (n, n) {
                return Err(Error::dims(
                    "projection weight",
                    format!("{n}x{n}"),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ));
            }
            let scale = w.norm().max(f64::MIN_POSITIVE);
            if (w - w.transpose()).norm() > 1e-9 * scale {
                return Err(Error::SingularWeight);
            }
            matops::spd_inverse(w).map_err(|_| Error::SingularWeight)?
        }
    };
    if c.is_empty() {
        return Ok(ConstrainedUpdateResult::new(
            est.clone(),
            ConstraintMethod::Projection,
            c,
        ));
    }
    let upsilon = weighted_gain(&weight_inv, c)?;
    let mean = est.mean() - &upsilon * c.residual(est.mean());
    let i_ua = DenseMatrix::identity(n, n) - &upsilon * c.matrix();
    let cov = matops::symmetrize(&(&i_ua * est.covariance() * i_ua.transpose()))?;
    Ok(ConstrainedUpdateResult::hard(
        StateEstimate::from_parts(mean, cov, est.step()),
        ConstraintMethod::Projection,
        c,
    ))
}

/// Closed-form solution of the restricted-gain Lagrange system.
///
/// `constraint_gap` is `b - A x_post` for the unconstrained posterior mean. Returns
/// `ell = vec(K^R - K)` and the multipliers `lambda`:
///
/// ```text
/// ell    = ([S^-1 nu / (nu' S^-1 nu)] kron [A' (A A')^-1]) gap
/// lambda = -2 [(nu' S^-1 nu)^-1 kron (A A')^-1] gap
/// ```
pub fn solve_lagrange_system(
    innov: &InnovationStats,
    c: &EqualityConstraint,
    constraint_gap: &DenseVector,
) -> Result<(DenseVector, DenseVector)> {
    if constraint_gap.len() != c.rows() {
        return Err(Error::dims(
            "constraint gap",
            c.rows(),
            constraint_gap.len(),
        ));
    }
    let weighted_norm = innov.weighted_residual_norm();
    if !(weighted_norm > DEGENERATE_RESIDUAL_TOL) {
        return Err(Error::DegenerateResidual { weighted_norm });
    }
    let a = c.matrix();
    let aat_inv =
        matops::spd_inverse(&(a * a.transpose())).map_err(|s| Error::SingularConstraintGram {
            condition: s.condition,
        })?;
    let meas_dir = innov.residual_cov_inverse() * &innov.residual / weighted_norm;
    let state_dir = a.transpose() * &aat_inv;
    // (u kron B) g = vec(B g u') for a column vector u.
    let correction = &state_dir * constraint_gap * meas_dir.transpose();
    let ell = matops::vec(&correction);
    let multipliers = &aat_inv * constraint_gap * (-2.0 / weighted_norm);
    Ok((ell, multipliers))
}

/// Restricted-gain update: the gain minimizing the Joseph-form trace subject to the
/// corrected estimate satisfying the constraint.
///
/// The covariance is the identity-weight projection covariance of the unconstrained
/// posterior. Fails with [`Error::DegenerateResidual`] when `nu' S^-1 nu` vanishes; see
/// [`crate::methods::RestrictedGain`] for the fallback.
pub fn restricted_gain_update(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
) -> Result<(RestrictedGainSolution, ConstrainedUpdateResult)> {
    c.check_state(pred.dim())?;
    let (post, innov) = kalman::update_joseph(pred, z, model)?;
    let (n, m) = innov.gain.shape();
    if c.is_empty() {
        let solution = RestrictedGainSolution {
            gain: innov.gain.clone(),
            ell: DenseVector::zeros(n * m),
            multipliers: DenseVector::zeros(0),
        };
        return Ok((
            solution,
            ConstrainedUpdateResult::new(post, ConstraintMethod::RestrictedGain, c),
        ));
    }
    let gap = -c.residual(post.mean());
    let (ell, multipliers) = solve_lagrange_system(&innov, c, &gap)?;
    let gain = &innov.gain + matops::unvec(&ell, n, m)?;
    let mean = pred.mean() + &gain * &innov.residual;
    let cov = project(&post, c, &ProjectionSpec::new(ProjectionWeight::Identity))?
        .estimate
        .into_parts()
        .1;
    let result = ConstrainedUpdateResult::new(
        StateEstimate::from_parts(mean, cov, pred.step()),
        ConstraintMethod::RestrictedGain,
        c,
    );
    Ok((
        RestrictedGainSolution {
            gain,
            ell,
            multipliers,
        },
        result,
    ))
}

/// Constrained fusion of prediction, measurement and constraint.
///
/// Stacks `[x_pred; z; b] = [I; H; A] x + noise` with the singular noise covariance
/// `R_c = blkdiag(P, R, 0)`, then reads the estimate from the lower-left block and the
/// negated covariance from the lower-right block of the pseudo-inverse of
/// `[[R_c, H_c], [H_c', 0]]`.
pub fn fusion_constrained_update(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
    c: &EqualityConstraint,
) -> Result<ConstrainedUpdateResult> {
    model.check_state(pred)?;
    c.check_state(pred.dim())?;
    if z.value().len() != model.measurement_dim() {
        return Err(Error::dims(
            "measurement vs model",
            model.measurement_dim(),
            z.value().len(),
        ));
    }
    if c.is_empty() {
        let (post, _) = kalman::update_joseph(pred, z, model)?;
        return Ok(ConstrainedUpdateResult::new(
            post,
            ConstraintMethod::Fusion,
            c,
        ));
    }
    let p = pred.covariance();
    let r = model.measurement_noise();
    for (mat, ctx) in [
        (p, "fusion prior covariance"),
        (r, "fusion measurement noise"),
    ] {
        matops::spd_inverse(mat).map_err(|_| Error::SingularCovariance { context: ctx })?;
    }
    let h = model.observation();
    let a = c.matrix();
    let (n, m, q) = (pred.dim(), h.nrows(), a.nrows());
    let stacked = n + m + q;

    let mut saddle = DenseMatrix::zeros(stacked + n, stacked + n);
    saddle.view_mut((0, 0), (n, n)).copy_from(p);
    saddle.view_mut((n, n), (m, m)).copy_from(r);
    let mut stacked_obs = DenseMatrix::zeros(stacked, n);
    stacked_obs
        .view_mut((0, 0), (n, n))
        .copy_from(&DenseMatrix::identity(n, n));
    stacked_obs.view_mut((n, 0), (m, n)).copy_from(h);
    stacked_obs.view_mut((n + m, 0), (q, n)).copy_from(a);
    saddle
        .view_mut((0, stacked), (stacked, n))
        .copy_from(&stacked_obs);
    saddle
        .view_mut((stacked, 0), (n, stacked))
        .copy_from(&stacked_obs.transpose());

    let mut stacked_z = DenseVector::zeros(stacked);
    stacked_z.rows_mut(0, n).copy_from(pred.mean());
    stacked_z.rows_mut(n, m).copy_from(z.value());
    stacked_z.rows_mut(n + m, q).copy_from(c.rhs());

    let pinv = matops::pseudo_inverse(&saddle, matops::default_pinv_tol(&saddle));
    let mean = pinv.view((stacked, 0), (n, stacked)) * stacked_z;
    let cov = matops::symmetrize(&(-pinv.view((stacked, stacked), (n, n)).into_owned()))?;
    Ok(ConstrainedUpdateResult::hard(
        StateEstimate::from_parts(mean, cov, pred.step()),
        ConstraintMethod::Fusion,
        c,
    ))
}

/// Linearizes `a(x) = b` about `x_ref` into `A x = b + A x_ref - a(x_ref)`, `A` the
/// jacobian at `x_ref`.
pub fn linearize(nc: &NonlinearConstraint, x_ref: &DenseVector) -> Result<EqualityConstraint> {
    let jac = nc.jacobian(x_ref);
    let q = jac.nrows();
    if jac.ncols() != x_ref.len() {
        return Err(Error::dims(
            "constraint jacobian columns",
            x_ref.len(),
            jac.ncols(),
        ));
    }
    let value = nc.eval(x_ref);
    if value.len() != q || nc.rhs().len() != q {
        return Err(Error::dims("constraint value", q, value.len()));
    }
    let rhs = nc.rhs() + &jac * x_ref - value;
    EqualityConstraint::new(jac, rhs).map_err(|e| match e {
        Error::RankDeficientConstraint { rank, rows } => {
            Error::RankDeficientJacobian { rank, rows }
        }
        other => other,
    })
}
