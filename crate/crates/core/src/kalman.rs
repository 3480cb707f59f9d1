//! Unconstrained discrete-time Kalman filter.
//!
//! Two equivalent update routes are provided: the gain recursion with the Joseph-form
//! covariance ([`update_joseph`]) and the weighted least-squares fusion of the prediction
//! with the measurement ([`update_fusion`]). Every covariance leaving this module has been
//! symmetrized.

use crate::error::{Error, Result};
use crate::matops::{self, DenseMatrix, DenseVector};

/// Relative symmetry tolerance checked by [`StateEstimate::new`].
const SYMMETRY_TOL: f64 = 1e-9;
/// PSD tolerance checked by [`StateEstimate::new`], scaled by the trace.
const PSD_TOL: f64 = 1e-9;

/// Mean and error covariance of the state at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    mean: DenseVector,
    covariance: DenseMatrix,
    step: u64,
}

impl StateEstimate {
    /// Validates shape, finiteness, symmetry and positive semi-definiteness.
    pub fn new(mean: DenseVector, covariance: DenseMatrix, step: u64) -> Result<Self> {
        matops::ensure_square(&covariance, "state covariance")?;
        if covariance.nrows() != mean.len() {
            return Err(Error::dims(
                "state covariance",
                format!("{0}x{0}", mean.len()),
                format!("{0}x{0}", covariance.nrows()),
            ));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "state mean",
            });
        }
        matops::ensure_finite(&covariance, "state covariance")?;
        let scale = covariance.norm().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).norm() > SYMMETRY_TOL * scale {
            return Err(Error::SingularCovariance {
                context: "state covariance is not symmetric",
            });
        }
        if matops::min_eigenvalue(&covariance)? < -PSD_TOL * covariance.trace().abs() {
            return Err(Error::SingularCovariance {
                context: "state covariance is not positive semi-definite",
            });
        }
        Ok(Self {
            mean,
            covariance,
            step,
        })
    }

    /// Skips validation; used for values produced by the filter recursions.
    pub(crate) fn from_parts(mean: DenseVector, covariance: DenseMatrix, step: u64) -> Self {
        Self {
            mean,
            covariance,
            step,
        }
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn covariance(&self) -> &DenseMatrix {
        &self.covariance
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (DenseVector, DenseMatrix, u64) {
        (self.mean, self.covariance, self.step)
    }
}

/// Transition, process noise, observation and measurement noise for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    transition: DenseMatrix,
    process_noise: DenseMatrix,
    observation: DenseMatrix,
    measurement_noise: DenseMatrix,
}

impl SystemModel {
    pub fn new(
        transition: DenseMatrix,
        process_noise: DenseMatrix,
        observation: DenseMatrix,
        measurement_noise: DenseMatrix,
    ) -> Result<Self> {
        matops::ensure_square(&transition, "transition")?;
        let n = transition.nrows();
        let m = observation.nrows();
        if process_noise.shape() != (n, n) {
            return Err(Error::dims(
                "process noise",
                format!("{n}x{n}"),
                format!("{}x{}", process_noise.nrows(), process_noise.ncols()),
            ));
        }
        if observation.ncols() != n {
            return Err(Error::dims("observation columns", n, observation.ncols()));
        }
        if measurement_noise.shape() != (m, m) {
            return Err(Error::dims(
                "measurement noise",
                format!("{m}x{m}"),
                format!(
                    "{}x{}",
                    measurement_noise.nrows(),
                    measurement_noise.ncols()
                ),
            ));
        }
        for (mat, ctx) in [
            (&transition, "transition"),
            (&process_noise, "process noise"),
            (&observation, "observation"),
            (&measurement_noise, "measurement noise"),
        ] {
            matops::ensure_finite(mat, ctx)?;
        }
        for (mat, ctx) in [
            (&process_noise, "process noise is not symmetric PSD"),
            (&measurement_noise, "measurement noise is not symmetric PSD"),
        ] {
            let scale = mat.norm().max(f64::MIN_POSITIVE);
            let asym = (mat - mat.transpose()).norm();
            if asym > SYMMETRY_TOL * scale
                || matops::min_eigenvalue(mat)? < -PSD_TOL * mat.trace().abs()
            {
                return Err(Error::SingularCovariance { context: ctx });
            }
        }
        Ok(Self {
            transition,
            process_noise,
            observation,
            measurement_noise,
        })
    }

    pub fn transition(&self) -> &DenseMatrix {
        &self.transition
    }

    pub fn process_noise(&self) -> &DenseMatrix {
        &self.process_noise
    }

    pub fn observation(&self) -> &DenseMatrix {
        &self.observation
    }

    pub fn measurement_noise(&self) -> &DenseMatrix {
        &self.measurement_noise
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub(crate) fn check_state(&self, est: &StateEstimate) -> Result<()> {
        if est.dim() != self.state_dim() {
            return Err(Error::dims("state vs model", self.state_dim(), est.dim()));
        }
        Ok(())
    }

    pub(crate) fn check_measurement(&self, z: &Measurement) -> Result<()> {
        if z.value.len() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement vs model",
                self.measurement_dim(),
                z.value.len(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    value: DenseVector,
    step: u64,
}

impl Measurement {
    pub fn new(value: DenseVector, step: u64) -> Result<Self> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "measurement",
            });
        }
        Ok(Self { value, step })
    }

    pub fn value(&self) -> &DenseVector {
        &self.value
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Residual, residual covariance and optimal gain of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStats {
    pub residual: DenseVector,
    pub residual_cov: DenseMatrix,
    pub gain: DenseMatrix,
    residual_cov_inv: DenseMatrix,
}

impl InnovationStats {
    pub fn residual_cov_inverse(&self) -> &DenseMatrix {
        &self.residual_cov_inv
    }

    /// `nu' S^-1 nu`.
    pub fn weighted_residual_norm(&self) -> f64 {
        self.residual
            .dot(&(&self.residual_cov_inv * &self.residual))
    }
}

/// `x = F x`, `P = F P F' + Q`, symmetrized; the step advances by one.
pub fn predict(est: &StateEstimate, model: &SystemModel) -> Result<StateEstimate> {
    model.check_state(est)?;
    let f = &model.transition;
    let mean = f * &est.mean;
    let cov = f * &est.covariance * f.transpose() + &model.process_noise;
    Ok(StateEstimate::from_parts(
        mean,
        matops::symmetrize(&cov)?,
        est.step + 1,
    ))
}

/// Residual `z - H x`, its covariance `H P H' + R` and the gain `P H' S^-1`.
pub fn innovate(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
) -> Result<InnovationStats> {
    model.check_state(pred)?;
    model.check_measurement(z)?;
    let h = &model.observation;
    let residual = &z.value - h * &pred.mean;
    let ph_t = &pred.covariance * h.transpose();
    let residual_cov = matops::symmetrize(&(h * &ph_t + &model.measurement_noise))?;
    let residual_cov_inv =
        matops::spd_inverse(&residual_cov).map_err(|s| Error::SingularInnovationCovariance {
            condition: s.condition,
        })?;
    let gain = ph_t * &residual_cov_inv;
    Ok(InnovationStats {
        residual,
        residual_cov,
        gain,
        residual_cov_inv,
    })
}

/// Joseph form `(I - K H) P (I - K H)' + K R K'`, symmetrized.
pub fn joseph_covariance(
    pred_cov: &DenseMatrix,
    gain: &DenseMatrix,
    observation: &DenseMatrix,
    measurement_noise: &DenseMatrix,
) -> DenseMatrix {
    let n = pred_cov.nrows();
    let i_kh = DenseMatrix::identity(n, n) - gain * observation;
    let cov = &i_kh * pred_cov * i_kh.transpose() + gain * measurement_noise * gain.transpose();
    (&cov + cov.transpose()) * 0.5
}

/// `(I - K H) P`, with no symmetrization. Only valid for the optimal gain.
pub fn simple_form_covariance(
    pred_cov: &DenseMatrix,
    gain: &DenseMatrix,
    observation: &DenseMatrix,
) -> DenseMatrix {
    let n = pred_cov.nrows();
    (DenseMatrix::identity(n, n) - gain * observation) * pred_cov
}

/// Gain-form measurement update. The innovation statistics are returned so constrained
/// methods can reuse them.
pub fn update_joseph(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
) -> Result<(StateEstimate, InnovationStats)> {
    let innov = innovate(pred, z, model)?;
    let mean = &pred.mean + &innov.gain * &innov.residual;
    let cov = joseph_covariance(
        &pred.covariance,
        &innov.gain,
        &model.observation,
        &model.measurement_noise,
    );
    Ok((StateEstimate::from_parts(mean, cov, pred.step), innov))
}

/// Weighted least-squares fusion of the prediction with the measurement.
///
/// Stacks `[x_pred; z] = [I; H] x + noise` with block-diagonal noise covariance
/// `blkdiag(P, R)` and returns the least-squares solution with its covariance.
pub fn update_fusion(
    pred: &StateEstimate,
    z: &Measurement,
    model: &SystemModel,
) -> Result<StateEstimate> {
    model.check_state(pred)?;
    model.check_measurement(z)?;
    let n = pred.dim();
    let m = model.measurement_dim();
    if m == 0 {
        return Err(Error::dims("fusion measurement", "at least 1 row", 0));
    }
    let mut stacked_obs = DenseMatrix::zeros(n + m, n);
    stacked_obs
        .view_mut((0, 0), (n, n))
        .copy_from(&DenseMatrix::identity(n, n));
    stacked_obs
        .view_mut((n, 0), (m, n))
        .copy_from(&model.observation);

    let mut stacked_z = DenseVector::zeros(n + m);
    stacked_z.rows_mut(0, n).copy_from(&pred.mean);
    stacked_z.rows_mut(n, m).copy_from(&z.value);

    let pred_info =
        matops::spd_inverse(&pred.covariance).map_err(|_| Error::SingularCovariance {
            context: "fusion prior covariance",
        })?;
    let meas_info =
        matops::spd_inverse(&model.measurement_noise).map_err(|_| Error::SingularCovariance {
            context: "fusion measurement noise",
        })?;
    let mut noise_info = DenseMatrix::zeros(n + m, n + m);
    noise_info.view_mut((0, 0), (n, n)).copy_from(&pred_info);
    noise_info.view_mut((n, n), (m, m)).copy_from(&meas_info);

    let ht_rinv = stacked_obs.transpose() * &noise_info;
    let information = &ht_rinv * &stacked_obs;
    let cov = matops::spd_inverse(&information).map_err(|_| Error::SingularCovariance {
        context: "fusion information matrix",
    })?;
    let mean = &cov * (&ht_rinv * stacked_z);
    Ok(StateEstimate::from_parts(mean, cov, pred.step))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
        matops::dense(rows, cols, data).unwrap()
    }

    fn est(mean: &[f64], cov: DenseMatrix) -> StateEstimate {
        StateEstimate::new(DenseVector::from_column_slice(mean), cov, 0).unwrap()
    }

    fn meas(v: &[f64]) -> Measurement {
        Measurement::new(DenseVector::from_column_slice(v), 1).unwrap()
    }

    fn planar_model(r: f64) -> SystemModel {
        SystemModel::new(
            DenseMatrix::identity(2, 2),
            DenseMatrix::zeros(2, 2),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[r]),
        )
        .unwrap()
    }

    #[test]
    fn predict_identity_dynamics() {
        let e = est(&[1.0, -2.0], mat(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let p = predict(&e, &planar_model(1.0)).unwrap();
        assert_eq!(p.mean(), e.mean());
        assert_eq!(p.covariance(), e.covariance());
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn predict_constant_velocity() {
        let model = SystemModel::new(
            mat(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DenseMatrix::zeros(2, 2),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[1.0]),
        )
        .unwrap();
        let p = predict(&est(&[1.0, 2.0], DenseMatrix::identity(2, 2)), &model).unwrap();
        assert_eq!(p.mean().as_slice(), &[3.0, 2.0]);
        assert_eq!(p.covariance(), &mat(2, 2, &[2.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn predict_pure_noise() {
        let q0 = mat(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let model = SystemModel::new(
            DenseMatrix::zeros(2, 2),
            q0.clone(),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[1.0]),
        )
        .unwrap();
        let p = predict(&est(&[4.0, 5.0], DenseMatrix::identity(2, 2)), &model).unwrap();
        assert_eq!(p.mean().as_slice(), &[0.0, 0.0]);
        assert_eq!(p.covariance(), &q0);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let e = est(&[1.0], mat(1, 1, &[1.0]));
        assert!(matches!(
            predict(&e, &planar_model(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn innovate_scalar_and_planar() {
        let scalar = SystemModel::new(
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
        )
        .unwrap();
        let s = innovate(&est(&[0.0], mat(1, 1, &[1.0])), &meas(&[2.0]), &scalar).unwrap();
        assert_eq!(s.residual[0], 2.0);
        assert_eq!(s.residual_cov[(0, 0)], 2.0);
        assert!((s.gain[(0, 0)] - 0.5).abs() < 1e-15);

        let p = innovate(
            &est(&[0.0, 0.0], DenseMatrix::identity(2, 2)),
            &meas(&[2.0]),
            &planar_model(1.0),
        )
        .unwrap();
        assert_eq!(p.residual[0], 2.0);
        assert_eq!(p.residual_cov[(0, 0)], 2.0);
        assert!((&p.gain - mat(2, 1, &[0.5, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn innovate_rejects_degenerate() {
        let model = SystemModel::new(
            DenseMatrix::identity(2, 2),
            DenseMatrix::zeros(2, 2),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let e = est(&[0.0, 0.0], mat(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert!(matches!(
            innovate(&e, &meas(&[1.0]), &model),
            Err(Error::SingularInnovationCovariance { .. })
        ));
    }

    #[test]
    fn joseph_update_examples() {
        let scalar = SystemModel::new(
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
        )
        .unwrap();
        let (post, _) =
            update_joseph(&est(&[0.0], mat(1, 1, &[1.0])), &meas(&[2.0]), &scalar).unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 1e-15);
        assert!((post.covariance()[(0, 0)] - 0.5).abs() < 1e-15);

        let prior = est(&[0.0, 0.0], DenseMatrix::identity(2, 2));
        let (post, innov) = update_joseph(&prior, &meas(&[2.0]), &planar_model(1.0)).unwrap();
        assert!((post.mean() - DenseVector::from_column_slice(&[1.0, 0.0])).norm() < 1e-15);
        assert!((post.covariance() - mat(2, 2, &[0.5, 0.0, 0.0, 1.0])).norm() < 1e-15);
        let simple = simple_form_covariance(
            prior.covariance(),
            &innov.gain,
            planar_model(1.0).observation(),
        );
        assert!(matops::relative_diff(post.covariance(), &simple) < 1e-15);
    }

    #[test]
    fn joseph_update_uninformative_limit() {
        let prior = est(&[0.3, -1.0], mat(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let (post, _) = update_joseph(&prior, &meas(&[40.0]), &planar_model(1e12)).unwrap();
        assert!((post.mean() - prior.mean()).norm() <= 1e-3 * prior.mean().norm());
        assert!(matops::relative_diff(post.covariance(), prior.covariance()) <= 1e-3);
    }

    #[test]
    fn fusion_matches_joseph() {
        let prior = est(&[0.2, 1.0], mat(2, 2, &[2.0, 0.4, 0.4, 0.7]));
        let model = SystemModel::new(
            DenseMatrix::identity(2, 2),
            DenseMatrix::zeros(2, 2),
            mat(1, 2, &[1.0, -0.5]),
            mat(1, 1, &[0.3]),
        )
        .unwrap();
        let fused = update_fusion(&prior, &meas(&[1.5]), &model).unwrap();
        let (joseph, _) = update_joseph(&prior, &meas(&[1.5]), &model).unwrap();
        assert!((fused.mean() - joseph.mean()).norm() <= 1e-12);
        assert!(matops::relative_diff(fused.covariance(), joseph.covariance()) <= 1e-12);
    }

    #[test]
    fn fusion_scalar_and_empty() {
        let scalar = SystemModel::new(
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
        )
        .unwrap();
        let fused = update_fusion(&est(&[0.0], mat(1, 1, &[1.0])), &meas(&[2.0]), &scalar).unwrap();
        assert!((fused.mean()[0] - 1.0).abs() < 1e-15);
        assert!((fused.covariance()[(0, 0)] - 0.5).abs() < 1e-15);

        let empty = SystemModel::new(
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
            DenseMatrix::zeros(0, 1),
            DenseMatrix::zeros(0, 0),
        )
        .unwrap();
        let z = Measurement::new(DenseVector::zeros(0), 1).unwrap();
        assert!(matches!(
            update_fusion(&est(&[0.0], mat(1, 1, &[1.0])), &z, &empty),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn state_estimate_validation() {
        let bad = StateEstimate::new(
            DenseVector::from_column_slice(&[0.0, 0.0]),
            mat(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            0,
        );
        assert!(bad.is_err());
        let asym = StateEstimate::new(
            DenseVector::from_column_slice(&[0.0, 0.0]),
            mat(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            0,
        );
        assert!(asym.is_err());
    }
}
