//! Ground-truth simulation.

use eqkf::matops;
use eqkf::{DenseMatrix, DenseVector, Measurement, SystemModel};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ScenarioConfig;

/// Identifier of the generator recorded in reports.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `L` with `L L' = cov` for a PSD covariance, via the symmetric eigendecomposition so
/// singular noise covariances are allowed.
pub fn sqrt_psd(cov: &DenseMatrix) -> DenseMatrix {
    let eig = SymmetricEigen::new(matops::symmetrize(cov).expect("square covariance"));
    let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * DenseMatrix::from_diagonal(&scale)
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sqrt_cov: &DenseMatrix) -> DenseVector {
    let w = DenseVector::from_fn(sqrt_cov.ncols(), |_, _| rng.sample(StandardNormal));
    sqrt_cov * w
}

/// Truth states `x_0..x_N` and measurements `z_1..z_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub truth: Vec<DenseVector>,
    pub measurements: Vec<Measurement>,
}

struct NoiseFactors {
    process: DenseMatrix,
    measurement: DenseMatrix,
}

impl NoiseFactors {
    fn new(model: &SystemModel) -> Self {
        Self {
            process: sqrt_psd(model.process_noise()),
            measurement: sqrt_psd(model.measurement_noise()),
        }
    }
}

/// Simulates `x_k = proj(F x_{k-1} + u_k)`, `z_k = H x_k + v_k` starting from `x0`.
///
/// The projection is the identity-weighted correction onto the constraint set, so every
/// truth state is feasible. Per step the draws are the process noise followed by the
/// measurement noise.
pub fn simulate_from<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    x0: &DenseVector,
    rng: &mut R,
) -> eqkf::Result<Trajectory> {
    let factors: Vec<NoiseFactors> = config.models.iter().map(NoiseFactors::new).collect();
    let steps = config.steps as usize;
    let mut truth = Vec::with_capacity(steps + 1);
    let mut measurements = Vec::with_capacity(steps);
    truth.push(x0.clone());
    for k in 1..=config.steps {
        let idx = ((k - 1) % config.models.len() as u64) as usize;
        let (model, f) = (&config.models[idx], &factors[idx]);
        let prev = truth.last().expect("non-empty");
        let moved = model.transition() * prev + gaussian(rng, &f.process);
        let x = config.constraint.project_point(&moved)?;
        let z = model.observation() * &x + gaussian(rng, &f.measurement);
        measurements.push(Measurement::new(z, k)?);
        truth.push(x);
    }
    Ok(Trajectory {
        truth,
        measurements,
    })
}

/// [`simulate_from`] the configured initial truth with the configured seed.
pub fn simulate_truth(config: &ScenarioConfig) -> eqkf::Result<Trajectory> {
    simulate_from(config, &config.initial_truth, &mut rng(config.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn doc(q: &str, r: &str, constraint: &str) -> String {
        format!(
            r#"{{
                "name": "t", "steps": 50, "seed": 3,
                "model": {{"transition": [[1.0, 0.0], [0.0, 1.0]], "process_noise": {q},
                          "observation": [[1.0, 0.0], [0.0, 1.0]], "measurement_noise": {r}}},
                {constraint}
                "initial_truth": [0.0, 0.0],
                "initial_estimate": {{"mean": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]]}}
            }}"#
        )
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let c = load_config(&doc(
            "[[0.0, 0.0], [0.0, 0.0]]",
            "[[0.0, 0.0], [0.0, 0.0]]",
            "",
        ))
        .unwrap();
        let t = simulate_truth(&c).unwrap();
        for (k, z) in t.measurements.iter().enumerate() {
            assert_eq!(z.value(), &t.truth[k + 1]);
        }
    }

    #[test]
    fn truth_stays_on_constraint() {
        let c = load_config(&doc(
            "[[0.5, 0.0], [0.0, 0.5]]",
            "[[1.0, 0.0], [0.0, 1.0]]",
            r#""constraint": {"type": "linear", "matrix": [[1.0, 1.0]], "rhs": [0.0]},"#,
        ))
        .unwrap();
        let t = simulate_truth(&c).unwrap();
        assert!(t.truth.iter().all(|x| (x[0] + x[1]).abs() <= 1e-12));
        assert!(t.truth.iter().skip(1).any(|x| x.norm() > 0.1));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let c = load_config(&doc(
            "[[0.5, 0.1], [0.1, 0.5]]",
            "[[1.0, 0.0], [0.0, 1.0]]",
            "",
        ))
        .unwrap();
        assert_eq!(simulate_truth(&c).unwrap(), simulate_truth(&c).unwrap());
    }

    #[test]
    fn sqrt_of_singular_covariance() {
        let cov = DenseMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let l = sqrt_psd(&cov);
        assert!((&l * l.transpose() - cov).norm() < 1e-14);
    }
}
