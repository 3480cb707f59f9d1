//! Brute-force references for the closed forms in [`crate::constrained`].
//!
//! Everything here assembles the full system and hands it to a generic dense solver. None
//! of it calls into the closed-form update paths, so agreement between the two is
//! meaningful evidence.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::constrained::EqualityConstraint;
use crate::error::{Error, Result};
use crate::kalman::{InnovationStats, Measurement, StateEstimate, SystemModel};
use crate::matops::{self, DenseMatrix, DenseVector};

/// Base seeds for the randomized suites. Instance `i` of a suite uses `seed + i`.
pub const PUBLISHED_SEEDS: &[(&str, u64)] = &[
    ("equivalence", 0x5eed_0001),
    ("feasibility", 0x5eed_0002),
    ("identities", 0x5eed_0003),
    ("fusion", 0x5eed_0004),
    ("dominance", 0x5eed_0005),
    ("monte-carlo", 0x5eed_0006),
];

pub fn published_seed(name: &str) -> u64 {
    PUBLISHED_SEEDS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .unwrap_or_else(|| panic!("no published seed named {name}"))
}

/// Dense restatement of the weighted projection problem.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub weight: DenseMatrix,
    pub constraint: EqualityConstraint,
    pub target: DenseVector,
}

fn dense_solve(m: DenseMatrix, rhs: &DenseVector) -> Result<DenseVector> {
    if !(matops::condition_number(&m) <= matops::MAX_CONDITION) {
        return Err(Error::SingularKkt);
    }
    m.lu().solve(rhs).ok_or(Error::SingularKkt)
}

/// Solves `[[2W, A'], [A, 0]] [x; lambda] = [2 W target; b]` and returns `x`.
pub fn dense_kkt_project(sys: &KktSystem) -> Result<DenseVector> {
    let n = sys.target.len();
    let a = sys.constraint.matrix();
    let q = a.nrows();
    if sys.weight.shape() != (n, n) || a.ncols() != n {
        return Err(Error::dims("kkt system", n, a.ncols()));
    }
    let mut kkt = DenseMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&sys.weight * 2.0));
    kkt.view_mut((0, n), (n, q)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (q, n)).copy_from(a);
    let mut rhs = DenseVector::zeros(n + q);
    rhs.rows_mut(0, n)
        .copy_from(&(&sys.weight * &sys.target * 2.0));
    rhs.rows_mut(n, q).copy_from(sys.constraint.rhs());
    let sol = dense_solve(kkt, &rhs)?;
    Ok(sol.rows(0, n).into_owned())
}

/// The restricted-gain saddle system `M [ell; lambda] = p`, assembled literally:
///
/// ```text
/// M = [[2 (S kron I), nu kron A'], [nu' kron A, 0]],   p = [0; gap]
/// ```
pub fn lagrange_system(
    innov: &InnovationStats,
    c: &EqualityConstraint,
    constraint_gap: &DenseVector,
) -> (DenseMatrix, DenseVector) {
    let a = c.matrix();
    let (q, n) = a.shape();
    let m = innov.residual.len();
    let nu = DenseMatrix::from_column_slice(m, 1, innov.residual.as_slice());
    let upper_left = matops::kron(&innov.residual_cov, &DenseMatrix::identity(n, n)) * 2.0;
    let upper_right = matops::kron(&nu, &a.transpose());
    let lower_left = matops::kron(&nu.transpose(), a);
    let size = m * n + q;
    let mut big = DenseMatrix::zeros(size, size);
    big.view_mut((0, 0), (m * n, m * n)).copy_from(&upper_left);
    big.view_mut((0, m * n), (m * n, q)).copy_from(&upper_right);
    big.view_mut((m * n, 0), (q, m * n)).copy_from(&lower_left);
    let mut p = DenseVector::zeros(size);
    p.rows_mut(m * n, q).copy_from(constraint_gap);
    (big, p)
}

/// Dense solve of [`lagrange_system`]; returns `(ell, lambda)`.
pub fn dense_lagrange_solve(
    innov: &InnovationStats,
    c: &EqualityConstraint,
    constraint_gap: &DenseVector,
) -> Result<(DenseVector, DenseVector)> {
    let (big, p) = lagrange_system(innov, c, constraint_gap);
    let mn = innov.residual.len() * c.state_dim();
    let sol = dense_solve(big, &p)?;
    Ok((
        sol.rows(0, mn).into_owned(),
        sol.rows(mn, c.rows()).into_owned(),
    ))
}

/// Dense inverse of an assembled matrix, for comparisons against block formulas.
pub fn dense_inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.clone().try_inverse().ok_or(Error::SingularKkt)
}

/// Random instance generators used by the randomized suites.
pub mod sample {
    use super::*;

    pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DenseVector {
        DenseVector::from_fn(len, |_, _| rng.sample(StandardNormal))
    }

    /// `G G' + 1e-3 I` with standard-normal `G`.
    pub fn spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DenseMatrix {
        let g = normal_matrix(rng, n, n);
        let p = &g * g.transpose() + DenseMatrix::identity(n, n) * 1e-3;
        (&p + p.transpose()) * 0.5
    }

    /// [`spd`] redrawn until its condition number is at most `max_condition`.
    pub fn spd_conditioned<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        max_condition: f64,
    ) -> DenseMatrix {
        loop {
            let p = spd(rng, n);
            if matops::condition_number(&p) <= max_condition {
                return p;
            }
        }
    }

    /// `q x n` matrix with orthonormal rows.
    pub fn orthonormal_rows<R: Rng + ?Sized>(rng: &mut R, q: usize, n: usize) -> DenseMatrix {
        assert!(q <= n);
        let g = normal_matrix(rng, n, q);
        let qr = g.qr();
        qr.q().columns(0, q).transpose()
    }

    pub fn constraint<R: Rng + ?Sized>(rng: &mut R, q: usize, n: usize) -> EqualityConstraint {
        let a = orthonormal_rows(rng, q, n);
        let b = normal_vector(rng, q);
        EqualityConstraint::new(a, b).expect("orthonormal rows have full row rank")
    }

    /// Square matrix with condition number at most `max_condition`.
    pub fn invertible<R: Rng + ?Sized>(rng: &mut R, n: usize, max_condition: f64) -> DenseMatrix {
        loop {
            let m = normal_matrix(rng, n, n);
            if matops::condition_number(&m) <= max_condition {
                return m;
            }
        }
    }

    /// One predicted estimate, model, measurement and constraint.
    #[derive(Debug, Clone)]
    pub struct Instance {
        pub pred: StateEstimate,
        pub model: SystemModel,
        pub z: Measurement,
        pub constraint: EqualityConstraint,
    }

    /// Draws an instance with `n` in `1..=max_n`, `m` in `1..=max_m`, `q` in `1..=min(n, max_q)`
    /// and predicted covariance condition at most `max_condition`.
    pub fn instance<R: Rng + ?Sized>(
        rng: &mut R,
        max_n: usize,
        max_m: usize,
        max_q: usize,
        max_condition: f64,
    ) -> Instance {
        let n = rng.random_range(1..=max_n);
        let m = rng.random_range(1..=max_m);
        let q = rng.random_range(1..=max_q.min(n));
        instance_with_dims(rng, n, m, q, max_condition)
    }

    pub fn instance_with_dims<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        m: usize,
        q: usize,
        max_condition: f64,
    ) -> Instance {
        let p = spd_conditioned(rng, n, max_condition);
        let mean = normal_vector(rng, n);
        let h = normal_matrix(rng, m, n);
        let r = spd_conditioned(rng, m, max_condition);
        let model = SystemModel::new(DenseMatrix::identity(n, n), DenseMatrix::zeros(n, n), h, r)
            .expect("generated model is consistent");
        let z = Measurement::new(normal_vector(rng, m) * 2.0, 1).expect("finite measurement");
        Instance {
            pred: StateEstimate::new(mean, p, 1).expect("generated covariance is SPD"),
            model,
            z,
            constraint: constraint(rng, q, n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman;

    fn v(data: &[f64]) -> DenseVector {
        DenseVector::from_column_slice(data)
    }

    fn line(a: &[f64], b: f64) -> EqualityConstraint {
        EqualityConstraint::new(DenseMatrix::from_row_slice(1, a.len(), a), v(&[b])).unwrap()
    }

    #[test]
    fn kkt_examples() {
        let sys = KktSystem {
            weight: DenseMatrix::identity(2, 2),
            constraint: line(&[1.0, 1.0], 1.0),
            target: v(&[1.0, 1.0]),
        };
        assert!((dense_kkt_project(&sys).unwrap() - v(&[0.5, 0.5])).norm() < 1e-15);

        let sys = KktSystem {
            weight: DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            constraint: line(&[1.0, 1.0], 0.0),
            target: v(&[1.0, 1.0]),
        };
        let x = dense_kkt_project(&sys).unwrap();
        assert!(sys.constraint.residual_norm(&x) < 1e-14);
        // Stationarity: 2 W (x - target) is parallel to A'.
        let grad = &sys.weight * (&x - &sys.target) * 2.0;
        assert!((grad[0] - grad[1]).abs() < 1e-10);

        let sys = KktSystem {
            weight: DenseMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            constraint: line(&[1.0, -1.0], 0.0),
            target: v(&[3.0, 3.0]),
        };
        assert!((dense_kkt_project(&sys).unwrap() - v(&[3.0, 3.0])).norm() < 1e-14);
    }

    #[test]
    fn lagrange_worked_instance() {
        let model = SystemModel::new(
            DenseMatrix::identity(2, 2),
            DenseMatrix::zeros(2, 2),
            DenseMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DenseMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let pred = StateEstimate::new(v(&[0.0, 0.0]), DenseMatrix::identity(2, 2), 0).unwrap();
        let z = Measurement::new(v(&[2.0]), 1).unwrap();
        let innov = kalman::innovate(&pred, &z, &model).unwrap();
        let c = line(&[1.0, 1.0], 0.0);
        // Unconstrained posterior mean is [1, 0], so b - A x = -1.
        let gap = v(&[-1.0]);
        let (ell, _) = dense_lagrange_solve(&innov, &c, &gap).unwrap();
        assert!((ell.clone() - v(&[-0.25, -0.25])).norm() < 1e-14);
        let (big, p) = lagrange_system(&innov, &c, &gap);
        let mut n = DenseVector::zeros(3);
        let (ell, lambda) = dense_lagrange_solve(&innov, &c, &gap).unwrap();
        n.rows_mut(0, 2).copy_from(&ell);
        n.rows_mut(2, 1).copy_from(&lambda);
        assert!((big * n - p).norm() < 1e-12);

        let (ell, lambda) = dense_lagrange_solve(&innov, &c, &v(&[0.0])).unwrap();
        assert_eq!(ell.norm() + lambda.norm(), 0.0);
    }
}
