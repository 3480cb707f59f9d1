//! Dense linear-algebra substrate shared by every filter.
//!
//! Matrices are plain [`nalgebra::DMatrix<f64>`] values. The problems handled here are small
//! (state dimensions in the tens at most), so everything is dense and factorizations are
//! recomputed on demand rather than cached.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Condition estimate above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Raised by the checked inverses; callers map it onto a domain-specific [`Error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub condition: f64,
}

/// Builds a matrix from row-major data, rejecting non-finite entries.
pub fn dense(rows: usize, cols: usize, row_major: &[f64]) -> Result<DenseMatrix> {
    if row_major.len() != rows * cols {
        return Err(Error::dims(
            "dense matrix data",
            format!("{} entries", rows * cols),
            format!("{} entries", row_major.len()),
        ));
    }
    let m = DenseMatrix::from_row_slice(rows, cols, row_major);
    ensure_finite(&m, "dense matrix data")?;
    Ok(m)
}

pub fn ensure_finite(m: &DenseMatrix, context: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

pub fn ensure_square(m: &DenseMatrix, context: &'static str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            context,
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Right Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (m, n) = a.shape();
    let (p, q) = b.shape();
    let mut out = DenseMatrix::zeros(m * p, n * q);
    for i in 0..m {
        for j in 0..n {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * p, j * q), (p, q)).copy_from(&(b * s));
        }
    }
    out
}

/// Stacks the columns of `a`, first column on top.
pub fn vec(a: &DenseMatrix) -> DenseVector {
    let (m, n) = a.shape();
    let mut out = DenseVector::zeros(m * n);
    for j in 0..n {
        for i in 0..m {
            out[j * m + i] = a[(i, j)];
        }
    }
    out
}

/// Inverse of [`vec`].
pub fn unvec(v: &DenseVector, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::dims("unvec", rows * cols, v.len()));
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

/// Returns `(P + P') / 2`.
pub fn symmetrize(p: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_square(p, "symmetrize")?;
    Ok((p + p.transpose()) * 0.5)
}

/// Smallest eigenvalue of the symmetric part of `p`.
pub fn min_eigenvalue(p: &DenseMatrix) -> Result<f64> {
    let s = symmetrize(p)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    Ok(SymmetricEigen::new(s).eigenvalues.min())
}

/// Max-row-sum norm.
pub fn inf_norm(m: &DenseMatrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `||P - P'||_inf`.
pub fn asymmetry(p: &DenseMatrix) -> f64 {
    inf_norm(&(p - p.transpose()))
}

/// Ratio of extreme singular values; infinite for rank-deficient input.
pub fn condition_number(m: &DenseMatrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = singular_values(m);
    let (max, min) = (sv.max(), sv.min());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank with singular values below `tol * sigma_max` treated as zero.
pub fn rank(m: &DenseMatrix, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let cut = tol * sv.max();
    sv.iter().filter(|&&s| s > cut).count()
}

/// General inverse, rejected when the SVD condition estimate exceeds [`MAX_CONDITION`].
pub fn checked_inverse(m: &DenseMatrix) -> std::result::Result<DenseMatrix, Singular> {
    debug_assert!(m.is_square());
    if m.is_empty() {
        return Ok(m.clone());
    }
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Singular { condition });
    }
    m.clone().try_inverse().ok_or(Singular { condition })
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
///
/// The input is symmetrized first. The condition estimate comes from the symmetric
/// eigenvalues, so an indefinite input reports an infinite condition.
pub fn spd_inverse(m: &DenseMatrix) -> std::result::Result<DenseMatrix, Singular> {
    debug_assert!(m.is_square());
    if m.is_empty() {
        return Ok(m.clone());
    }
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let (max, min) = (eig.max(), eig.min());
    let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
    if !(condition <= MAX_CONDITION) {
        return Err(Singular { condition });
    }
    let chol = s.cholesky().ok_or(Singular { condition })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Singular triplets `(sigma, u, v)` with `sigma > 0`, in descending order, read off the
/// symmetric eigendecomposition of `[[0, M], [M', 0]]`: its eigenpairs are `+-sigma` with
/// vectors `(u; +-v) / sqrt(2)`, plus `|rows - cols|` zeros.
///
/// nalgebra's bidiagonal SVD occasionally returns factors that do not reconstruct the
/// input (roughly one KKT matrix in a thousand in our tests); its symmetric eigensolver
/// does not show the problem, so all singular values here go through it.
struct SingularTriplets {
    values: Vec<f64>,
    left: Vec<DenseVector>,
    right: Vec<DenseVector>,
}

fn jordan_wielandt(m: &DenseMatrix, vectors: bool) -> SingularTriplets {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let mut jw = DenseMatrix::zeros(rows + cols, rows + cols);
    jw.view_mut((0, rows), (rows, cols)).copy_from(m);
    jw.view_mut((rows, 0), (cols, rows))
        .copy_from(&m.transpose());
    let eig = SymmetricEigen::new(jw);
    let mut order: Vec<usize> = (0..rows + cols).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut out = SingularTriplets {
        values: Vec::with_capacity(k),
        left: Vec::new(),
        right: Vec::new(),
    };
    for &i in order.iter().take(k) {
        out.values.push(eig.eigenvalues[i].max(0.0));
        if vectors {
            let w = eig.eigenvectors.column(i);
            out.left.push(w.rows(0, rows) * std::f64::consts::SQRT_2);
            out.right
                .push(w.rows(rows, cols) * std::f64::consts::SQRT_2);
        }
    }
    out
}

/// Singular values in descending order.
pub fn singular_values(m: &DenseMatrix) -> DenseVector {
    DenseVector::from_vec(jordan_wielandt(m, false).values)
}

/// Default truncation tolerance for [`pseudo_inverse`]: `max(rows, cols) * eps`.
pub fn default_pinv_tol(m: &DenseMatrix) -> f64 {
    m.nrows().max(m.ncols()).max(1) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudo-inverse via the SVD. Singular values at or below
/// `tol * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DenseMatrix, tol: f64) -> DenseMatrix {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return DenseMatrix::zeros(cols, rows);
    }
    let sv = jordan_wielandt(m, true);
    let cut = tol * sv.values.first().copied().unwrap_or(0.0);
    let mut out = DenseMatrix::zeros(cols, rows);
    for ((&s, u), v) in sv.values.iter().zip(&sv.left).zip(&sv.right) {
        if s > cut && s > 0.0 {
            out += v * u.transpose() / s;
        }
    }
    out
}

/// The blocks of a saddle-point matrix `[[A, B'], [B, -C]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePointBlocks {
    a_block: DenseMatrix,
    b_block: DenseMatrix,
    c_block: DenseMatrix,
}

impl SaddlePointBlocks {
    pub fn new(a_block: DenseMatrix, b_block: DenseMatrix, c_block: DenseMatrix) -> Result<Self> {
        ensure_square(&a_block, "saddle A block")?;
        ensure_square(&c_block, "saddle C block")?;
        if b_block.shape() != (c_block.nrows(), a_block.ncols()) {
            return Err(Error::dims(
                "saddle B block",
                format!("{}x{}", c_block.nrows(), a_block.ncols()),
                format!("{}x{}", b_block.nrows(), b_block.ncols()),
            ));
        }
        for (m, ctx) in [
            (&a_block, "saddle A block"),
            (&b_block, "saddle B block"),
            (&c_block, "saddle C block"),
        ] {
            ensure_finite(m, ctx)?;
        }
        Ok(Self {
            a_block,
            b_block,
            c_block,
        })
    }

    pub fn a_block(&self) -> &DenseMatrix {
        &self.a_block
    }

    pub fn b_block(&self) -> &DenseMatrix {
        &self.b_block
    }

    pub fn c_block(&self) -> &DenseMatrix {
        &self.c_block
    }

    /// Assembles the full `[[A, B'], [B, -C]]` matrix.
    pub fn assemble(&self) -> DenseMatrix {
        let na = self.a_block.nrows();
        let nb = self.c_block.nrows();
        let mut m = DenseMatrix::zeros(na + nb, na + nb);
        m.view_mut((0, 0), (na, na)).copy_from(&self.a_block);
        m.view_mut((0, na), (na, nb))
            .copy_from(&self.b_block.transpose());
        m.view_mut((na, 0), (nb, na)).copy_from(&self.b_block);
        m.view_mut((na, na), (nb, nb)).copy_from(&(-&self.c_block));
        m
    }
}

/// The four blocks of an inverted saddle-point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleInverseBlocks {
    pub upper_left: DenseMatrix,
    pub upper_right: DenseMatrix,
    pub lower_left: DenseMatrix,
    pub lower_right: DenseMatrix,
}

impl SaddleInverseBlocks {
    pub fn assemble(&self) -> DenseMatrix {
        let na = self.upper_left.nrows();
        let nb = self.lower_right.nrows();
        let mut m = DenseMatrix::zeros(na + nb, na + nb);
        m.view_mut((0, 0), (na, na)).copy_from(&self.upper_left);
        m.view_mut((0, na), (na, nb)).copy_from(&self.upper_right);
        m.view_mut((na, 0), (nb, na)).copy_from(&self.lower_left);
        m.view_mut((na, na), (nb, nb)).copy_from(&self.lower_right);
        m
    }
}

/// Block inverse of a saddle-point matrix through the Schur complement
/// `J = -(C + B A^-1 B')`.
pub fn saddle_inverse(blocks: &SaddlePointBlocks) -> Result<SaddleInverseBlocks> {
    let a_inv = checked_inverse(&blocks.a_block).map_err(|s| Error::SingularBlock {
        block: "A",
        condition: s.condition,
    })?;
    let b = &blocks.b_block;
    let a_inv_bt = &a_inv * b.transpose();
    let schur = -(&blocks.c_block + b * &a_inv_bt);
    let j_inv = checked_inverse(&schur).map_err(|s| Error::SingularBlock {
        block: "Schur complement",
        condition: s.condition,
    })?;
    let upper_right = -(&a_inv_bt * &j_inv);
    let lower_left = -(&j_inv * b * &a_inv);
    let upper_left = &a_inv + &a_inv_bt * &j_inv * b * &a_inv;
    Ok(SaddleInverseBlocks {
        upper_left,
        upper_right,
        lower_left,
        lower_right: j_inv,
    })
}

/// `||a - b||_F / ||b||_F`, or the absolute difference when `b` is zero.
pub fn relative_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
        dense(rows, cols, data).unwrap()
    }

    #[test]
    fn kron_examples() {
        let swap = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            kron(&swap, &m(1, 1, &[2.0])),
            m(2, 2, &[0.0, 2.0, 2.0, 0.0])
        );
        assert_eq!(
            kron(&DenseMatrix::identity(2, 2), &DenseMatrix::identity(2, 2)),
            DenseMatrix::identity(4, 4)
        );
        // Worked by expanding a[i,j] * b block by block.
        let expected = m(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 2.0, //
                1.0, 0.0, 2.0, 0.0, //
                0.0, 3.0, 0.0, 4.0, //
                3.0, 0.0, 4.0, 0.0,
            ],
        );
        assert_eq!(kron(&m(2, 2, &[1.0, 2.0, 3.0, 4.0]), &swap), expected);
    }

    #[test]
    fn kron_matches_nalgebra() {
        let a = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let b = m(3, 2, &[2.0, 1.0, -1.0, 0.0, 5.0, 7.0]);
        assert_eq!(kron(&a, &b), a.kronecker(&b));
    }

    #[test]
    fn vec_examples() {
        assert_eq!(
            vec(&m(2, 2, &[1.0, 2.0, 3.0, 4.0])).as_slice(),
            &[1.0, 3.0, 2.0, 4.0]
        );
        let col = m(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(vec(&col).as_slice(), col.as_slice());
        assert_eq!(vec(&DenseMatrix::zeros(2, 2)).as_slice(), &[0.0; 4]);
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvec(&vec(&a), 2, 3).unwrap(), a);
    }

    #[test]
    fn dense_rejects_bad_input() {
        assert!(matches!(
            dense(2, 2, &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            dense(1, 2, &[1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn saddle_inverse_identity_case() {
        let i2 = DenseMatrix::identity(2, 2);
        let blocks =
            SaddlePointBlocks::new(i2.clone(), i2.clone(), DenseMatrix::zeros(2, 2)).unwrap();
        let inv = saddle_inverse(&blocks).unwrap();
        // Dense inverse of [[I, I], [I, 0]] is [[0, I], [I, -I]].
        let dense_inv = blocks.assemble().try_inverse().unwrap();
        assert!(relative_diff(&inv.assemble(), &dense_inv) < 1e-14);
        assert!(inv.upper_left.norm() < 1e-15);
        assert_eq!(inv.upper_right, i2);
        assert_eq!(inv.lower_left, i2);
        assert_eq!(inv.lower_right, -i2);
    }

    #[test]
    fn saddle_inverse_rejects_degenerate_schur() {
        let blocks = SaddlePointBlocks::new(
            DenseMatrix::identity(2, 2) * 2.0,
            DenseMatrix::zeros(2, 2),
            DenseMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(matches!(
            saddle_inverse(&blocks),
            Err(Error::SingularBlock {
                block: "Schur complement",
                ..
            })
        ));
    }

    #[test]
    fn saddle_blocks_check_shapes() {
        let err = SaddlePointBlocks::new(
            DenseMatrix::identity(3, 3),
            DenseMatrix::zeros(2, 2),
            DenseMatrix::zeros(2, 2),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pseudo_inverse_examples() {
        let i3 = DenseMatrix::identity(3, 3);
        assert!(relative_diff(&pseudo_inverse(&i3, default_pinv_tol(&i3)), &i3) < 1e-15);
        let d = m(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pseudo_inverse(&d, default_pinv_tol(&d));
        assert!((p - m(2, 2, &[0.5, 0.0, 0.0, 0.0])).norm() < 1e-15);
        let tall = m(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0, 0.0, -2.0]);
        let normal = (tall.transpose() * &tall).try_inverse().unwrap() * tall.transpose();
        assert!(relative_diff(&pseudo_inverse(&tall, default_pinv_tol(&tall)), &normal) < 1e-10);
    }

    #[test]
    fn symmetrize_examples() {
        assert_eq!(
            symmetrize(&m(2, 2, &[1.0, 0.1, 0.3, 1.0])).unwrap(),
            m(2, 2, &[1.0, 0.2, 0.2, 1.0])
        );
        let s = m(2, 2, &[2.0, 0.7, 0.7, 3.0]);
        assert_eq!(symmetrize(&s).unwrap(), s);
        assert_eq!(
            symmetrize(&m(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap(),
            DenseMatrix::zeros(2, 2)
        );
        assert!(matches!(
            symmetrize(&DenseMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((min_eigenvalue(&DenseMatrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-15);
        assert!((min_eigenvalue(&m(2, 2, &[3.0, 0.0, 0.0, -2.0])).unwrap() + 2.0).abs() < 1e-15);
        // Characteristic polynomial (2 - l)^2 - 1 has roots 1 and 3.
        assert!((min_eigenvalue(&m(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap() - 1.0).abs() < 1e-14);
        assert!(min_eigenvalue(&DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn checked_inverses_reject_singular() {
        let s = m(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(checked_inverse(&s).is_err());
        assert!(spd_inverse(&s).is_err());
        assert!(spd_inverse(&m(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        let p = m(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&p).unwrap();
        assert!((&p * inv - DenseMatrix::identity(2, 2)).norm() < 1e-15);
    }
}
