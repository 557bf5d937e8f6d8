//! Dense row-major matrices and the small set of linear-algebra kernels the
//! quantizer needs: matrix product, damped Gram ("Hessian") construction,
//! upper Cholesky factorization, and SPD inversion.
//!
//! Everything is `f64` internally and fully deterministic: accumulations run
//! left to right in a fixed order, and there is no internal parallelism, so
//! identical inputs give bit-identical outputs on every run.

use crate::error::{Error, Result};

// ── Matrix ──────────────────────────────────────────────────────────────────

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row-major data, validating the element count.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "from_vec",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor from nested rows; panics on ragged input,
    /// intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged row in Matrix::from_rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    /// Squared Frobenius norm, accumulated row-major left to right.
    pub fn frob_sq(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc
    }

    /// Frobenius norm of the elementwise difference.
    pub fn frob_dist(&self, other: &Matrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = a - b;
            acc += d * d;
        }
        acc.sqrt()
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ── Products ────────────────────────────────────────────────────────────────

/// `a * b` with the classic triple loop; the innermost accumulation runs over
/// `k` in ascending order for every output element, which fixes the floating
/// point result across runs and platforms.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.cols {
            let mut acc = 0.0;
            for (k, &aik) in arow.iter().enumerate() {
                acc += aik * b.at(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

// ── Hessian ─────────────────────────────────────────────────────────────────

/// Builds the damped second-moment matrix `2 X X^T + lambda I` from calibration
/// activations `x` (one column per calibration sample).
///
/// `lambda = damping_frac * mean(diag(2 X X^T))`, so damping scales with the
/// data and `damping_frac = 0` means none at all. The result is symmetric by
/// construction: the upper triangle is computed once and mirrored, making
/// `h[i][j]` and `h[j][i]` bit-identical.
///
/// Errors with [`Error::Singular`] when the calibration data is entirely zero,
/// since then no damping multiple can rescue invertibility.
pub fn hessian(x: &Matrix, damping_frac: f64) -> Result<Matrix> {
    if damping_frac < 0.0 || !damping_frac.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "damping_frac must be finite and >= 0, got {damping_frac}"
        )));
    }
    let d = x.rows;
    let mut h = Matrix::zeros(d, d);
    for i in 0..d {
        let xi = x.row(i);
        for j in i..d {
            let xj = x.row(j);
            let mut acc = 0.0;
            for (a, b) in xi.iter().zip(xj) {
                acc += a * b;
            }
            let v = 2.0 * acc;
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    let mut trace = 0.0;
    for i in 0..d {
        trace += h.at(i, i);
    }
    let mean_diag = trace / d as f64;
    if mean_diag == 0.0 {
        return Err(Error::Singular(
            "calibration data is all zero; the Gram matrix has no mass to damp".into(),
        ));
    }
    let lambda = damping_frac * mean_diag;
    for i in 0..d {
        let v = h.at(i, i) + lambda;
        h.set(i, i, v);
    }
    Ok(h)
}

// ── Cholesky ────────────────────────────────────────────────────────────────

/// Upper-triangular Cholesky factor `U` of a symmetric positive definite
/// matrix, satisfying `U^T U = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    upper: Matrix,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.upper.rows()
    }

    pub fn upper(&self) -> &Matrix {
        &self.upper
    }

    #[inline]
    pub fn diag(&self, j: usize) -> f64 {
        self.upper.at(j, j)
    }

    /// Row `j` of the factor restricted to columns `lo..hi`.
    #[inline]
    pub fn row_slice(&self, j: usize, lo: usize, hi: usize) -> &[f64] {
        &self.upper.row(j)[lo..hi]
    }
}

/// Factors a symmetric positive definite matrix as `U^T U` with `U` upper
/// triangular and a positive diagonal. Only the upper triangle of `a` is read.
///
/// A non-positive pivot aborts with [`Error::NotPositiveDefinite`] naming the
/// failing pivot index.
pub fn cholesky(a: &Matrix) -> Result<SpdFactor> {
    if a.rows != a.cols {
        return Err(Error::dims("cholesky", a.rows, a.cols));
    }
    let n = a.rows;
    let mut u = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let mut sum = a.at(i, j);
            for k in 0..i {
                sum -= u.at(k, i) * u.at(k, j);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: j });
                }
                u.set(j, j, sum.sqrt());
            } else {
                u.set(i, j, sum / u.at(i, i));
            }
        }
    }
    Ok(SpdFactor { upper: u })
}

/// Solves `U^T y = b` (forward substitution on the transposed upper factor).
pub fn solve_upper_transposed(f: &SpdFactor, b: &[f64]) -> Vec<f64> {
    let n = f.dim();
    assert_eq!(b.len(), n);
    let u = &f.upper;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= u.at(k, i) * y[k];
        }
        y[i] = acc / u.at(i, i);
    }
    y
}

/// Solves `U z = y` (backward substitution).
pub fn solve_upper(f: &SpdFactor, y: &[f64]) -> Vec<f64> {
    let n = f.dim();
    assert_eq!(y.len(), n);
    let u = &f.upper;
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in i + 1..n {
            acc -= u.at(i, k) * z[k];
        }
        z[i] = acc / u.at(i, i);
    }
    z
}

/// Inverts a symmetric positive definite matrix via its Cholesky factor and a
/// pair of triangular solves per unit column. The result is symmetrized by
/// mirroring the upper triangle so downstream factorizations see an exactly
/// symmetric matrix.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let f = cholesky(a)?;
    let n = f.dim();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let y = solve_upper_transposed(&f, &e);
        let z = solve_upper(&f, &y);
        e[j] = 0.0;
        for i in 0..n {
            inv.set(i, j, z[i]);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = inv.at(i, j);
            inv.set(j, i, v);
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force product oracle: same math, deliberately written as an
    /// independent index loop over fresh storage.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.at(i, k) * b.at(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        // Tiny deterministic generator; good enough for exercising kernels.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let unit = (state >> 11) as f64 / (1u64 << 53) as f64;
            data.push(unit * 4.0 - 2.0);
        }
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_spd(dim: usize, seed: u64) -> Matrix {
        let a = lcg_matrix(dim, dim, seed);
        let mut s = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += a.at(k, i) * a.at(k, j);
                }
                if i == j {
                    acc += dim as f64 * 0.05;
                }
                s.set(i, j, acc);
                s.set(j, i, acc);
            }
        }
        s
    }

    #[test]
    fn matmul_identity_is_identity() {
        let m = lcg_matrix(5, 5, 7);
        let out = matmul(&m, &Matrix::identity(5)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_small_literal() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out, Matrix::from_rows(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let a = lcg_matrix(5, 7, 11);
        let b = lcg_matrix(7, 3, 13);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn matmul_rejects_mismatched_shapes() {
        let a = lcg_matrix(2, 3, 1);
        let b = lcg_matrix(4, 2, 2);
        assert!(matches!(
            matmul(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hessian_of_identity_without_damping() {
        let h = hessian(&Matrix::identity(3), 0.0).unwrap();
        let mut want = Matrix::identity(3);
        for i in 0..3 {
            want.set(i, i, 2.0);
        }
        assert_eq!(h, want);
    }

    #[test]
    fn hessian_single_column() {
        let x = Matrix::from_rows(&[&[1.0], &[0.0]]);
        let h = hessian(&x, 0.0).unwrap();
        assert_eq!(h, Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]));
    }

    #[test]
    fn hessian_matches_reference_loops() {
        let x = lcg_matrix(4, 16, 3);
        let frac = 0.01;
        let h = hessian(&x, frac).unwrap();

        // Reference: explicit 2*X*X^T plus lambda on the diagonal.
        let mut gram = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..16 {
                    acc += x.at(i, k) * x.at(j, k);
                }
                gram.set(i, j, 2.0 * acc);
            }
        }
        let mut mean = 0.0;
        for i in 0..4 {
            mean += gram.at(i, i);
        }
        mean /= 4.0;
        for i in 0..4 {
            for j in 0..4 {
                let want = gram.at(i, j) + if i == j { frac * mean } else { 0.0 };
                assert!((h.at(i, j) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_rejects_all_zero_calibration() {
        let x = Matrix::zeros(3, 5);
        assert!(matches!(hessian(&x, 0.0), Err(Error::Singular(_))));
        assert!(matches!(hessian(&x, 0.01), Err(Error::Singular(_))));
    }

    #[test]
    fn cholesky_of_scaled_identity() {
        let mut a = Matrix::identity(2);
        a.set(0, 0, 4.0);
        a.set(1, 1, 4.0);
        let f = cholesky(&a).unwrap();
        assert_eq!(f.upper(), &Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]));
    }

    #[test]
    fn cholesky_small_literal() {
        let a = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&a).unwrap();
        assert!((f.upper().at(0, 0) - 2.0).abs() < 1e-15);
        assert!((f.upper().at(0, 1) - 1.0).abs() < 1e-15);
        assert!((f.upper().at(1, 1) - 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.upper().at(1, 0), 0.0);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let a = random_spd(8, 21);
        let f = cholesky(&a).unwrap();
        let rebuilt = matmul_oracle(&transpose(f.upper()), f.upper());
        let rel = rebuilt.frob_dist(&a) / a.frob_sq().sqrt();
        assert!(rel < 1e-10, "relative reconstruction error {rel}");
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn spd_inverse_of_scaled_identity() {
        let mut a = Matrix::identity(3);
        for i in 0..3 {
            a.set(i, i, 2.0);
        }
        let inv = spd_inverse(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert!((inv.at(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spd_inverse_small_literal() {
        let a = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let inv = spd_inverse(&a).unwrap();
        // det = 8, inverse = [[3,-2],[-2,4]] / 8
        assert!((inv.at(0, 0) - 0.375).abs() < 1e-15);
        assert!((inv.at(0, 1) + 0.25).abs() < 1e-15);
        assert!((inv.at(1, 0) + 0.25).abs() < 1e-15);
        assert!((inv.at(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spd_inverse_residual_is_tiny() {
        let a = random_spd(16, 5);
        let inv = spd_inverse(&a).unwrap();
        let prod = matmul_oracle(&a, &inv);
        for i in 0..16 {
            for j in 0..16 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod.at(i, j) - want).abs() < 1e-8,
                    "residual at ({i},{j}): {}",
                    prod.at(i, j) - want
                );
            }
        }
    }

    #[test]
    fn spd_inverse_result_is_exactly_symmetric() {
        let a = random_spd(12, 9);
        let inv = spd_inverse(&a).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(inv.at(i, j).to_bits(), inv.at(j, i).to_bits());
            }
        }
    }

    fn transpose(m: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(m.cols(), m.rows());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                t.set(j, i, m.at(i, j));
            }
        }
        t
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hessian_is_bitwise_symmetric(seed in 0u64..1000, rows in 2usize..6, cols in 1usize..12) {
            let x = lcg_matrix(rows, cols, seed.wrapping_add(1));
            if let Ok(h) = hessian(&x, 0.01) {
                for i in 0..rows {
                    for j in 0..rows {
                        prop_assert_eq!(h.at(i, j).to_bits(), h.at(j, i).to_bits());
                    }
                }
            }
        }

        #[test]
        fn cholesky_roundtrips_random_spd(seed in 0u64..1000, dim in 2usize..9) {
            let a = random_spd(dim, seed.wrapping_add(3));
            let f = cholesky(&a).unwrap();
            let rebuilt = matmul_oracle(&transpose(f.upper()), f.upper());
            let rel = rebuilt.frob_dist(&a) / a.frob_sq().sqrt();
            prop_assert!(rel < 1e-8, "relative error {}", rel);
        }
    }
}
