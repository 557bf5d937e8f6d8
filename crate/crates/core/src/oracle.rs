//! Brute-force reference implementations.
//!
//! Everything here recomputes the engine's closed-form quantities from first
//! principles on deliberately separate code paths: dense Gaussian elimination
//! and Gauss-Jordan inversion instead of Cholesky, explicit KKT systems
//! instead of inverse-column formulas, and plain summation loops instead of
//! `matmul`. The only shared ingredient is the grid's rounding rule, which is
//! the definition both sides must agree on.
//!
//! Oracles are desk-scale by design: anything above [`MAX_ORACLE_DIM`]
//! columns is refused so a misconfigured benchmark cannot silently spend
//! hours in O(n^4) loops.
//!
//! Vector comparisons in reports store the two L2 norms in the value columns;
//! `rel_err` is always the gate: `max_k |c_k - b_k| / max(max_k |b_k|, 1e-12)`.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::engine;
use crate::error::{Error, Result};
use crate::grid::{grid_search, Granularity, QuantGrid};
use crate::instances;
use crate::mask::{score_all, MaskMatrix};
use crate::tensor::{hessian, spd_inverse, Matrix};

pub const MAX_ORACLE_DIM: usize = 64;

pub const DELTA_TOLERANCE: f64 = 1e-8;
pub const SCORE_TOLERANCE: f64 = 1e-6;
pub const LAYER_ERROR_TOLERANCE: f64 = 1e-8;

fn check_scale(dim: usize) -> Result<()> {
    if dim > MAX_ORACLE_DIM {
        return Err(Error::OracleScale { dim, max: MAX_ORACLE_DIM });
    }
    Ok(())
}

// ── Independent dense solvers ───────────────────────────────────────────────

/// Gaussian elimination with partial pivoting on a full copy of `a`.
fn solve_dense(a: &Matrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || rhs.len() != n {
        return Err(Error::dims("solve_dense", format!("{}x{}", a.rows(), a.cols()), rhs.len()));
    }
    let mut m = a.data().to_vec();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::Singular(format!("pivot vanished at column {col}")));
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f != 0.0 {
                for c in col..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= m[col * n + c] * x[c];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Gauss-Jordan inversion with partial pivoting.
fn invert_dense(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims("invert_dense", a.rows(), a.cols()));
    }
    let mut m = a.data().to_vec();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::Singular(format!("pivot vanished at column {col}")));
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
                let tmp = inv.at(col, c);
                inv.set(col, c, inv.at(piv, c));
                inv.set(piv, c, tmp);
            }
        }
        let d = m[col * n + col];
        for c in 0..n {
            m[col * n + c] /= d;
            inv.set(col, c, inv.at(col, c) / d);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f != 0.0 {
                for c in 0..n {
                    m[r * n + c] -= f * m[col * n + c];
                    inv.set(r, c, inv.at(r, c) - f * inv.at(col, c));
                }
            }
        }
    }
    Ok(inv)
}

/// `2 X X^T + lambda I` with plain nested loops, mirroring the damping
/// definition (`lambda = frac * mean Gram diagonal`) independently.
fn dense_hessian(x: &Matrix, damping_frac: f64) -> Matrix {
    let n = x.rows();
    let mut h = Matrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            let mut acc = 0.0;
            for t in 0..x.cols() {
                acc += x.at(p, t) * x.at(q, t);
            }
            h.set(p, q, 2.0 * acc);
        }
    }
    let mut trace = 0.0;
    for p in 0..n {
        trace += h.at(p, p);
    }
    let lambda = damping_frac * trace / n as f64;
    for p in 0..n {
        h.set(p, p, h.at(p, p) + lambda);
    }
    h
}

// ── Compensation oracle ─────────────────────────────────────────────────────

/// Minimizes `delta^T H delta` subject to `delta_j = -gap` by solving the
/// full (n+1)-dimensional KKT system with Gaussian elimination.
pub fn kkt_delta_oracle(h: &Matrix, j: usize, gap: f64) -> Result<Vec<f64>> {
    let n = h.rows();
    check_scale(n)?;
    if h.cols() != n {
        return Err(Error::dims("kkt_delta_oracle", h.rows(), h.cols()));
    }
    if j >= n {
        return Err(Error::InvalidConfig(format!("column {j} out of range for dim {n}")));
    }
    let mut kkt = Matrix::zeros(n + 1, n + 1);
    for a in 0..n {
        for b in 0..n {
            kkt.set(a, b, 2.0 * h.at(a, b));
        }
    }
    kkt.set(j, n, 1.0);
    kkt.set(n, j, 1.0);
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = -gap;
    let sol = solve_dense(&kkt, &rhs)?;
    Ok(sol[..n].to_vec())
}

/// Same quantity through a second independent route: explicit Gauss-Jordan
/// inverse of `H`, then `delta = -(gap / [H^-1]_jj) * H^-1[:, j]`.
pub fn kkt_delta_via_inverse(h: &Matrix, j: usize, gap: f64) -> Result<Vec<f64>> {
    let n = h.rows();
    check_scale(n)?;
    if j >= n {
        return Err(Error::InvalidConfig(format!("column {j} out of range for dim {n}")));
    }
    let hinv = invert_dense(h)?;
    let d = hinv.at(j, j);
    Ok((0..n).map(|k| -(gap / d) * hinv.at(k, j)).collect())
}

// ── Importance score oracle ─────────────────────────────────────────────────

/// True minimal increase in `||w X - w' X||^2` over all row updates `w'` that
/// force coordinate `j` onto the grid: builds the Gram matrix with raw loops,
/// solves the KKT system, and evaluates the error with an explicit sum.
///
/// Note the reported importance score is exactly half of this true minimum;
/// comparisons divide by two at the call site.
pub fn score_oracle(
    w_row: &[f64],
    x: &Matrix,
    grid: &QuantGrid,
    grid_row: usize,
    j: usize,
) -> Result<f64> {
    let dim = x.rows();
    check_scale(dim)?;
    if w_row.len() != dim {
        return Err(Error::dims("score_oracle", w_row.len(), dim));
    }
    if j >= dim {
        return Err(Error::InvalidConfig(format!("column {j} out of range for dim {dim}")));
    }
    let mut gram = Matrix::zeros(dim, dim);
    for p in 0..dim {
        for q in 0..dim {
            let mut acc = 0.0;
            for t in 0..x.cols() {
                acc += x.at(p, t) * x.at(q, t);
            }
            gram.set(p, q, acc);
        }
    }
    let (_, deq) = grid.quantize(grid_row, w_row[j]);
    let gap = w_row[j] - deq;

    let mut kkt = Matrix::zeros(dim + 1, dim + 1);
    for a in 0..dim {
        for b in 0..dim {
            kkt.set(a, b, 2.0 * gram.at(a, b));
        }
    }
    kkt.set(j, dim, 1.0);
    kkt.set(dim, j, 1.0);
    let mut rhs = vec![0.0; dim + 1];
    rhs[dim] = -gap;
    let delta = solve_dense(&kkt, &rhs)?;

    let mut err = 0.0;
    for t in 0..x.cols() {
        let mut acc = 0.0;
        for (k, d) in delta[..dim].iter().enumerate() {
            acc += d * x.at(k, t);
        }
        err += acc * acc;
    }
    Ok(err)
}

// ── Sequential unblocked reference ──────────────────────────────────────────

/// Column-by-column reference quantizer: for every column it re-inverts the
/// trailing Hessian submatrix from scratch and applies the textbook optimal
/// update to the remaining columns. No Cholesky factors, no blocking, no
/// lazy batching — this is the O(n^4) definition the engine must match.
pub fn unblocked_reference(
    w: &Matrix,
    x: &Matrix,
    mask: &MaskMatrix,
    grid: &QuantGrid,
    damping_frac: f64,
) -> Result<Matrix> {
    let rows = w.rows();
    let cols = w.cols();
    check_scale(cols)?;
    if x.rows() != cols {
        return Err(Error::dims("reference weights vs calibration", cols, x.rows()));
    }
    if mask.rows() != rows || mask.cols() != cols {
        return Err(Error::dims(
            "reference mask vs weights",
            format!("{}x{}", mask.rows(), mask.cols()),
            format!("{rows}x{cols}"),
        ));
    }
    let h = dense_hessian(x, damping_frac);
    let mut wq = w.clone();
    for j in 0..cols {
        let m = cols - j;
        let mut trailing = Matrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                trailing.set(a, b, h.at(j + a, j + b));
            }
        }
        let tinv = invert_dense(&trailing)?;
        let d = tinv.at(0, 0);
        for i in 0..rows {
            if mask.is_reserved(i, j) {
                // Reserved: the running value stays, nothing propagates.
                continue;
            }
            let v = wq.at(i, j);
            let (_, deq) = grid.quantize(i, v);
            let gap = v - deq;
            wq.set(i, j, deq);
            for k in 1..m {
                wq.set(i, j + k, wq.at(i, j + k) - gap * tinv.at(k, 0) / d);
            }
        }
    }
    Ok(wq)
}

/// Plain round-to-nearest on the given grid plus the calibration error
/// `||(W - What) X||^2` computed with raw loops. The no-compensation,
/// no-reservation baseline.
pub fn rtn_baseline(w: &Matrix, x: &Matrix, grid: &QuantGrid) -> Result<(Matrix, f64)> {
    if x.rows() != w.cols() {
        return Err(Error::dims("baseline weights vs calibration", w.cols(), x.rows()));
    }
    let mut what = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let (_, deq) = grid.quantize(i, w.at(i, j));
            what.set(i, j, deq);
        }
    }
    let mut err = 0.0;
    for i in 0..w.rows() {
        for t in 0..x.cols() {
            let mut acc = 0.0;
            for k in 0..w.cols() {
                acc += (w.at(i, k) - what.at(i, k)) * x.at(k, t);
            }
            err += acc * acc;
        }
    }
    Ok((what, err))
}

// ── Reports ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    CompensationDelta,
    ImportanceScore,
    LayerError,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Quantity::CompensationDelta => "compensation-delta",
            Quantity::ImportanceScore => "importance-score",
            Quantity::LayerError => "layer-error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct OracleRow {
    pub instance_id: String,
    pub quantity: Quantity,
    pub closed_form: f64,
    pub brute_force: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    rows: Vec<OracleRow>,
}

pub fn rel_err(closed: f64, brute: f64) -> f64 {
    (closed - brute).abs() / brute.abs().max(1e-12)
}

fn vec_rel_err(closed: &[f64], brute: &[f64]) -> f64 {
    assert_eq!(closed.len(), brute.len());
    let scale = brute.iter().fold(0.0f64, |m, b| m.max(b.abs())).max(1e-12);
    closed
        .iter()
        .zip(brute)
        .fold(0.0f64, |m, (c, b)| m.max((c - b).abs()))
        / scale
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl OracleReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, instance_id: String, quantity: Quantity, closed: f64, brute: f64, rel: f64) {
        self.rows.push(OracleRow {
            instance_id,
            quantity,
            closed_form: closed,
            brute_force: brute,
            rel_err: rel,
        });
    }

    pub fn rows(&self) -> &[OracleRow] {
        &self.rows
    }

    pub fn extend(&mut self, other: OracleReport) {
        self.rows.extend(other.rows);
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err))
    }

    pub fn all_within(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.rel_err <= tol)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,quantity,closed_form,brute_force,rel_err\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                r.instance_id, r.quantity, r.closed_form, r.brute_force, r.rel_err
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

// ── Suites ──────────────────────────────────────────────────────────────────

/// Compares the closed-form compensation update against the KKT solve and
/// the Gauss-Jordan inverse route on random SPD matrices of dimension up to
/// 32 and condition number up to 1000. Two report rows per trial. `seed`
/// offsets the instance streams (0 is the canonical set).
pub fn delta_suite(trials: usize, seed: u64) -> Result<OracleReport> {
    let dims = [4usize, 8, 16, 32];
    let conds = [10.0, 100.0, 1000.0];
    let mut report = OracleReport::new();
    for k in 0..trials {
        let dim = dims[k % dims.len()];
        let mut r = instances::rng(seed.wrapping_add(1_000 + k as u64));
        let h = instances::spd_matrix(dim, &mut r, conds[k % conds.len()]);
        let j = k % dim;
        let gap: f64 = r.gen_range(-2.0..2.0);

        let closed = engine::compensation_delta(&h, j, gap)?;
        let brute = kkt_delta_oracle(&h, j, gap)?;
        let cross = kkt_delta_via_inverse(&h, j, gap)?;
        report.push(
            format!("delta-{k:03}"),
            Quantity::CompensationDelta,
            l2(&closed),
            l2(&brute),
            vec_rel_err(&closed, &brute),
        );
        report.push(
            format!("delta-{k:03}-cross"),
            Quantity::CompensationDelta,
            l2(&cross),
            l2(&brute),
            vec_rel_err(&cross, &brute),
        );
    }
    Ok(report)
}

/// Compares the importance score formula against the true minimal error
/// increase (halved, per the reporting convention) at zero damping on
/// well-conditioned calibration sets.
pub fn score_suite(trials: usize, seed: u64) -> Result<OracleReport> {
    let dims = [8usize, 12, 16];
    let mut report = OracleReport::new();
    for k in 0..trials {
        let dim = dims[k % dims.len()];
        let mut r = instances::rng(seed.wrapping_add(2_000 + k as u64));
        let x = instances::conditioned_calibration(dim, 4 * dim, &mut r, 1_000.0);
        let w = instances::gaussian_matrix(1, dim, &mut r, 1.0);
        let bits = 2 + (k % 3) as u8;
        let grid = grid_search(&w, bits, Granularity::PerMatrix, 40)?;

        let h = hessian(&x, 0.0)?;
        let hinv = spd_inverse(&h)?;
        let diag: Vec<f64> = (0..dim).map(|p| 2.0 * hinv.at(p, p)).collect();
        let scores = score_all(&w, &diag, &grid)?;

        let j = k % dim;
        let closed = scores.at(0, j);
        // The score convention is half the true minimal increase.
        let brute = 0.5 * score_oracle(w.row(0), &x, &grid, 0, j)?;
        report.push(
            format!("score-{k:03}"),
            Quantity::ImportanceScore,
            closed,
            brute,
            rel_err(closed, brute),
        );
    }
    Ok(report)
}

/// Compares the matmul-based layer error against a raw four-loop sum.
pub fn layer_error_suite(trials: usize, seed: u64) -> Result<OracleReport> {
    let mut report = OracleReport::new();
    for k in 0..trials {
        let mut r = instances::rng(seed.wrapping_add(3_000 + k as u64));
        let rows = 3 + k % 5;
        let cols = 4 + k % 7;
        let samples = 2 * cols;
        let w = instances::gaussian_matrix(rows, cols, &mut r, 1.0);
        let what = instances::gaussian_matrix(rows, cols, &mut r, 1.0);
        let x = instances::gaussian_matrix(cols, samples, &mut r, 1.0);

        let closed = engine::layer_error(&w, &what, &x)?;
        let mut brute = 0.0;
        for i in 0..rows {
            for t in 0..samples {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += (w.at(i, c) - what.at(i, c)) * x.at(c, t);
                }
                brute += acc * acc;
            }
        }
        report.push(
            format!("layer-error-{k:03}"),
            Quantity::LayerError,
            closed,
            brute,
            rel_err(closed, brute),
        );
    }
    Ok(report)
}

/// The full oracle portfolio with default trial counts, as run by the
/// command-line `oracle` subcommand.
pub fn full_report(seed: u64) -> Result<OracleReport> {
    let mut report = delta_suite(100, seed)?;
    report.extend(score_suite(100, seed)?);
    report.extend(layer_error_suite(20, seed)?);
    Ok(report)
}
