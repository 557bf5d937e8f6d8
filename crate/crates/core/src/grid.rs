//! Uniform quantization grids and the shrinkage search that fits them.
//!
//! A grid is `bits` wide with a positive `scale` and an integer `zero_point`:
//! an entry `w` maps to `code = clip(round(w / scale) + zero_point, 0, 2^bits - 1)`
//! and back to `scale * (code - zero_point)`. Rounding is half away from zero.
//!
//! [`grid_search`] picks `(scale, zero_point)` by scanning a shrinkage family:
//! for each `alpha = k / steps` (k = 1..steps) the clipping range
//! `[alpha * min, alpha * max]` induces a candidate grid, and the candidate
//! with the smallest squared reconstruction error wins, ties going to the
//! larger `alpha`. Shrinking the range below the data extremes trades clipping
//! error on a few large entries for resolution everywhere else, which pays off
//! exactly when the weight distribution is long-tailed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

// ── Configuration ───────────────────────────────────────────────────────────

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;
pub const DEFAULT_GRID_STEPS: usize = 100;

/// Whether one `(scale, zero_point)` pair covers the whole matrix or each row
/// gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerMatrix,
    PerRow,
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity::PerMatrix
    }
}

/// Rounds half away from zero (`0.5 -> 1`, `-0.5 -> -1`), the convention used
/// everywhere codes are produced.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

// ── QuantGrid ───────────────────────────────────────────────────────────────

/// A fitted uniform grid: `bits` plus one `(scale, zero_point)` pair per
/// matrix or per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    bits: u8,
    granularity: Granularity,
    scales: Vec<f64>,
    zero_points: Vec<u8>,
}

impl QuantGrid {
    pub fn per_matrix(bits: u8, scale: f64, zero_point: u8) -> Result<Self> {
        let g = QuantGrid {
            bits,
            granularity: Granularity::PerMatrix,
            scales: vec![scale],
            zero_points: vec![zero_point],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn per_row(bits: u8, params: Vec<(f64, u8)>) -> Result<Self> {
        let (scales, zero_points) = params.into_iter().unzip();
        let g = QuantGrid {
            bits,
            granularity: Granularity::PerRow,
            scales,
            zero_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn from_parts(
        bits: u8,
        granularity: Granularity,
        scales: Vec<f64>,
        zero_points: Vec<u8>,
    ) -> Result<Self> {
        let g = QuantGrid {
            bits,
            granularity,
            scales,
            zero_points,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if !(MIN_BITS..=MAX_BITS).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "bits must be in [{MIN_BITS}, {MAX_BITS}], got {}",
                self.bits
            )));
        }
        if self.scales.len() != self.zero_points.len() || self.scales.is_empty() {
            return Err(Error::InvalidConfig(
                "grid needs one (scale, zero_point) pair per row or a single pair".into(),
            ));
        }
        if self.granularity == Granularity::PerMatrix && self.scales.len() != 1 {
            return Err(Error::InvalidConfig(
                "per-matrix grid must hold exactly one (scale, zero_point) pair".into(),
            ));
        }
        for &s in &self.scales {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("scale must be positive, got {s}")));
            }
        }
        let max = self.max_code();
        for &z in &self.zero_points {
            if z > max {
                return Err(Error::InvalidConfig(format!(
                    "zero_point {z} exceeds max code {max}"
                )));
            }
        }
        Ok(())
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// Largest representable code, `2^bits - 1`.
    #[inline]
    pub fn max_code(&self) -> u8 {
        ((1u16 << self.bits) - 1) as u8
    }

    /// Number of stored `(scale, zero_point)` pairs (1 or the row count).
    pub fn param_rows(&self) -> usize {
        self.scales.len()
    }

    #[inline]
    fn param_index(&self, row: usize) -> usize {
        match self.granularity {
            Granularity::PerMatrix => 0,
            Granularity::PerRow => row,
        }
    }

    #[inline]
    pub fn scale(&self, row: usize) -> f64 {
        self.scales[self.param_index(row)]
    }

    #[inline]
    pub fn zero_point(&self, row: usize) -> u8 {
        self.zero_points[self.param_index(row)]
    }

    /// Quantizes one entry of the given row; returns `(code, dequantized)`.
    #[inline]
    pub fn quantize(&self, row: usize, w: f64) -> (u8, f64) {
        let s = self.scale(row);
        let z = self.zero_point(row) as f64;
        let code = (round_half_away(w / s) + z).clamp(0.0, self.max_code() as f64) as u8;
        (code, self.dequantize(row, code))
    }

    #[inline]
    pub fn dequantize(&self, row: usize, code: u8) -> f64 {
        debug_assert!(code <= self.max_code());
        self.scale(row) * (code as f64 - self.zero_point(row) as f64)
    }

    /// Quantizes a full column (entry `i` belongs to row `i`).
    pub fn quantize_column(&self, col: &[f64]) -> (Vec<u8>, Vec<f64>) {
        let mut codes = Vec::with_capacity(col.len());
        let mut deq = Vec::with_capacity(col.len());
        for (row, &w) in col.iter().enumerate() {
            let (c, d) = self.quantize(row, w);
            codes.push(c);
            deq.push(d);
        }
        (codes, deq)
    }

    /// Round-to-nearest over the whole matrix; returns codes plus the
    /// reconstruction.
    pub fn quantize_matrix(&self, w: &Matrix) -> (CodeMatrix, Matrix) {
        let mut codes = CodeMatrix::zeros(w.rows(), w.cols(), self.bits);
        let mut deq = Matrix::zeros(w.rows(), w.cols());
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let (c, d) = self.quantize(i, w.at(i, j));
                codes.set(i, j, c);
                deq.set(i, j, d);
            }
        }
        (codes, deq)
    }

    /// Reconstruction of a code matrix under this grid.
    pub fn dequantize_matrix(&self, codes: &CodeMatrix) -> Matrix {
        let mut out = Matrix::zeros(codes.rows(), codes.cols());
        for i in 0..codes.rows() {
            for j in 0..codes.cols() {
                out.set(i, j, self.dequantize(i, codes.at(i, j)));
            }
        }
        out
    }
}

// ── CodeMatrix ──────────────────────────────────────────────────────────────

/// Row-major matrix of quantization codes, each in `[0, 2^bits - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    cols: usize,
    bits: u8,
    codes: Vec<u8>,
}

impl CodeMatrix {
    pub fn zeros(rows: usize, cols: usize, bits: u8) -> Self {
        CodeMatrix {
            rows,
            cols,
            bits,
            codes: vec![0; rows * cols],
        }
    }

    pub fn from_codes(rows: usize, cols: usize, bits: u8, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::dims(
                "code matrix",
                format!("{rows}x{cols}"),
                format!("{} codes", codes.len()),
            ));
        }
        let max = ((1u16 << bits) - 1) as u8;
        if let Some(bad) = codes.iter().find(|&&c| c > max) {
            return Err(Error::InvalidConfig(format!(
                "code {bad} exceeds max {max} for {bits}-bit grid"
            )));
        }
        Ok(CodeMatrix { rows, cols, bits, codes })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: u8) {
        debug_assert!(c <= ((1u16 << self.bits) - 1) as u8);
        self.codes[i * self.cols + j] = c;
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
}

// ── Grid search ─────────────────────────────────────────────────────────────

/// Fits a grid to `w` by scanning `steps` shrinkage factors per the module
/// description. With [`Granularity::PerRow`] every row is searched
/// independently over its own extremes.
///
/// A constant range (`max == min`) falls back to the degenerate grid
/// `scale = 1` with the zero point derived the same way as everywhere else
/// (`clip(round(-min / scale), 0, 2^bits - 1)`); the reconstruction error this
/// leaves is reported by the metrics rather than hidden.
pub fn grid_search(
    w: &Matrix,
    bits: u8,
    granularity: Granularity,
    steps: usize,
) -> Result<QuantGrid> {
    if steps < 1 {
        return Err(Error::InvalidConfig(format!(
            "grid search needs at least 1 step, got {steps}"
        )));
    }
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "bits must be in [{MIN_BITS}, {MAX_BITS}], got {bits}"
        )));
    }
    if !w.all_finite() {
        return Err(Error::InvalidConfig(
            "grid search requires finite weights".into(),
        ));
    }
    match granularity {
        Granularity::PerMatrix => {
            let (scale, zero) = search_range(w.data(), bits, steps);
            QuantGrid::per_matrix(bits, scale, zero)
        }
        Granularity::PerRow => {
            let params = (0..w.rows())
                .map(|i| search_range(w.row(i), bits, steps))
                .collect();
            QuantGrid::per_row(bits, params)
        }
    }
}

/// Scans the shrinkage family over one slice of values and returns the best
/// `(scale, zero_point)`.
fn search_range(values: &[f64], bits: u8, steps: usize) -> (f64, u8) {
    let max_code = ((1u16 << bits) - 1) as f64;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    if lo == hi {
        // Degenerate range: unit scale, derived zero point.
        let zero = (round_half_away(-lo)).clamp(0.0, max_code) as u8;
        return (1.0, zero);
    }

    let mut best = (f64::INFINITY, 1.0, 0u8);
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        let scale = (alpha * hi - alpha * lo) / max_code;
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        let zero = (round_half_away(-(alpha * lo) / scale)).clamp(0.0, max_code);
        let mut err = 0.0;
        for &v in values {
            let code = (round_half_away(v / scale) + zero).clamp(0.0, max_code);
            let deq = scale * (code - zero);
            let d = v - deq;
            err += d * d;
        }
        // `<=` so that ties resolve to the larger alpha (scanned last).
        if err <= best.0 {
            best = (err, scale, zero as u8);
        }
    }
    (best.1, best.2)
}

/// Total squared reconstruction error of round-to-nearest under `g`.
pub fn reconstruction_error(w: &Matrix, g: &QuantGrid) -> f64 {
    let mut err = 0.0;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let (_, d) = g.quantize(i, w.at(i, j));
            let diff = w.at(i, j) - d;
            err += diff * diff;
        }
    }
    err
}
