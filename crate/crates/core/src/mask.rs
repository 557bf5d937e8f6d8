//! Importance scores and reservation masks.
//!
//! Each weight gets a saliency score: the squared gap to its quantized value,
//! divided by twice the corresponding diagonal entry of the inverse
//! calibration Gram matrix. The score ranks how much layer output error
//! quantizing that weight would cause even after optimal compensation from the
//! rest of its row, so the mask simply reserves the top `p` percent at full
//! precision.
//!
//! Selection comes in three shapes: global top-k over the whole matrix (the
//! shipped default), per-block top-k (`select_mask_local`, an ablation), and a
//! per-column dynamic trace that re-scores the running weights while
//! simulating the compensation loop (`dynamic_mask_trace`, much slower, also
//! an ablation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{round_half_away, QuantGrid};
use crate::tensor::{cholesky, Matrix};

// ── Strategy configuration ──────────────────────────────────────────────────

/// When scores are computed: once up front, or re-derived per column while
/// simulating compensation updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    Static,
    Dynamic,
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Static
    }
}

/// Where the selection budget lives: one global pool or one pool per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Global,
    Local,
}

impl Default for Scope {
    fn default() -> Self {
        Scope::Global
    }
}

pub const DEFAULT_LOCAL_BLOCK: usize = 128;

fn default_p() -> f64 {
    1.0
}

fn default_block() -> usize {
    DEFAULT_LOCAL_BLOCK
}

/// Mask-selection knobs. `p` is a percentage of entries to reserve; `block`
/// is the square block edge used by local selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub scope: Scope,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_block")]
    pub block: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            timing: Timing::Static,
            scope: Scope::Global,
            p: default_p(),
            block: default_block(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.p) || !self.p.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "p must be a percentage in [0, 100], got {}",
                self.p
            )));
        }
        if self.block == 0 {
            return Err(Error::InvalidConfig("block edge must be >= 1".into()));
        }
        Ok(())
    }
}

// ── Score and mask containers ───────────────────────────────────────────────

/// Non-negative saliency per weight, same shape as the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::dims(
                "score matrix",
                format!("{rows}x{cols}"),
                format!("{} scores", scores.len()),
            ));
        }
        Ok(ScoreMatrix { rows, cols, scores })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn total(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.scores {
            acc += v;
        }
        acc
    }
}

/// 0/1 reservation mask; 1 means the weight keeps full precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    flags: Vec<u8>,
    reserved: usize,
}

impl MaskMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            flags: vec![0; rows * cols],
            reserved: 0,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            flags: vec![1; rows * cols],
            reserved: rows * cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_reserved(&self, i: usize, j: usize) -> bool {
        self.flags[i * self.cols + j] == 1
    }

    pub fn reserve(&mut self, i: usize, j: usize) {
        let cell = &mut self.flags[i * self.cols + j];
        if *cell == 0 {
            *cell = 1;
            self.reserved += 1;
        }
    }

    /// Number of reserved entries; always equals the count of set flags.
    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    /// Reserved positions in (row, col) order.
    pub fn reserved_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.reserved);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_reserved(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Budget for a pool of `cells` entries at percentage `p`, rounding half away
/// from zero and never exceeding the pool.
pub fn reserve_budget(p: f64, cells: usize) -> usize {
    (round_half_away(p / 100.0 * cells as f64) as usize).min(cells)
}

// ── Scoring ─────────────────────────────────────────────────────────────────

/// Scores every weight: `s[i][j] = (w[i][j] - dequant(w[i][j]))^2 / (2 * hinv_diag[j])`.
///
/// `hinv_diag` is the diagonal of the (optionally damped) inverse calibration
/// Gram matrix `(X X^T + (lambda/2) I)^-1`; the engine derives it from the
/// same damped inverse it uses for compensation, so at zero damping the
/// denominator is exact.
pub fn score_all(w: &Matrix, hinv_diag: &[f64], g: &QuantGrid) -> Result<ScoreMatrix> {
    if hinv_diag.len() != w.cols() {
        return Err(Error::dims(
            "score_all",
            format!("{} columns", w.cols()),
            format!("{} diagonal entries", hinv_diag.len()),
        ));
    }
    if let Some(bad) = hinv_diag.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Singular(format!(
            "inverse Gram diagonal must be positive, got {bad}"
        )));
    }
    let mut scores = Vec::with_capacity(w.rows() * w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let (_, deq) = g.quantize(i, w.at(i, j));
            let gap = w.at(i, j) - deq;
            scores.push(gap * gap / (2.0 * hinv_diag[j]));
        }
    }
    ScoreMatrix::new(w.rows(), w.cols(), scores)
}

// ── Selection ───────────────────────────────────────────────────────────────

/// Indices of the `k` largest scores within `pool`, ties broken toward the
/// smaller (row, col) position. `pool` holds flat indices into `scores`.
fn top_k(scores: &ScoreMatrix, pool: &mut Vec<usize>, k: usize) -> Vec<usize> {
    pool.sort_unstable_by(|&a, &b| {
        let sa = scores.values()[a];
        let sb = scores.values()[b];
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    pool.truncate(k);
    pool.clone()
}

/// Global static selection: reserves the top `round(p% * rows * cols)` scores.
pub fn select_mask(scores: &ScoreMatrix, cfg: &StrategyConfig) -> Result<MaskMatrix> {
    cfg.validate()?;
    let cells = scores.rows() * scores.cols();
    let k = reserve_budget(cfg.p, cells);
    let mut pool: Vec<usize> = (0..cells).collect();
    let mut mask = MaskMatrix::zeros(scores.rows(), scores.cols());
    for idx in top_k(scores, &mut pool, k) {
        mask.reserve(idx / scores.cols(), idx % scores.cols());
    }
    Ok(mask)
}

/// Local static selection: the matrix is tiled into `cfg.block`-edge squares
/// and each block reserves the top `round(p% * cells_in_block)` of its own
/// scores, so partial edge blocks get proportionally smaller budgets.
pub fn select_mask_local(scores: &ScoreMatrix, cfg: &StrategyConfig) -> Result<MaskMatrix> {
    cfg.validate()?;
    let mut mask = MaskMatrix::zeros(scores.rows(), scores.cols());
    let b = cfg.block;
    let mut bi = 0;
    while bi < scores.rows() {
        let hi_r = (bi + b).min(scores.rows());
        let mut bj = 0;
        while bj < scores.cols() {
            let hi_c = (bj + b).min(scores.cols());
            let cells = (hi_r - bi) * (hi_c - bj);
            let k = reserve_budget(cfg.p, cells);
            let mut pool = Vec::with_capacity(cells);
            for i in bi..hi_r {
                for j in bj..hi_c {
                    pool.push(i * scores.cols() + j);
                }
            }
            for idx in top_k(scores, &mut pool, k) {
                mask.reserve(idx / scores.cols(), idx % scores.cols());
            }
            bj = hi_c;
        }
        bi = hi_r;
    }
    Ok(mask)
}

/// Per-column static selection: every column reserves its own top
/// `round(p% * rows)` scores. This is the budget shape the dynamic trace uses,
/// exposed separately so the two can be compared on equal terms.
pub fn select_mask_per_column(scores: &ScoreMatrix, p: f64) -> MaskMatrix {
    let k = reserve_budget(p, scores.rows());
    let mut mask = MaskMatrix::zeros(scores.rows(), scores.cols());
    for j in 0..scores.cols() {
        let mut pool: Vec<usize> = (0..scores.rows())
            .map(|i| i * scores.cols() + j)
            .collect();
        for idx in top_k(scores, &mut pool, k) {
            mask.reserve(idx / scores.cols(), idx % scores.cols());
        }
    }
    mask
}

/// Dynamic selection: walks the columns in order, simulating quantization and
/// compensation on a scratch copy of `w`, and re-scores each column on the
/// updated values just before selecting its top `round(p% * rows)` entries.
///
/// `hinv` is the damped inverse Gram matrix `(2 X X^T + lambda I)^-1`; its
/// upper Cholesky factor drives the same compensation updates the engine
/// applies, and its diagonal (doubled) feeds the score denominator exactly as
/// in [`score_all`].
///
/// Re-scoring after every column makes this strictly more expensive than the
/// static pass; it exists to measure that trade-off, not to ship.
pub fn dynamic_mask_trace(
    w: &Matrix,
    hinv: &Matrix,
    g: &QuantGrid,
    cfg: &StrategyConfig,
) -> Result<MaskMatrix> {
    cfg.validate()?;
    if hinv.rows() != w.cols() || hinv.cols() != w.cols() {
        return Err(Error::dims(
            "dynamic_mask_trace",
            format!("{} weight columns", w.cols()),
            format!("{}x{} inverse", hinv.rows(), hinv.cols()),
        ));
    }
    let factor = cholesky(hinv)?;
    let rows = w.rows();
    let cols = w.cols();
    let k = reserve_budget(cfg.p, rows);
    let mut wq = w.clone();
    let mut mask = MaskMatrix::zeros(rows, cols);

    for j in 0..cols {
        // Score column j on the running weights; the denominator matches
        // score_all (twice the doubled inverse diagonal).
        let denom = 2.0 * (2.0 * hinv.at(j, j));
        let mut order: Vec<usize> = (0..rows).collect();
        let col_scores: Vec<f64> = (0..rows)
            .map(|i| {
                let v = wq.at(i, j);
                let (_, deq) = g.quantize(i, v);
                let gap = v - deq;
                gap * gap / denom
            })
            .collect();
        order.sort_unstable_by(|&a, &b| {
            col_scores[b].partial_cmp(&col_scores[a]).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().take(k) {
            mask.reserve(i, j);
        }

        // Quantize the column (reserved entries keep the running value) and
        // propagate the compensation like the engine would.
        let d = factor.diag(j);
        let mut err = vec![0.0; rows];
        for i in 0..rows {
            let v = wq.at(i, j);
            let target = if mask.is_reserved(i, j) {
                v
            } else {
                g.quantize(i, v).1
            };
            err[i] = (v - target) / d;
        }
        let frow = factor.row_slice(j, j, cols).to_vec();
        for i in 0..rows {
            if err[i] == 0.0 {
                continue;
            }
            let row = wq.row_mut(i);
            for (off, &f) in frow.iter().enumerate() {
                row[j + off] -= err[i] * f;
            }
        }
    }
    Ok(mask)
}

// ── Diagnostics ─────────────────────────────────────────────────────────────

/// Histogram of score values over explicit bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Fraction of the total score mass in each bin (zeros if the total is 0).
    pub mass_fraction: Vec<f64>,
}

impl Histogram {
    /// CSV with one bin per line: `bin_low,bin_high,count,mass_fraction`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count,mass_fraction\n");
        for b in 0..self.counts.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.counts[b],
                self.mass_fraction[b]
            ));
        }
        out
    }
}

/// Buckets every score into `edges.len() - 1` bins. Bin `k` covers
/// `[edges[k], edges[k+1])`, the last bin is closed on the right, and values
/// outside the edge span clamp into the end bins so counts always total the
/// number of entries.
pub fn score_histogram(scores: &ScoreMatrix, edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 {
        return Err(Error::InvalidConfig(
            "histogram needs at least two bin edges".into(),
        ));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig(
            "histogram bin edges must be strictly increasing".into(),
        ));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    let mut mass = vec![0.0; bins];
    for &s in scores.values() {
        let mut b = match edges[1..].iter().position(|&e| s < e) {
            Some(idx) => idx,
            None => bins - 1,
        };
        if s < edges[0] {
            b = 0;
        }
        counts[b] += 1;
        mass[b] += s;
    }
    let total: f64 = scores.total();
    let mass_fraction = if total > 0.0 {
        mass.iter().map(|m| m / total).collect()
    } else {
        vec![0.0; bins]
    };
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        mass_fraction,
    })
}

/// Decade (powers of ten) bin edges covering all scores, with a leading zero
/// edge so exact-zero scores land in the first bin. Falls back to `[0, 1]`
/// when every score is zero.
pub fn decade_edges(scores: &ScoreMatrix) -> Vec<f64> {
    let mut min_pos = f64::INFINITY;
    let mut max = 0.0f64;
    for &s in scores.values() {
        if s > 0.0 && s < min_pos {
            min_pos = s;
        }
        if s > max {
            max = s;
        }
    }
    if max == 0.0 {
        return vec![0.0, 1.0];
    }
    let lo = min_pos.log10().floor() as i32;
    let hi = (max.log10().ceil() as i32).max(lo + 1);
    let mut edges = vec![0.0];
    for k in lo..=hi {
        edges.push(10f64.powi(k));
    }
    edges
}

/// Counts reserved entries per `block`-edge tile; partial edge tiles are
/// counted over their actual area. Output is `ceil(rows/block) x ceil(cols/block)`.
pub fn mask_block_sums(mask: &MaskMatrix, block: usize) -> Result<Matrix> {
    if block == 0 {
        return Err(Error::InvalidConfig("block edge must be >= 1".into()));
    }
    let brows = mask.rows().div_ceil(block);
    let bcols = mask.cols().div_ceil(block);
    let mut out = Matrix::zeros(brows, bcols);
    for i in 0..mask.rows() {
        for j in 0..mask.cols() {
            if mask.is_reserved(i, j) {
                let v = out.at(i / block, j / block);
                out.set(i / block, j / block, v + 1.0);
            }
        }
    }
    Ok(out)
}

/// Summed score mass covered by the reserved entries of `mask`.
pub fn mask_score_mass(mask: &MaskMatrix, scores: &ScoreMatrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..mask.rows() {
        for j in 0..mask.cols() {
            if mask.is_reserved(i, j) {
                acc += scores.at(i, j);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::hessian;
    use crate::tensor::spd_inverse;
    use proptest::prelude::*;
    use std::time::Instant;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64, span: f64) -> Matrix {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            state = state.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0xBF58476D1CE4E5B9);
            let unit = (state >> 11) as f64 / (1u64 << 53) as f64;
            data.push((unit * 2.0 - 1.0) * span);
        }
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn scores_from(values: &[&[f64]]) -> ScoreMatrix {
        let m = Matrix::from_rows(values);
        ScoreMatrix::new(m.rows(), m.cols(), m.data().to_vec()).unwrap()
    }

    #[test]
    fn score_all_diagonal_closed_form() {
        // Gram matrix 2I means inverse diagonal 0.5; a gap of 0.2 scores
        // 0.04 / (2 * 0.5) = 0.04.
        let w = Matrix::from_rows(&[&[0.7]]);
        let g = QuantGrid::per_matrix(2, 0.5, 0).unwrap();
        let s = score_all(&w, &[0.5], &g).unwrap();
        assert!((s.at(0, 0) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn score_all_zero_for_grid_aligned_weights() {
        let g = QuantGrid::per_matrix(2, 0.5, 1).unwrap();
        let w = Matrix::from_rows(&[&[-0.5, 0.0], &[0.5, 1.0]]);
        let s = score_all(&w, &[0.3, 0.7], &g).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_all_rejects_nonpositive_diagonal() {
        let w = Matrix::from_rows(&[&[1.0, 2.0]]);
        let g = QuantGrid::per_matrix(2, 1.0, 0).unwrap();
        assert!(matches!(
            score_all(&w, &[0.5, 0.0], &g),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn select_mask_p_zero_and_full() {
        let s = scores_from(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let none = select_mask(&s, &StrategyConfig { p: 0.0, ..Default::default() }).unwrap();
        assert_eq!(none.reserved_count(), 0);
        let all = select_mask(&s, &StrategyConfig { p: 100.0, ..Default::default() }).unwrap();
        assert_eq!(all.reserved_count(), 4);
    }

    #[test]
    fn select_mask_picks_unique_top_entry() {
        // p = 6.25% of 16 cells is exactly one entry.
        let mut vals = vec![0.0; 16];
        vals[9] = 5.0;
        let s = ScoreMatrix::new(4, 4, vals).unwrap();
        let mask = select_mask(&s, &StrategyConfig { p: 6.25, ..Default::default() }).unwrap();
        assert_eq!(mask.reserved_count(), 1);
        assert!(mask.is_reserved(2, 1));
    }

    #[test]
    fn select_mask_breaks_ties_lexicographically() {
        let s = ScoreMatrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let mask = select_mask(&s, &StrategyConfig { p: 50.0, ..Default::default() }).unwrap();
        assert_eq!(mask.reserved_count(), 2);
        assert!(mask.is_reserved(0, 0));
        assert!(mask.is_reserved(0, 1));
    }

    #[test]
    fn local_selection_takes_top_per_block() {
        // 4x4 with 2x2 blocks; p = 25% reserves one entry per block.
        let s = scores_from(&[
            &[9.0, 1.0, 1.0, 8.0],
            &[1.0, 1.0, 1.0, 1.0],
            &[1.0, 7.0, 1.0, 1.0],
            &[1.0, 1.0, 6.0, 1.0],
        ]);
        let cfg = StrategyConfig { p: 25.0, block: 2, ..Default::default() };
        let mask = select_mask_local(&s, &cfg).unwrap();
        assert_eq!(mask.reserved_count(), 4);
        assert!(mask.is_reserved(0, 0));
        assert!(mask.is_reserved(0, 3));
        assert!(mask.is_reserved(2, 1));
        assert!(mask.is_reserved(3, 2));
    }

    #[test]
    fn global_and_local_differ_when_scores_concentrate() {
        // All of the heavy scores sit in the top-left 128 block of a 256x256
        // matrix; the global mask piles in there, the local mask cannot.
        let mut vals = vec![0.0; 256 * 256];
        let mut state = 99u64;
        for i in 0..128 {
            for j in 0..128 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                vals[i * 256 + j] = 1.0 + (state >> 40) as f64;
            }
        }
        let s = ScoreMatrix::new(256, 256, vals).unwrap();
        // 1.5625% of 128^2 is exactly 256 per block (1024 globally), so the
        // global and per-block budgets match and the masks are comparable.
        let cfg = StrategyConfig { p: 1.5625, block: 128, ..Default::default() };
        let global = select_mask(&s, &cfg).unwrap();
        let local = select_mask_local(&s, &cfg).unwrap();
        assert_eq!(global.reserved_count(), local.reserved_count());
        assert_ne!(global, local);
        assert!(mask_score_mass(&global, &s) >= mask_score_mass(&local, &s));
        // Everything the global mask reserves is in the heavy block.
        for (i, j) in global.reserved_positions() {
            assert!(i < 128 && j < 128);
        }
    }

    #[test]
    fn dynamic_trace_p_zero_reserves_nothing() {
        let w = lcg_matrix(6, 6, 3, 1.0);
        let x = lcg_matrix(6, 24, 4, 1.0);
        let h = hessian(&x, 0.01).unwrap();
        let hinv = spd_inverse(&h).unwrap();
        let g = QuantGrid::per_matrix(2, 0.4, 1).unwrap();
        let cfg = StrategyConfig { timing: Timing::Dynamic, p: 0.0, ..Default::default() };
        let mask = dynamic_mask_trace(&w, &hinv, &g, &cfg).unwrap();
        assert_eq!(mask.reserved_count(), 0);
    }

    #[test]
    fn dynamic_trace_matches_static_on_diagonal_hessian() {
        // A diagonal Gram matrix has a diagonal Cholesky factor, so the
        // compensation updates never touch later columns and the running
        // weights equal the originals. The trace then reduces to per-column
        // static selection.
        let w = lcg_matrix(8, 8, 7, 1.5);
        let mut hinv = Matrix::zeros(8, 8);
        for i in 0..8 {
            hinv.set(i, i, 0.25 + i as f64 * 0.05);
        }
        let g = QuantGrid::per_matrix(2, 0.3, 1).unwrap();
        let cfg = StrategyConfig { timing: Timing::Dynamic, p: 25.0, ..Default::default() };
        let dynamic = dynamic_mask_trace(&w, &hinv, &g, &cfg).unwrap();

        let diag: Vec<f64> = (0..8).map(|j| 2.0 * hinv.at(j, j)).collect();
        let scores = score_all(&w, &diag, &g).unwrap();
        let static_per_col = select_mask_per_column(&scores, 25.0);
        assert_eq!(dynamic, static_per_col);
    }

    #[test]
    fn dynamic_trace_costs_more_than_static_scoring() {
        let w = lcg_matrix(64, 64, 11, 2.0);
        let x = lcg_matrix(64, 128, 12, 1.0);
        let h = hessian(&x, 0.01).unwrap();
        let hinv = spd_inverse(&h).unwrap();
        let g = QuantGrid::per_matrix(2, 0.3, 1).unwrap();
        let cfg = StrategyConfig { p: 1.0, ..Default::default() };

        let diag: Vec<f64> = (0..64).map(|j| 2.0 * hinv.at(j, j)).collect();
        let t0 = Instant::now();
        let scores = score_all(&w, &diag, &g).unwrap();
        let _static_mask = select_mask(&scores, &cfg).unwrap();
        let static_time = t0.elapsed();

        let dyn_cfg = StrategyConfig { timing: Timing::Dynamic, ..cfg };
        let t1 = Instant::now();
        let _dynamic_mask = dynamic_mask_trace(&w, &hinv, &g, &dyn_cfg).unwrap();
        let dynamic_time = t1.elapsed();

        assert!(
            dynamic_time > static_time,
            "dynamic {dynamic_time:?} should exceed static {static_time:?}"
        );
    }

    #[test]
    fn histogram_single_bin_when_scores_equal() {
        let s = ScoreMatrix::new(2, 3, vec![0.5; 6]).unwrap();
        let h = score_histogram(&s, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.counts, vec![6, 0]);
        assert!((h.mass_fraction[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_two_point_mass() {
        // 99 tiny scores and one huge one: the top bin holds nearly all mass.
        let mut vals = vec![1e-6; 100];
        vals[57] = 1.0;
        let s = ScoreMatrix::new(10, 10, vals).unwrap();
        let h = score_histogram(&s, &[0.0, 1e-3, 10.0]).unwrap();
        assert_eq!(h.counts, vec![99, 1]);
        assert!(h.mass_fraction[1] > 0.99);
    }

    #[test]
    fn histogram_matches_accumulation_loop() {
        let m = lcg_matrix(12, 12, 31, 1.0);
        let vals: Vec<f64> = m.data().iter().map(|v| v * v).collect();
        let s = ScoreMatrix::new(12, 12, vals.clone()).unwrap();
        let edges = [0.0, 0.01, 0.1, 0.5, 1.5];
        let h = score_histogram(&s, &edges).unwrap();

        let mut want_counts = vec![0usize; 4];
        let mut want_mass = vec![0.0; 4];
        for &v in &vals {
            for b in 0..4 {
                let last = b == 3;
                if v >= edges[b] && (v < edges[b + 1] || (last && v <= edges[4])) {
                    want_counts[b] += 1;
                    want_mass[b] += v;
                    break;
                }
            }
        }
        assert_eq!(h.counts, want_counts);
        let total: f64 = vals.iter().sum();
        for b in 0..4 {
            assert!((h.mass_fraction[b] - want_mass[b] / total).abs() < 1e-12);
        }
        assert_eq!(h.counts.iter().sum::<usize>(), 144);
        let mass_sum: f64 = h.mass_fraction.iter().sum();
        assert!((mass_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_rejects_bad_edges() {
        let s = ScoreMatrix::new(1, 1, vec![1.0]).unwrap();
        assert!(score_histogram(&s, &[0.0]).is_err());
        assert!(score_histogram(&s, &[0.0, 0.0]).is_err());
        assert!(score_histogram(&s, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn decade_edges_cover_all_scores() {
        let s = ScoreMatrix::new(1, 4, vec![0.0, 3e-4, 0.02, 7.0]).unwrap();
        let edges = decade_edges(&s);
        assert_eq!(edges[0], 0.0);
        assert!(edges[1] <= 3e-4);
        assert!(*edges.last().unwrap() >= 7.0);
        let h = score_histogram(&s, &edges).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn block_sums_zero_mask() {
        let mask = MaskMatrix::zeros(5, 5);
        let sums = mask_block_sums(&mask, 2).unwrap();
        assert_eq!(sums.rows(), 3);
        assert_eq!(sums.cols(), 3);
        assert!(sums.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_sums_full_mask_gives_block_areas() {
        let mask = MaskMatrix::ones(5, 7);
        let sums = mask_block_sums(&mask, 4).unwrap();
        assert_eq!(sums.rows(), 2);
        assert_eq!(sums.cols(), 2);
        assert_eq!(sums.at(0, 0), 16.0);
        assert_eq!(sums.at(0, 1), 12.0);
        assert_eq!(sums.at(1, 0), 4.0);
        assert_eq!(sums.at(1, 1), 3.0);
    }

    #[test]
    fn block_sums_match_counting_loop() {
        let m = lcg_matrix(9, 11, 43, 1.0);
        let s = ScoreMatrix::new(9, 11, m.data().iter().map(|v| v * v).collect()).unwrap();
        let mask = select_mask(&s, &StrategyConfig { p: 20.0, ..Default::default() }).unwrap();
        let sums = mask_block_sums(&mask, 4).unwrap();
        for bi in 0..sums.rows() {
            for bj in 0..sums.cols() {
                let mut count = 0.0;
                for i in bi * 4..((bi + 1) * 4).min(9) {
                    for j in bj * 4..((bj + 1) * 4).min(11) {
                        if mask.is_reserved(i, j) {
                            count += 1.0;
                        }
                    }
                }
                assert_eq!(sums.at(bi, bj), count);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn selection_invariant_under_positive_scaling(seed in 0u64..300, c in 0.001f64..1000.0) {
            let m = lcg_matrix(6, 6, seed.wrapping_add(7), 1.0);
            let vals: Vec<f64> = m.data().iter().map(|v| v * v).collect();
            let scaled: Vec<f64> = vals.iter().map(|v| v * c).collect();
            let a = ScoreMatrix::new(6, 6, vals).unwrap();
            let b = ScoreMatrix::new(6, 6, scaled).unwrap();
            let cfg = StrategyConfig { p: 25.0, ..Default::default() };
            prop_assert_eq!(select_mask(&a, &cfg).unwrap(), select_mask(&b, &cfg).unwrap());
        }

        #[test]
        fn selection_is_deterministic(seed in 0u64..300) {
            let m = lcg_matrix(7, 5, seed.wrapping_add(101), 1.0);
            let vals: Vec<f64> = m.data().iter().map(|v| v * v).collect();
            let s = ScoreMatrix::new(7, 5, vals).unwrap();
            let cfg = StrategyConfig { p: 30.0, ..Default::default() };
            let a = select_mask(&s, &cfg).unwrap();
            let b = select_mask(&s, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn global_budget_is_rounded_share(p in 0.0f64..100.0, seed in 0u64..100) {
            let m = lcg_matrix(6, 7, seed.wrapping_add(3), 1.0);
            let vals: Vec<f64> = m.data().iter().map(|v| v * v).collect();
            let s = ScoreMatrix::new(6, 7, vals).unwrap();
            let mask = select_mask(&s, &StrategyConfig { p, ..Default::default() }).unwrap();
            prop_assert_eq!(mask.reserved_count(), reserve_budget(p, 42));
        }
    }
}
