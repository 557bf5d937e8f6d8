//! Seeded random test instances.
//!
//! Everything is driven by an explicit `ChaCha8Rng` so instances are
//! reproducible across platforms; `rng(stream)` derives independent streams
//! from one base seed. The spectral constructions (`spd_matrix`,
//! `conditioned_calibration`) control their condition numbers exactly by
//! building from an orthonormal basis and a log-spaced spectrum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Matrix;

pub const SEED_BASE: u64 = 0x5EED;

/// A reproducible generator for the given stream index.
pub fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED_BASE.wrapping_add(stream))
}

/// Entries drawn i.i.d. from N(0, std^2), row-major order.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, std: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            m.set(i, j, z * std);
        }
    }
    m
}

/// A contaminated Gaussian: each entry is N(0,1), inflated by
/// `outlier_scale` with probability `outlier_frac`. This is the heavy-tailed
/// weight regime where reserving a few entries pays off.
pub fn heavy_tail_matrix(
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
    outlier_frac: f64,
    outlier_scale: f64,
) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let u: f64 = rng.gen();
            let z: f64 = rng.sample(StandardNormal);
            let v = if u < outlier_frac { z * outlier_scale } else { z };
            m.set(i, j, v);
        }
    }
    m
}

/// `n x k` matrix with exactly orthonormal columns (modified Gram-Schmidt
/// with re-orthogonalization on Gaussian draws). Requires `k <= n`.
pub fn orthonormal_columns(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    assert!(k <= n, "cannot fit {k} orthonormal columns in dimension {n}");
    let mut q = Matrix::zeros(n, k);
    for j in 0..k {
        let mut attempts = 0;
        loop {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            // Two Gram-Schmidt passes keep the basis orthonormal to machine
            // precision even for ill-conditioned draws.
            for _ in 0..2 {
                for prev in 0..j {
                    let dot: f64 = (0..n).map(|r| q.at(r, prev) * v[r]).sum();
                    for (r, vr) in v.iter_mut().enumerate() {
                        *vr -= dot * q.at(r, prev);
                    }
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (r, vr) in v.iter().enumerate() {
                    q.set(r, j, vr / norm);
                }
                break;
            }
            attempts += 1;
            assert!(attempts < 100, "degenerate random draw");
        }
    }
    q
}

/// Symmetric positive definite matrix with condition number exactly `cond`:
/// `Q diag(lambda) Q^T` with log-spaced eigenvalues in `[1/cond, 1]`.
pub fn spd_matrix(dim: usize, rng: &mut ChaCha8Rng, cond: f64) -> Matrix {
    assert!(dim >= 1 && cond >= 1.0);
    let q = orthonormal_columns(dim, dim, rng);
    let eigs: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                1.0
            } else {
                cond.powf(-(i as f64) / (dim as f64 - 1.0))
            }
        })
        .collect();
    let mut a = Matrix::zeros(dim, dim);
    for p in 0..dim {
        for s in p..dim {
            let mut acc = 0.0;
            for (i, &e) in eigs.iter().enumerate() {
                acc += e * q.at(p, i) * q.at(s, i);
            }
            a.set(p, s, acc);
            a.set(s, p, acc);
        }
    }
    a
}

/// Calibration activations `X` (dim x samples) such that `X X^T` has
/// condition number exactly `cond`: built as `U diag(s) V^T` with orthonormal
/// `U`, `V` and singular values log-spaced in `[cond^(-1/2), 1]`. Requires
/// `samples >= dim`.
pub fn conditioned_calibration(
    dim: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
    cond: f64,
) -> Matrix {
    assert!(samples >= dim, "need at least {dim} samples, got {samples}");
    assert!(cond >= 1.0);
    let u = orthonormal_columns(dim, dim, rng);
    let v = orthonormal_columns(samples, dim, rng);
    let sing: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                1.0
            } else {
                cond.powf(-(i as f64) / (2.0 * (dim as f64 - 1.0)))
            }
        })
        .collect();
    let mut x = Matrix::zeros(dim, samples);
    for p in 0..dim {
        for t in 0..samples {
            let mut acc = 0.0;
            for (i, &s) in sing.iter().enumerate() {
                acc += u.at(p, i) * s * v.at(t, i);
            }
            x.set(p, t, acc);
        }
    }
    x
}
