//! Layer-wise post-training quantization with sparse expensive-weight
//! reservation.
//!
//! The engine quantizes a weight matrix onto a uniform low-bit grid while
//! minimizing the calibration error `||W X - What X||_F^2`. Three ideas
//! combine:
//!
//! * **Grid search** ([`grid`]) — per-matrix or per-row scale/zero-point
//!   chosen by scanning shrinkage candidates of the min-max range.
//! * **Reservation** ([`mask`]) — a small budget of weights (p% of entries)
//!   with the highest importance scores is kept at full precision instead of
//!   being rounded; the score weighs the squared rounding gap against how
//!   well other columns could absorb it.
//! * **Error compensation** ([`engine`]) — remaining columns are updated
//!   after each column quantizes, using rows of the Cholesky factor of the
//!   inverse damped Gram matrix; updates inside a block are applied
//!   immediately, updates past it are batched per block.
//!
//! [`oracle`] re-derives every closed-form quantity by brute force on
//! independent code paths, [`instances`] generates the seeded random
//! problems, and [`io`]/[`result_io`] define the on-disk formats.

pub mod engine;
pub mod error;
pub mod grid;
pub mod instances;
pub mod io;
pub mod mask;
pub mod oracle;
pub mod result_io;
pub mod tensor;

pub use engine::{
    compensation_delta, effective_bits, layer_error, run_septq, run_with_mask, EffectiveBits,
    EngineConfig, Metrics, QuantResult, ReservedWeight,
};
pub use error::{Error, Result};
pub use grid::{grid_search, CodeMatrix, Granularity, QuantGrid};
pub use mask::{score_all, select_mask, MaskMatrix, Scope, ScoreMatrix, StrategyConfig, Timing};
pub use tensor::{hessian, matmul, spd_inverse, Matrix};
