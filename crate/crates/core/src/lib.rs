//! Layer based partition (LBP) scheduling for square matrix multiplication
//! on heterogeneous processor networks.
//!
//! Every processor receives an outer-product "layer": `k` columns of `A`
//! and the matching `k` rows of `B`. The crate computes how many columns
//! each processor should take so the whole network finishes as early as
//! possible, on star networks (closed forms) and on mesh quadrants (linear
//! programming plus integer repair), and evaluates the result against
//! rectangular-partition and pipeline baselines.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod lp;
pub mod mesh;
pub mod model;
pub mod sim;
pub mod star;

pub use error::{Error, Result};
pub use model::{
    compute_load, lbp_source_volume, per_processor_volume, Link, NetworkKind, NetworkModel, Processor, Schedule,
    StarMode, Task, Timing,
};

/// Relative tolerance used when two finish times are treated as a tie.
pub(crate) const TIE_RTOL: f64 = 1e-9;

/// Index of the largest value among `eligible` indices. Values within
/// [`TIE_RTOL`] of each other tie, and ties go to the lowest index.
pub(crate) fn argmax_tol(values: &[f64], eligible: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in eligible {
        match best {
            None => best = Some(i),
            Some(b) => {
                let tol = TIE_RTOL * values[b].abs().max(values[i].abs()).max(1e-300);
                if values[i] > values[b] + tol {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Index of the smallest value among `eligible` indices, ties to the lowest index.
pub(crate) fn argmin_tol(values: &[f64], eligible: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in eligible {
        match best {
            None => best = Some(i),
            Some(b) => {
                let tol = TIE_RTOL * values[b].abs().max(values[i].abs()).max(1e-300);
                if values[i] < values[b] - tol {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Round half-up: 2.5 -> 3, 2.49 -> 2. Negative noise from a solver is clamped to 0.
pub(crate) fn round_half_up(x: f64) -> u64 {
    let r = (x + 0.5).floor();
    if r <= 0.0 {
        0
    } else {
        r as u64
    }
}
