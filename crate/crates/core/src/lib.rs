//! Reward-margin dynamics of DPO preference learning on a synthetic
//! concept-cluster distribution.
//!
//! The crate is organised bottom-up:
//!
//! - [`prefdist`]: the Gaussian concept-cluster preference distribution and
//!   seeded dataset draws.
//! - [`interaction`]: pairwise coupling factors `C(x_i, x_j)` (preference
//!   sharing times embedding inner product).
//! - [`dynamics`]: the margin gradient-flow ODE, held-out margins, and the
//!   weight-space system used as a cross-check.
//! - [`bounds`]: closed-form horizon, linear margin bounds, probability and
//!   generalization bounds, and concentration trials.
//! - [`multitoken`]: token-wise reward decomposition and the reward-gradient
//!   breakdown on an explicit softmax model.
//! - [`embedanalysis`]: cosine-similarity analysis of labelled embeddings.

pub mod bounds;
pub mod dynamics;
pub mod embedanalysis;
pub mod error;
pub mod interaction;
pub mod multitoken;
pub mod prefdist;
pub(crate) mod rng;

pub use error::{Error, Result};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log σ(x)`, evaluated without overflow for large |x|.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Inner product with eight interleaved partial sums, so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
