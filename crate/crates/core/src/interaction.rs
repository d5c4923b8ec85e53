//! Pairwise coupling constants of the margin ODE.
//!
//! `C(x_i, x_j) = (y_w,i − y_l,i)·(y_w,j − y_l,j) · g(x_i)·g(x_j)`, where the
//! first factor is taken over one-hot token vectors.

use std::io::Write;

use crate::dot;
use crate::prefdist::{Dataset, PreferenceSample, TokenId};
use crate::{Error, Result};

/// Inner product of the one-hot difference vectors `y_w − y_l` of two samples.
pub fn preference_sharing(a: &PreferenceSample, b: &PreferenceSample) -> i32 {
    token_sharing(a.preferred_token, a.rejected_token, b.preferred_token, b.rejected_token)
}

pub fn token_sharing(wa: TokenId, la: TokenId, wb: TokenId, lb: TokenId) -> i32 {
    let eq = |x: TokenId, y: TokenId| i32::from(x == y);
    eq(wa, wb) - eq(wa, lb) - eq(la, wb) + eq(la, lb)
}

/// Embedding inner product `g(x_a)·g(x_b)`.
pub fn covariance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

/// Dense symmetric `N×N` matrix of coupling constants, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n: usize,
    values: Vec<f64>,
    /// Per row, the half-open column ranges holding nonzero entries. Samples
    /// whose token pairs are disjoint never interact, so rows are mostly empty
    /// when K is large.
    runs: Vec<Vec<(usize, usize)>>,
}

fn nonzero_runs(row: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (j, &x) in row.iter().enumerate() {
        match (x != 0.0, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                runs.push((s, j));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, row.len()));
    }
    runs
}

impl InteractionMatrix {
    /// Row-major values; the matrix is assumed symmetric.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        let runs = if n == 0 { Vec::new() } else { values.chunks_exact(n).map(nonzero_runs).collect() };
        Ok(Self { n, values, runs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// `y = Cᵀ x`. Each output is reduced over its nonzero runs in a fixed
    /// order, so the result does not depend on how callers split the work.
    pub fn transpose_mul(&self, x: &[f64], y: &mut [f64]) {
        // C is symmetric, so row j of C is column j.
        for (j, out) in y.iter_mut().enumerate() {
            let row = self.row(j);
            *out = self.runs[j].iter().map(|&(a, b)| dot(&row[a..b], &x[a..b])).sum();
        }
    }

    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `C(x_i, x_j)` for every pair of training samples. The diagonal uses the
/// exact self inner product.
pub fn build_interaction_matrix(data: &Dataset) -> Result<InteractionMatrix> {
    let samples = &data.samples;
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let d = samples[0].embedding.len();
    if let Some(s) = samples.iter().find(|s| s.embedding.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.embedding.len(),
        });
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let share = preference_sharing(&samples[i], &samples[j]);
            let c = if share == 0 {
                0.0
            } else {
                f64::from(share) * dot(&samples[i].embedding, &samples[j].embedding)
            };
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    InteractionMatrix::from_values(n, values)
}

/// `C(x̃, x_i)` for one held-out sample against every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossInteractionRow {
    pub values: Vec<f64>,
}

pub fn build_cross_row(fresh: &PreferenceSample, data: &Dataset) -> Result<CrossInteractionRow> {
    let values = data
        .samples
        .iter()
        .map(|s| {
            let share = preference_sharing(fresh, s);
            if share == 0 {
                Ok(0.0)
            } else {
                Ok(f64::from(share) * covariance(&fresh.embedding, &s.embedding)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossInteractionRow { values })
}
