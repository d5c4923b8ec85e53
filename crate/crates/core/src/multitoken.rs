//! Token-wise reward decomposition on an explicit softmax model
//! `f(g) = softmax(W g)`, with the reward-gradient breakdown into
//! co-occurrence, probability, and output-distribution-correlation factors.
//!
//! Context embeddings `g(i, j, w/l)` are inputs; no sequence model is run.

use std::collections::BTreeMap;
use std::io::Read;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{keyed, STREAM_MULTITOKEN};
use crate::{dot, neg_log_sigmoid, sigmoid, Error, Result};

/// `log softmax(z)` with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Preferred,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    /// Policy unembedding, `vocab × d` row-major.
    pub w: Vec<f64>,
    /// Reference unembedding.
    pub w0: Vec<f64>,
    pub vocab: usize,
    pub d: usize,
    pub beta: f64,
}

impl SoftmaxModel {
    pub fn new(w: Vec<f64>, w0: Vec<f64>, vocab: usize, d: usize, beta: f64) -> Result<Self> {
        if vocab < 2 || d < 1 {
            return Err(Error::InvalidArgument(format!("need |V| >= 2 and d >= 1, got {vocab} and {d}")));
        }
        for m in [&w, &w0] {
            if m.len() != vocab * d {
                return Err(Error::DimensionMismatch {
                    expected: vocab * d,
                    found: m.len(),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("weights must be finite".into()));
            }
        }
        Ok(Self { w, w0, vocab, d, beta })
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: g.len(),
            });
        }
        Ok(())
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.vocab {
            return Err(Error::InvalidArgument(format!("token {token} outside vocabulary of size {}", self.vocab)));
        }
        Ok(())
    }

    fn logits_of(&self, m: &[f64], g: &[f64]) -> Vec<f64> {
        m.chunks_exact(self.d).map(|row| dot(row, g)).collect()
    }

    /// `S(W g)`.
    pub fn probs(&self, g: &[f64]) -> Vec<f64> {
        softmax(&self.logits_of(&self.w, g))
    }

    /// `β (log S(W g) − log S(W₀ g))` at `token`.
    pub fn token_reward(&self, g: &[f64], token: usize) -> Result<f64> {
        self.check_dim(g)?;
        self.check_token(token)?;
        let lp = log_softmax(&self.logits_of(&self.w, g));
        let lp0 = log_softmax(&self.logits_of(&self.w0, g));
        Ok(self.beta * (lp[token] - lp0[token]))
    }

    /// Sum of token rewards along one side of a sample.
    pub fn response_reward(&self, sample: &MultiTokenSample, side: Side) -> Result<f64> {
        let (ctx, toks) = sample.side(side);
        ctx.iter().zip(toks).map(|(g, &t)| self.token_reward(g, t)).sum()
    }

    /// `r(y_w) − r(y_l)`.
    pub fn margin(&self, sample: &MultiTokenSample) -> Result<f64> {
        Ok(self.response_reward(sample, Side::Preferred)? - self.response_reward(sample, Side::Rejected)?)
    }

    /// Batch DPO loss `(1/N) Σ −log σ(r(y_w) − r(y_l))`.
    pub fn batch_loss(&self, batch: &[MultiTokenSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        for s in batch {
            total += neg_log_sigmoid(self.margin(s)?);
        }
        Ok(total / batch.len() as f64)
    }
}

/// One preference pair with per-position context embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTokenSample {
    pub context_w: Vec<Vec<f64>>,
    pub context_l: Vec<Vec<f64>>,
    pub tokens_w: Vec<usize>,
    pub tokens_l: Vec<usize>,
}

impl MultiTokenSample {
    pub fn len(&self) -> usize {
        self.tokens_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens_w.is_empty()
    }

    pub fn side(&self, side: Side) -> (&[Vec<f64>], &[usize]) {
        match side {
            Side::Preferred => (&self.context_w, &self.tokens_w),
            Side::Rejected => (&self.context_l, &self.tokens_l),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let l = self.tokens_w.len();
        if l == 0 || self.tokens_l.len() != l || self.context_w.len() != l || self.context_l.len() != l {
            return Err(Error::InvalidArgument(format!(
                "response streams must share one positive length (w: {}/{}, l: {}/{})",
                self.tokens_w.len(),
                self.context_w.len(),
                self.tokens_l.len(),
                self.context_l.len()
            )));
        }
        for g in self.context_w.iter().chain(&self.context_l) {
            if g.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: g.len() });
            }
        }
        Ok(())
    }
}

fn validate_batch(model: &SoftmaxModel, batch: &[MultiTokenSample]) -> Result<()> {
    let first = batch.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for s in batch {
        s.validate(model.d)?;
        if s.len() != first.len() {
            return Err(Error::InvalidArgument("responses must share a fixed length across the batch".into()));
        }
        for &t in s.tokens_w.iter().chain(&s.tokens_l) {
            model.check_token(t)?;
        }
    }
    Ok(())
}

/// `τ Ẇ = (β/N) Σ_i σ(r(y_l) − r(y_w)) Σ_j (y_w gᵀ_w − y_l gᵀ_l − S(W g_w) gᵀ_w + S(W g_l) gᵀ_l)`,
/// i.e. the negative gradient of [`SoftmaxModel::batch_loss`].
pub fn weight_gradient(model: &SoftmaxModel, batch: &[MultiTokenSample]) -> Result<Vec<f64>> {
    validate_batch(model, batch)?;
    let d = model.d;
    let mut grad = vec![0.0; model.vocab * d];
    let mut accumulate = |g: &[f64], token: usize, coef: f64| {
        let p = model.probs(g);
        for (v, row) in grad.chunks_exact_mut(d).enumerate() {
            let a = coef * (f64::from(u8::from(v == token)) - p[v]);
            for (x, gm) in row.iter_mut().zip(g) {
                *x += a * gm;
            }
        }
    };
    let n = batch.len() as f64;
    for s in batch {
        let weight = model.beta / n * sigmoid(-model.margin(s)?);
        for j in 0..s.len() {
            accumulate(&s.context_w[j], s.tokens_w[j], weight);
            accumulate(&s.context_l[j], s.tokens_l[j], -weight);
        }
    }
    Ok(grad)
}

/// The three factor groups of `τ dr(y)/dt` for a probe token `y` with
/// embedding `g*`, already scaled by `β²/N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientBreakdown {
    pub cooccurrence: f64,
    pub probability: f64,
    pub distribution_corr: f64,
    /// `cooccurrence − probability + distribution_corr`.
    pub total: f64,
}

/// Factor decomposition of the probe's reward rate.
///
/// With `C* = g·g*` and `S* = S(W g*)`, each position contributes
/// `[yᵀy_w] C*_w − [yᵀy_l] C*_l` (co-occurrence), `p_w C*_w − p_l C*_l`
/// (probability, subtracted) with `p = S(W g)ᵀy + S*ᵀy_{w/l}`, and
/// `S*ᵀS(W g_w) C*_w − S*ᵀS(W g_l) C*_l` (distribution correlation).
pub fn reward_gradient_breakdown(
    model: &SoftmaxModel,
    batch: &[MultiTokenSample],
    probe_token: usize,
    probe_g: &[f64],
) -> Result<GradientBreakdown> {
    validate_batch(model, batch)?;
    model.check_dim(probe_g)?;
    model.check_token(probe_token)?;
    let probe_p = model.probs(probe_g);
    let (mut cooc, mut prob, mut corr) = (0.0, 0.0, 0.0);
    for s in batch {
        let weight = sigmoid(-model.margin(s)?);
        let (mut c_i, mut p_i, mut d_i) = (0.0, 0.0, 0.0);
        for j in 0..s.len() {
            for (g, token, sgn) in [(&s.context_w[j], s.tokens_w[j], 1.0), (&s.context_l[j], s.tokens_l[j], -1.0)] {
                let c_star = dot(g, probe_g);
                let p = model.probs(g);
                let hit = f64::from(u8::from(token == probe_token));
                c_i += sgn * hit * c_star;
                p_i += sgn * (p[probe_token] + probe_p[token]) * c_star;
                d_i += sgn * dot(&probe_p, &p) * c_star;
            }
        }
        cooc += weight * c_i;
        prob += weight * p_i;
        corr += weight * d_i;
    }
    let scale = model.beta * model.beta / batch.len() as f64;
    let (cooccurrence, probability, distribution_corr) = (scale * cooc, scale * prob, scale * corr);
    Ok(GradientBreakdown {
        cooccurrence,
        probability,
        distribution_corr,
        total: cooccurrence - probability + distribution_corr,
    })
}

/// `τ dr(y)/dt = β (y − S(W g*))ᵀ (τ Ẇ) g*`, the chain-rule contraction of a
/// weight gradient with the probe's token-reward sensitivity.
pub fn reward_rate(model: &SoftmaxModel, grad: &[f64], probe_token: usize, probe_g: &[f64]) -> Result<f64> {
    model.check_dim(probe_g)?;
    model.check_token(probe_token)?;
    if grad.len() != model.vocab * model.d {
        return Err(Error::DimensionMismatch {
            expected: model.vocab * model.d,
            found: grad.len(),
        });
    }
    let p = model.probs(probe_g);
    Ok(model.beta
        * grad
            .chunks_exact(model.d)
            .enumerate()
            .map(|(v, row)| (f64::from(u8::from(v == probe_token)) - p[v]) * dot(row, probe_g))
            .sum::<f64>())
}

/// Shape of a randomly drawn model and batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub vocab: usize,
    pub d: usize,
    pub len: usize,
    pub batch: usize,
    pub beta: f64,
    /// Standard deviation of the entries of `W`, `W₀`, and the embeddings.
    pub scale: f64,
}

/// Random model and batch, reproducible from `seed`.
pub fn random_instance(seed: u64, shape: InstanceShape) -> Result<(SoftmaxModel, Vec<MultiTokenSample>)> {
    let mut rng = keyed(seed, STREAM_MULTITOKEN);
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| shape.scale * rng.sample::<f64, _>(StandardNormal)).collect() };
    let w = gauss(shape.vocab * shape.d);
    let w0 = gauss(shape.vocab * shape.d);
    let mut contexts = Vec::with_capacity(shape.batch);
    for _ in 0..shape.batch {
        let cw: Vec<Vec<f64>> = (0..shape.len).map(|_| gauss(shape.d)).collect();
        let cl: Vec<Vec<f64>> = (0..shape.len).map(|_| gauss(shape.d)).collect();
        contexts.push((cw, cl));
    }
    let model = SoftmaxModel::new(w, w0, shape.vocab, shape.d, shape.beta)?;
    let batch = contexts
        .into_iter()
        .map(|(context_w, context_l)| {
            let tokens_w: Vec<usize> = (0..shape.len).map(|_| rng.random_range(0..shape.vocab)).collect();
            let tokens_l: Vec<usize> = (0..shape.len).map(|_| rng.random_range(0..shape.vocab)).collect();
            MultiTokenSample {
                context_w,
                context_l,
                tokens_w,
                tokens_l,
            }
        })
        .collect();
    Ok((model, batch))
}

/// Parses a batch table: `sample_id, side, position, token, g_1..g_d`.
/// `side` is `w` or `l`; positions are 0-based and must be contiguous.
pub fn read_batch<R: Read>(input: R, d: usize) -> Result<Vec<MultiTokenSample>> {
    type Stream = BTreeMap<usize, (usize, Vec<f64>)>;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let mut samples: BTreeMap<String, (Stream, Stream)> = BTreeMap::new();
    let mut order = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let err = |column: usize, message: String| Error::Parse { line, column, message };
        if rec.len() != 4 + d {
            return Err(err(rec.len(), format!("expected {} columns", 4 + d)));
        }
        let id = rec[0].to_string();
        let pos: usize = rec[2].parse().map_err(|e| err(3, format!("{e}")))?;
        let token: usize = rec[3].parse().map_err(|e| err(4, format!("{e}")))?;
        let g = (4..4 + d)
            .map(|c| rec[c].parse::<f64>().map_err(|e| err(c + 1, format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        if !samples.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = samples.entry(id).or_default();
        let stream = match &rec[1] {
            "w" => &mut entry.0,
            "l" => &mut entry.1,
            other => return Err(err(2, format!("side must be w or l, got {other:?}"))),
        };
        if stream.insert(pos, (token, g)).is_some() {
            return Err(err(3, format!("duplicate position {pos}")));
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (w, l) = samples.remove(&id).unwrap_or_default();
            let unpack = |s: Stream| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
                if s.keys().enumerate().any(|(i, &p)| i != p) {
                    return Err(Error::InvalidArgument(format!("sample {id}: positions must be 0..L")));
                }
                Ok(s.into_values().map(|(t, g)| (g, t)).unzip())
            };
            let (context_w, tokens_w) = unpack(w)?;
            let (context_l, tokens_l) = unpack(l)?;
            let sample = MultiTokenSample {
                context_w,
                context_l,
                tokens_w,
                tokens_l,
            };
            sample.validate(d)?;
            Ok(sample)
        })
        .collect()
}
