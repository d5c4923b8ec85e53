//! Synthetic preference distribution: `K` pairs of Gaussian concept clusters.
//!
//! Cluster pair `i` has means `b ± c_i` with `b = l_b·e_1` and `c_i = e_{i+2}`
//! (zero-based: axis 0 carries the shared component, axis `i + 1` the concept).
//! Every sample in the aligned cluster prefers the same token over the same
//! rejected token; the misaligned cluster carries the swapped pair.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{keyed, STREAM_FRESH, STREAM_TRAIN};
use crate::{Error, Result};

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Aligned,
    #[serde(rename = "-")]
    Misaligned,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Aligned => 1.0,
            Sign::Misaligned => -1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Aligned => "+",
            Sign::Misaligned => "-",
        }
    }

    pub fn parse(s: &str) -> Option<Sign> {
        match s.trim() {
            "+" | "+1" | "1" | "aligned" | "pos" => Some(Sign::Aligned),
            "-" | "-1" | "0" | "misaligned" | "neg" => Some(Sign::Misaligned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenPair {
    pub preferred: TokenId,
    pub rejected: TokenId,
}

impl TokenPair {
    pub fn new(preferred: TokenId, rejected: TokenId) -> Self {
        Self {
            preferred,
            rejected,
        }
    }

    pub fn swapped(self) -> Self {
        Self::new(self.rejected, self.preferred)
    }
}

/// Deterministic token assignment realising a target maximum token multiplicity.
///
/// Pairs are built in groups of `min(z_target, remaining)`: a fresh pair
/// `(a, h)` followed by `(h, b_1), (h, b_2), ...`, so the hub token `h` occurs
/// exactly once per pair of its group. The attainable maximum is `k`, since a
/// token can occur in at most every pair.
pub fn default_token_assignment(k: usize, z_target: usize) -> Vec<TokenPair> {
    let group = z_target.max(1);
    let mut pairs = Vec::with_capacity(k);
    let mut next = 0;
    while pairs.len() < k {
        let size = group.min(k - pairs.len());
        let (a, hub) = (next, next + 1);
        next += 2;
        pairs.push(TokenPair::new(a, hub));
        for _ in 1..size {
            pairs.push(TokenPair::new(hub, next));
            next += 1;
        }
    }
    pairs
}

/// Maximum number of response pairs any single token occurs in.
pub fn max_token_occurrence(assignment: &[TokenPair]) -> usize {
    let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
    for p in assignment {
        *counts.entry(p.preferred).or_default() += 1;
        *counts.entry(p.rejected).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    /// Number of concept cluster pairs.
    pub k: usize,
    /// Samples per cluster.
    pub q: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Per-coordinate noise standard deviation.
    pub v: f64,
    /// Norm of the shared component `b`.
    pub l_b: f64,
    /// Token pair of the aligned cluster of each concept.
    pub token_assignment: Vec<TokenPair>,
    pub vocab_size: usize,
}

impl DistributionSpec {
    /// Spec with disjoint token pairs (`Z = 1`).
    pub fn new(k: usize, q: usize, d: usize, v: f64, l_b: f64) -> Result<Self> {
        Self::with_z(k, q, d, v, l_b, 1)
    }

    pub fn with_z(k: usize, q: usize, d: usize, v: f64, l_b: f64, z_target: usize) -> Result<Self> {
        let token_assignment = default_token_assignment(k, z_target);
        let vocab_size = vocab_for(&token_assignment);
        let spec = Self {
            k,
            q,
            d,
            v,
            l_b,
            token_assignment,
            vocab_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_token_assignment(mut self, assignment: Vec<TokenPair>) -> Result<Self> {
        self.vocab_size = self.vocab_size.max(vocab_for(&assignment));
        self.token_assignment = assignment;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.k < 1 {
            return bad("K must be at least 1".into());
        }
        if self.q < 1 {
            return bad("Q must be at least 1".into());
        }
        if self.d < self.k + 1 {
            return bad(format!("d = {} must be at least K + 1 = {}", self.d, self.k + 1));
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return bad(format!("v = {} must be positive and finite", self.v));
        }
        if !(0.0..=1.0).contains(&self.l_b) {
            return bad(format!("l_b = {} must lie in [0, 1]", self.l_b));
        }
        if self.token_assignment.len() != self.k {
            return bad(format!(
                "token assignment has {} pairs, expected K = {}",
                self.token_assignment.len(),
                self.k
            ));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.token_assignment.iter().enumerate() {
            if p.preferred == p.rejected {
                return bad(format!("cluster {i}: preferred and rejected token coincide"));
            }
            if p.preferred >= self.vocab_size || p.rejected >= self.vocab_size {
                return bad(format!("cluster {i}: token id outside vocabulary of size {}", self.vocab_size));
            }
            // (a, b) and (b, a) would make two concepts exact opposites.
            let key = (p.preferred.min(p.rejected), p.preferred.max(p.rejected));
            if !seen.insert(key) {
                return bad(format!("cluster {i}: duplicate token pair {:?}", key));
            }
        }
        Ok(())
    }

    /// Maximum occurrence count of any token across all response pairs.
    pub fn z(&self) -> usize {
        max_token_occurrence(&self.token_assignment)
    }

    /// Training-set size `2KQ`.
    pub fn n(&self) -> usize {
        2 * self.k * self.q
    }

    /// Coordinate carrying concept `cluster`.
    pub fn concept_axis(&self, cluster: usize) -> usize {
        cluster + 1
    }

    pub fn cluster_mean(&self, cluster: usize, sign: Sign) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        mean[0] = self.l_b;
        mean[self.concept_axis(cluster)] += sign.as_f64();
        mean
    }

    pub fn tokens(&self, cluster: usize, sign: Sign) -> TokenPair {
        let p = self.token_assignment[cluster];
        match sign {
            Sign::Aligned => p,
            Sign::Misaligned => p.swapped(),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, cluster: usize, sign: Sign) -> PreferenceSample {
        let mut embedding = self.cluster_mean(cluster, sign);
        for x in embedding.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += self.v * z;
        }
        let tokens = self.tokens(cluster, sign);
        PreferenceSample {
            embedding,
            preferred_token: tokens.preferred,
            rejected_token: tokens.rejected,
            cluster,
            sign,
        }
    }
}

fn vocab_for(assignment: &[TokenPair]) -> usize {
    assignment
        .iter()
        .map(|p| p.preferred.max(p.rejected) + 1)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSample {
    /// Feature `g(x)`, used as-is.
    pub embedding: Vec<f64>,
    pub preferred_token: TokenId,
    pub rejected_token: TokenId,
    pub cluster: usize,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DistributionSpec,
    /// Ordered by cluster, then sign (aligned first), then draw index.
    pub samples: Vec<PreferenceSample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes one row per sample: id, cluster, sign, tokens, then coordinates.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "sample_id".to_string(),
            "cluster".into(),
            "sign".into(),
            "preferred_token".into(),
            "rejected_token".into(),
        ];
        header.extend((0..self.spec.d).map(|m| format!("g{m}")));
        w.write_record(&header)?;
        for (id, s) in self.samples.iter().enumerate() {
            let mut row = vec![
                id.to_string(),
                s.cluster.to_string(),
                s.sign.symbol().to_string(),
                s.preferred_token.to_string(),
                s.rejected_token.to_string(),
            ];
            row.extend(s.embedding.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar metadata: the full spec and seed as JSON.
    pub fn write_metadata<W: Write>(&self, out: W) -> Result<()> {
        let meta = DatasetMetadata {
            spec: self.spec.clone(),
            seed: self.seed,
            n: self.len(),
            z: self.spec.z(),
        };
        serde_json::to_writer_pretty(out, &meta)?;
        Ok(())
    }

    /// Reads back a table written by [`Dataset::write_table`].
    pub fn read_table<R: Read>(input: R, meta: DatasetMetadata) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(input);
        let d = meta.spec.d;
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line + 2;
            if rec.len() != 5 + d {
                return Err(Error::Parse {
                    line,
                    column: rec.len(),
                    message: format!("expected {} columns", 5 + d),
                });
            }
            let int = |c: usize| -> Result<usize> {
                rec[c].trim().parse().map_err(|e| Error::Parse {
                    line,
                    column: c + 1,
                    message: format!("{e}"),
                })
            };
            let sign = Sign::parse(&rec[2]).ok_or_else(|| Error::Parse {
                line,
                column: 3,
                message: format!("unknown sign {:?}", &rec[2]),
            })?;
            let mut embedding = Vec::with_capacity(d);
            for c in 5..5 + d {
                embedding.push(rec[c].trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    column: c + 1,
                    message: format!("{e}"),
                })?);
            }
            samples.push(PreferenceSample {
                embedding,
                cluster: int(1)?,
                sign,
                preferred_token: int(3)?,
                rejected_token: int(4)?,
            });
        }
        Ok(Dataset {
            spec: meta.spec,
            samples,
            seed: meta.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub spec: DistributionSpec,
    pub seed: u64,
    pub n: usize,
    pub z: usize,
}

/// Draws exactly `Q` samples per (cluster, sign) pair.
pub fn sample_dataset(spec: &DistributionSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = keyed(seed, STREAM_TRAIN);
    let mut samples = Vec::with_capacity(spec.n());
    for cluster in 0..spec.k {
        for sign in [Sign::Aligned, Sign::Misaligned] {
            for _ in 0..spec.q {
                samples.push(spec.draw(&mut rng, cluster, sign));
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        seed,
    })
}

/// Held-out draws from the mixture: each sample picks one of the `2K`
/// equally weighted clusters. Uses a stream independent of the training draw.
pub fn sample_fresh(spec: &DistributionSpec, m: usize, seed: u64) -> Result<Vec<PreferenceSample>> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::InvalidArgument("fresh sample count must be positive".into()));
    }
    let mut rng = keyed(seed, STREAM_FRESH);
    Ok((0..m)
        .map(|_| {
            let c = rng.random_range(0..2 * spec.k);
            let sign = if c % 2 == 0 { Sign::Aligned } else { Sign::Misaligned };
            spec.draw(&mut rng, c / 2, sign)
        })
        .collect())
}
