//! Experiment configuration. Every field has a default, so `{}` runs the
//! valid-regime baseline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prefdyn::bounds::TheoryParams;
use prefdyn::dynamics::{Integrator, SimConfig, WeightFn};
use prefdyn::prefdist::{DistributionSpec, TokenPair};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub k: usize,
    pub q: usize,
    pub d: usize,
    pub v: f64,
    pub l_b: f64,
    /// Target maximum token occurrence for the generated assignment.
    pub z: usize,
    /// Explicit (preferred, rejected) pair per cluster; overrides `z`.
    pub token_assignment: Option<Vec<TokenPair>>,
    pub vocab_size: Option<usize>,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        Self {
            k: 1,
            q: 100,
            d: 500,
            v: 0.025,
            l_b: 0.5,
            z: 1,
            token_assignment: None,
            vocab_size: None,
        }
    }
}

impl DistributionConfig {
    pub fn to_spec(&self) -> Result<DistributionSpec> {
        let mut spec = DistributionSpec::with_z(self.k, self.q, self.d, self.v, self.l_b, self.z)?;
        if let Some(vocab) = self.vocab_size {
            spec.vocab_size = spec.vocab_size.max(vocab);
        }
        if let Some(pairs) = &self.token_assignment {
            spec = spec.with_token_assignment(pairs.clone())?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightFnConfig {
    Dpo,
    /// `w(r) = c` for every margin.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub beta: f64,
    pub tau: f64,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    /// Horizon as a multiple of `τ₁`; ignored when `horizon` is set.
    pub horizon_fraction: Option<f64>,
    pub integrator: Integrator,
    pub weight_fn: WeightFnConfig,
    pub record_every: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tau: 1.0,
            step: None,
            horizon: None,
            horizon_fraction: None,
            integrator: Integrator::Rk4,
            weight_fn: WeightFnConfig::Dpo,
            record_every: 1,
        }
    }
}

impl SimSection {
    /// Core simulation settings for a dataset of `spec`.
    pub fn to_sim(&self, spec: &DistributionSpec) -> Result<SimConfig> {
        let t1 = prefdyn::bounds::tau1(spec.n(), self.tau, spec.q, self.beta);
        let horizon = match (self.horizon, self.horizon_fraction) {
            (Some(h), _) => Some(h),
            (None, Some(f)) => {
                if !(f > 0.0 && f.is_finite()) {
                    bail!("horizon_fraction = {f} must be positive");
                }
                Some(f * t1)
            }
            (None, None) => None,
        };
        // The grid stays at τ₁/1000 when only the horizon is shortened.
        let step = self.step.or((self.horizon.is_none() && self.horizon_fraction.is_some()).then_some(t1 / 1000.0));
        let cfg = SimConfig {
            beta: self.beta,
            tau: self.tau,
            step,
            horizon,
            integrator: self.integrator,
            weight_fn: match self.weight_fn {
                WeightFnConfig::Dpo => WeightFn::Dpo,
                WeightFnConfig::Constant(c) => WeightFn::constant(c),
            },
            record_every: self.record_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub c_const: f64,
    /// Overrides `1/(16v(Z+2))`.
    pub epsilon: Option<f64>,
    pub debug_appendix_slopes: bool,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            c_const: 1.0,
            epsilon: None,
            debug_appendix_slopes: false,
        }
    }
}

/// Either an explicit list or `replications` consecutive seeds from `base_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { base_seed: u64, replications: usize },
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::List(vec![0])
    }
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { base_seed, replications } => (0..*replications as u64).map(|i| base_seed + i).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Kv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Layout of the summary printed to stdout.
    pub format: Format,
    /// Write per-seed trajectory tables from `simulate`.
    pub trajectories: bool,
    /// Write per-seed training sets from `simulate`.
    pub datasets: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Table,
            trajectories: true,
            datasets: false,
        }
    }
}

/// Pass thresholds for the empirical checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Minimum fraction of seeds whose margins stay inside the envelopes.
    pub sandwich_fraction: f64,
    /// Minimum fraction of seeds with zero held-out error at the horizon.
    pub generalization_fraction: f64,
    /// Minimum fraction of trials where all five concentration families hold.
    pub concentration_fraction: f64,
    /// Allowed relative deviation of consecutive K-sweep slope ratios from the
    /// value ratio.
    pub slope_ratio_tolerance: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            sandwich_fraction: 0.95,
            generalization_fraction: 0.95,
            concentration_fraction: 0.99,
            slope_ratio_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum SweepParam {
    #[serde(rename = "K")]
    #[value(name = "K", alias = "k")]
    K,
    #[serde(rename = "Q")]
    #[value(name = "Q", alias = "q")]
    Q,
    #[serde(rename = "beta")]
    #[value(name = "beta")]
    Beta,
    #[serde(rename = "v")]
    #[value(name = "v")]
    V,
    #[serde(rename = "l_b")]
    #[value(name = "l_b")]
    LB,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::Q => "Q",
            SweepParam::Beta => "beta",
            SweepParam::V => "v",
            SweepParam::LB => "l_b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub vary: SweepParam,
    pub values: Vec<f64>,
    /// Initial slope is measured over `[0, slope_fraction · τ₁]`.
    pub slope_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            vary: SweepParam::K,
            values: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            slope_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitokenSection {
    pub instances: usize,
    pub vocab: usize,
    pub d: usize,
    pub len: usize,
    pub batch: usize,
    pub scale: f64,
    pub fd_step: f64,
    pub identity_tolerance: f64,
    pub fd_tolerance: f64,
    pub reduction_tolerance: f64,
}

impl Default for MultitokenSection {
    fn default() -> Self {
        Self {
            instances: 100,
            vocab: 6,
            d: 4,
            len: 3,
            batch: 4,
            scale: 0.8,
            fd_step: 1e-5,
            identity_tolerance: 1e-12,
            fd_tolerance: 1e-4,
            reduction_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub subtract_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: DistributionConfig,
    pub sim: SimSection,
    pub bounds: BoundsSection,
    /// Held-out samples per seed.
    pub fresh_count: usize,
    pub seeds: Seeds,
    pub outputs: OutputSection,
    pub checks: CheckSection,
    pub sweep: SweepSection,
    /// Monte Carlo trials for `concentration`; seeds are `seeds[0] + i`.
    pub trials: usize,
    pub multitoken: MultitokenSection,
    pub embed: EmbedSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            distribution: DistributionConfig::default(),
            sim: SimSection::default(),
            bounds: BoundsSection::default(),
            fresh_count: 1000,
            seeds: Seeds::default(),
            outputs: OutputSection::default(),
            checks: CheckSection::default(),
            sweep: SweepSection::default(),
            trials: 1000,
            multitoken: MultitokenSection::default(),
            embed: EmbedSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.distribution.to_spec()?;
        self.sim.to_sim(&spec)?;
        if !(self.bounds.c_const > 0.0) {
            bail!("bounds.c_const = {} must be positive", self.bounds.c_const);
        }
        if let Some(e) = self.bounds.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                bail!("bounds.epsilon = {e} must be positive");
            }
        }
        if self.seeds.resolve().is_empty() {
            bail!("seeds must not be empty");
        }
        if !(self.sweep.slope_fraction > 0.0 && self.sweep.slope_fraction <= 1.0) {
            bail!("sweep.slope_fraction = {} must lie in (0, 1]", self.sweep.slope_fraction);
        }
        Ok(())
    }

    pub fn theory_params(&self) -> TheoryParams {
        TheoryParams {
            beta: self.sim.beta,
            tau: self.sim.tau,
            c_const: self.bounds.c_const,
            epsilon: self.bounds.epsilon,
            appendix_slopes: self.bounds.debug_appendix_slopes,
        }
    }
}
