//! WebAssembly bindings for the static demo page in `www/`. Every export takes
//! a JSON parameter object (missing fields fall back to the valid-regime
//! baseline) and returns a JSON string.

use prefdyn::bounds::{sandwich_holds, theory_report, TheoryParams};
use prefdyn::dynamics::{integrate, SimConfig};
use prefdyn::embedanalysis::{mean_similarity_matrix, subtract_shared_component, EmbeddingCorpus};
use prefdyn::prefdist::{sample_dataset, sample_fresh, DistributionSpec};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Largest training set the page will integrate.
const MAX_N: usize = 4000;
const MAX_D: usize = 2000;
const MAX_FRESH: usize = 5000;
/// Sample paths sent back for plotting.
const SHOWN_PATHS: usize = 12;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub k: usize,
    pub q: usize,
    pub d: usize,
    pub v: f64,
    pub l_b: f64,
    pub z: usize,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    pub fresh: usize,
    /// Horizon as a multiple of τ₁.
    pub horizon_fraction: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            k: 1,
            q: 100,
            d: 500,
            v: 0.025,
            l_b: 0.5,
            z: 1,
            beta: 1.0,
            tau: 1.0,
            seed: 0,
            fresh: 200,
            horizon_fraction: 1.0,
        }
    }
}

impl DemoParams {
    fn parse(json: &str) -> Result<Self, String> {
        let p: Self = if json.trim().is_empty() { Self::default() } else { serde_json::from_str(json).map_err(|e| e.to_string())? };
        let n = 2 * p.k * p.q;
        if n > MAX_N || p.d > MAX_D || p.fresh > MAX_FRESH {
            return Err(format!("demo limits: 2KQ <= {MAX_N}, d <= {MAX_D}, fresh <= {MAX_FRESH} (got {n}, {}, {})", p.d, p.fresh));
        }
        if !(p.horizon_fraction > 0.0 && p.horizon_fraction <= 10.0) {
            return Err(format!("horizon_fraction = {} must lie in (0, 10]", p.horizon_fraction));
        }
        Ok(p)
    }

    fn spec(&self) -> Result<DistributionSpec, String> {
        DistributionSpec::with_z(self.k, self.q, self.d, self.v, self.l_b, self.z).map_err(|e| e.to_string())
    }

    fn theory(&self) -> TheoryParams {
        TheoryParams {
            beta: self.beta,
            tau: self.tau,
            ..Default::default()
        }
    }
}

#[derive(Serialize)]
struct Trajectories {
    tau1: f64,
    times: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    mean: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    paths: Vec<Vec<f64>>,
    fresh_error: Vec<f64>,
    sandwich: bool,
    warnings: Vec<String>,
}

/// Integrates one seed and returns envelope, summary, and a few sample paths
/// at up to about 200 time points.
pub fn margin_trajectories_json(params: &str) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let spec = p.spec()?;
    let report = theory_report(&spec, &p.theory()).map_err(|e| e.to_string())?;
    let horizon = p.horizon_fraction * report.tau1;
    let cfg = SimConfig {
        beta: p.beta,
        tau: p.tau,
        horizon: Some(horizon),
        step: Some(report.tau1 / 1000.0),
        record_every: ((p.horizon_fraction * 1000.0 / 200.0).ceil() as usize).max(1),
        ..Default::default()
    };
    let data = sample_dataset(&spec, p.seed).map_err(|e| e.to_string())?;
    let fresh = if p.fresh > 0 { sample_fresh(&spec, p.fresh, p.seed).map_err(|e| e.to_string())? } else { Vec::new() };
    let rec = integrate(&data, &fresh, &cfg).map_err(|e| e.to_string())?;
    let stride = (data.len() / SHOWN_PATHS).max(1);
    let shown: Vec<usize> = (0..data.len()).step_by(stride).take(SHOWN_PATHS).collect();
    let fold = |f: fn(f64, f64) -> f64, init: f64| rec.train_margins.iter().map(|m| m.iter().copied().fold(init, f)).collect();
    let warnings = report
        .conditions
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {} vs {}", c.name, c.lhs, c.rhs))
        .collect();
    let out = Trajectories {
        tau1: report.tau1,
        lower: rec.times.iter().map(|t| report.r_lower_slope * t.min(report.tau1)).collect(),
        upper: rec.times.iter().map(|t| report.r_upper_slope * t.min(report.tau1)).collect(),
        mean: (0..rec.times.len()).map(|k| rec.mean_train_margin(k)).collect(),
        min: fold(f64::min, f64::INFINITY),
        max: fold(f64::max, f64::NEG_INFINITY),
        paths: shown.iter().map(|&i| rec.train_margins.iter().map(|m| m[i]).collect()).collect(),
        fresh_error: if fresh.is_empty() { Vec::new() } else { (0..rec.times.len()).map(|k| rec.fresh_error_rate(k)).collect() },
        sandwich: sandwich_holds(&rec, &report),
        warnings,
        times: rec.times,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Heatmap {
    labels: Vec<String>,
    values: Vec<f64>,
    off_diagonal_mean: Option<f64>,
}

/// Concept×concept mean cosine similarity of a sampled training set.
pub fn similarity_matrix_json(params: &str, subtract_mean: bool) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let data = sample_dataset(&p.spec()?, p.seed).map_err(|e| e.to_string())?;
    let corpus = EmbeddingCorpus::from_dataset(&data).map_err(|e| e.to_string())?;
    let corpus = if subtract_mean { subtract_shared_component(&corpus) } else { corpus };
    let m = mean_similarity_matrix(&corpus).map_err(|e| e.to_string())?;
    let out = Heatmap {
        off_diagonal_mean: m.off_diagonal_mean(),
        labels: m.labels,
        values: m.values,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Closed-form horizon, envelopes, condition checks, and bound values.
pub fn theory_bounds_json(params: &str) -> Result<String, String> {
    let p = DemoParams::parse(params)?;
    let report = theory_report(&p.spec()?, &p.theory()).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn margin_trajectories(params: &str) -> Result<String, JsError> {
    margin_trajectories_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn similarity_matrix(params: &str, subtract_mean: bool) -> Result<String, JsError> {
    similarity_matrix_json(params, subtract_mean).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn theory_bounds(params: &str) -> Result<String, JsError> {
    theory_bounds_json(params).map_err(|e| JsError::new(&e))
}
