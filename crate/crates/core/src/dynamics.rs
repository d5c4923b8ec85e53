//! Gradient flow of the reward margins.
//!
//! Training margins follow `τ ṙ_j = (β²/N) Σ_i w(r_i) C(x_i, x_j)` with
//! `w(r) = σ(−r)` for DPO. Held-out margins are driven by the same training
//! weights through `C(x̃, x_i)` and never feed back into the training system.
//!
//! Held-out margins are linear in `s_i(t) = ∫₀ᵗ w(r_i)`, so the integrator
//! carries `s` alongside `r` and evaluates `r̃ = (β²/(Nτ)) C̃·s` only at
//! recorded times. Because every stage of Euler and RK4 is linear in the
//! stage weights, this equals integrating each `r̃` directly.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::tau1;
use crate::interaction::{build_cross_row, build_interaction_matrix, CrossInteractionRow, InteractionMatrix};
use crate::prefdist::{Dataset, PreferenceSample};
use crate::{dot, neg_log_sigmoid, sigmoid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Scalar weight multiplying `C` in the margin ODE.
#[derive(Clone, Default)]
pub enum WeightFn {
    /// `σ(−r)`.
    #[default]
    Dpo,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl WeightFn {
    pub fn dpo() -> Self {
        WeightFn::Dpo
    }

    /// Caller-supplied `w(r)`, used verbatim in place of `σ(−r)`.
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        WeightFn::Custom(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::custom(move |_| c)
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        let value = match self {
            WeightFn::Dpo => sigmoid(-r),
            WeightFn::Custom(f) => f(r),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteWeight { margin: r, value })
        }
    }
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Dpo => f.write_str("Dpo"),
            WeightFn::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub beta: f64,
    pub tau: f64,
    /// Step size; `None` means `horizon / 1000`.
    pub step: Option<f64>,
    /// End time; `None` means `τ₁` of the dataset.
    pub horizon: Option<f64>,
    pub integrator: Integrator,
    pub weight_fn: WeightFn,
    /// Record every n-th step (the final step is always recorded).
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tau: 1.0,
            step: None,
            horizon: None,
            integrator: Integrator::Rk4,
            weight_fn: WeightFn::Dpo,
            record_every: 1,
        }
    }
}

/// Resolved time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub step: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Schedule {
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.step
        }
    }
}

impl SimConfig {
    pub fn set_weight_fn(&mut self, weight_fn: WeightFn) {
        self.weight_fn = weight_fn;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be positive", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if let Some(h) = self.step {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("step = {h} must be positive"));
            }
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("horizon = {t} must be positive"));
            }
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        Ok(())
    }

    /// Resolves the grid for a training set of size `n` with `q` samples per
    /// cluster.
    pub fn schedule(&self, n: usize, q: usize) -> Result<Schedule> {
        self.validate()?;
        let horizon = self.horizon.unwrap_or_else(|| tau1(n, self.tau, q, self.beta));
        let step = self.step.unwrap_or(horizon / 1000.0);
        if horizon < step {
            return Err(Error::InvalidConfig(format!("horizon {horizon} shorter than step {step}")));
        }
        let steps = ((horizon / step) - 1e-9).ceil().max(1.0) as usize;
        Ok(Schedule { step, horizon, steps })
    }
}

/// Margin time series. Row `k` of each field corresponds to `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub train_margins: Vec<Vec<f64>>,
    pub fresh_margins: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn final_train(&self) -> &[f64] {
        self.train_margins.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_fresh(&self) -> &[f64] {
        self.fresh_margins.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mean_train_margin(&self, k: usize) -> f64 {
        let r = &self.train_margins[k];
        r.iter().sum::<f64>() / r.len() as f64
    }

    /// Empirical 0-1 risk of the held-out samples at record `k`.
    pub fn fresh_error_rate(&self, k: usize) -> f64 {
        let r = &self.fresh_margins[k];
        if r.is_empty() {
            return 0.0;
        }
        r.iter().filter(|&&x| x <= 0.0).count() as f64 / r.len() as f64
    }

    /// Columns: time, r_1..r_N, fresh_1..fresh_M, loss.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.train_margins.first().map_or(0, Vec::len);
        let m = self.fresh_margins.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend((1..=n).map(|i| format!("r_{i}")));
        header.extend((1..=m).map(|i| format!("fresh_{i}")));
        header.push("loss".into());
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = Vec::with_capacity(n + m + 2);
            row.push(self.times[k].to_string());
            row.extend(self.train_margins[k].iter().map(|x| x.to_string()));
            row.extend(self.fresh_margins[k].iter().map(|x| x.to_string()));
            row.push(self.loss[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn empirical_loss(margins: &[f64]) -> f64 {
    margins.iter().map(|&r| neg_log_sigmoid(r)).sum::<f64>() / margins.len() as f64
}

/// `ṙ = (β²/(Nτ)) · Cᵀ w(r)`.
pub fn margin_rhs(margins: &[f64], c: &InteractionMatrix, cfg: &SimConfig) -> Result<Vec<f64>> {
    if margins.len() != c.n() {
        return Err(Error::DimensionMismatch {
            expected: c.n(),
            found: margins.len(),
        });
    }
    let weights = margins.iter().map(|&r| cfg.weight_fn.eval(r)).collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; margins.len()];
    c.transpose_mul(&weights, &mut out);
    let scale = cfg.beta * cfg.beta / (c.n() as f64 * cfg.tau);
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(out)
}

/// Training interactions plus held-out cross rows.
#[derive(Debug, Clone)]
pub struct MarginSystem {
    pub interactions: InteractionMatrix,
    pub cross: Vec<CrossInteractionRow>,
}

struct Derivative {
    margins: Vec<f64>,
    weights: Vec<f64>,
}

impl MarginSystem {
    pub fn new(data: &Dataset, fresh: &[PreferenceSample]) -> Result<Self> {
        let interactions = build_interaction_matrix(data)?;
        let cross = fresh.iter().map(|f| build_cross_row(f, data)).collect::<Result<Vec<_>>>()?;
        Ok(Self { interactions, cross })
    }

    pub fn n(&self) -> usize {
        self.interactions.n()
    }

    fn derivative(&self, r: &[f64], cfg: &SimConfig, scale: f64, out: &mut Derivative) -> Result<()> {
        for (w, &ri) in out.weights.iter_mut().zip(r) {
            *w = cfg.weight_fn.eval(ri)?;
        }
        self.interactions.transpose_mul(&out.weights, &mut out.margins);
        out.margins.iter_mut().for_each(|x| *x *= scale);
        Ok(())
    }

    fn fresh_margins(&self, integrals: &[f64], scale: f64) -> Vec<f64> {
        self.cross.iter().map(|row| scale * dot(&row.values, integrals)).collect()
    }

    pub fn integrate(&self, cfg: &SimConfig, schedule: Schedule) -> Result<TrajectoryRecord> {
        cfg.validate()?;
        let n = self.n();
        let scale = cfg.beta * cfg.beta / (n as f64 * cfg.tau);
        let mut r = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut rec = TrajectoryRecord {
            times: vec![0.0],
            train_margins: vec![r.clone()],
            fresh_margins: vec![vec![0.0; self.cross.len()]],
            loss: vec![empirical_loss(&r)],
        };
        let new_deriv = || Derivative {
            margins: vec![0.0; n],
            weights: vec![0.0; n],
        };
        let mut k1 = new_deriv();
        let (mut k2, mut k3, mut k4) = (new_deriv(), new_deriv(), new_deriv());
        let mut tmp = vec![0.0; n];

        for k in 1..=schedule.steps {
            let h = schedule.time(k) - schedule.time(k - 1);
            match cfg.integrator {
                Integrator::Euler => {
                    self.derivative(&r, cfg, scale, &mut k1)?;
                    for i in 0..n {
                        r[i] += h * k1.margins[i];
                        s[i] += h * k1.weights[i];
                    }
                }
                Integrator::Rk4 => {
                    self.derivative(&r, cfg, scale, &mut k1)?;
                    for i in 0..n {
                        tmp[i] = r[i] + 0.5 * h * k1.margins[i];
                    }
                    self.derivative(&tmp, cfg, scale, &mut k2)?;
                    for i in 0..n {
                        tmp[i] = r[i] + 0.5 * h * k2.margins[i];
                    }
                    self.derivative(&tmp, cfg, scale, &mut k3)?;
                    for i in 0..n {
                        tmp[i] = r[i] + h * k3.margins[i];
                    }
                    self.derivative(&tmp, cfg, scale, &mut k4)?;
                    for i in 0..n {
                        r[i] += h / 6.0 * (k1.margins[i] + 2.0 * k2.margins[i] + 2.0 * k3.margins[i] + k4.margins[i]);
                        s[i] += h / 6.0 * (k1.weights[i] + 2.0 * k2.weights[i] + 2.0 * k3.weights[i] + k4.weights[i]);
                    }
                }
            }
            let t = schedule.time(k);
            if let Some(index) = r.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { time: t, index });
            }
            if k % cfg.record_every == 0 || k == schedule.steps {
                rec.times.push(t);
                rec.train_margins.push(r.clone());
                rec.fresh_margins.push(self.fresh_margins(&s, scale));
                rec.loss.push(empirical_loss(&r));
            }
        }
        Ok(rec)
    }
}

/// Integrates training and held-out margins from zero.
pub fn integrate(data: &Dataset, fresh: &[PreferenceSample], cfg: &SimConfig) -> Result<TrajectoryRecord> {
    let schedule = cfg.schedule(data.len(), data.spec.q)?;
    MarginSystem::new(data, fresh)?.integrate(cfg, schedule)
}

/// Offset `ΔW = W − W₀` of the unembedding matrix, `|V|×d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub delta_w: Vec<f64>,
    pub vocab: usize,
    pub d: usize,
}

impl WeightState {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        Self {
            delta_w: vec![0.0; vocab * d],
            vocab,
            d,
        }
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.delta_w[token * self.d..(token + 1) * self.d]
    }

    fn row_mut(&mut self, token: usize) -> &mut [f64] {
        &mut self.delta_w[token * self.d..(token + 1) * self.d]
    }

    /// `r = β (y_w − y_l)ᵀ ΔW g`.
    pub fn margin(&self, sample: &PreferenceSample, beta: f64) -> f64 {
        let g = &sample.embedding;
        beta * (dot(self.row(sample.preferred_token), g) - dot(self.row(sample.rejected_token), g))
    }

    pub fn margins(&self, data: &Dataset, beta: f64) -> Vec<f64> {
        data.samples.iter().map(|s| self.margin(s, beta)).collect()
    }

    /// One forward-Euler step of `τ ΔẆ = (β/N) Σ w(r_i)(y_w,i − y_l,i) g_iᵀ`.
    pub fn euler_step(&mut self, data: &Dataset, cfg: &SimConfig, h: f64) -> Result<()> {
        let margins = self.margins(data, cfg.beta);
        let coef = h / cfg.tau * cfg.beta / data.len() as f64;
        for (s, &r) in data.samples.iter().zip(&margins) {
            let a = coef * cfg.weight_fn.eval(r)?;
            for (w, g) in self.row_mut(s.preferred_token).iter_mut().zip(&s.embedding) {
                *w += a * g;
            }
            for (w, g) in self.row_mut(s.rejected_token).iter_mut().zip(&s.embedding) {
                *w -= a * g;
            }
        }
        Ok(())
    }
}

/// Weight-space forward-Euler integration; margins are read from `ΔW` at
/// each recorded time. Ignores `cfg.integrator`.
pub fn integrate_weights(data: &Dataset, cfg: &SimConfig) -> Result<TrajectoryRecord> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let schedule = cfg.schedule(data.len(), data.spec.q)?;
    let d = data.samples[0].embedding.len();
    let vocab = data
        .samples
        .iter()
        .map(|s| s.preferred_token.max(s.rejected_token) + 1)
        .max()
        .unwrap_or(0)
        .max(data.spec.vocab_size);
    let mut state = WeightState::zeros(vocab, d);
    let r0 = state.margins(data, cfg.beta);
    let mut rec = TrajectoryRecord {
        times: vec![0.0],
        loss: vec![empirical_loss(&r0)],
        train_margins: vec![r0],
        fresh_margins: vec![vec![]],
    };
    for k in 1..=schedule.steps {
        let h = schedule.time(k) - schedule.time(k - 1);
        state.euler_step(data, cfg, h)?;
        if k % cfg.record_every == 0 || k == schedule.steps {
            let r = state.margins(data, cfg.beta);
            let t = schedule.time(k);
            if let Some(index) = r.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { time: t, index });
            }
            rec.times.push(t);
            rec.loss.push(empirical_loss(&r));
            rec.train_margins.push(r);
            rec.fresh_margins.push(vec![]);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefdist::{sample_dataset, DistributionSpec};
    use std::f64::consts::LN_2;

    fn single(c: f64) -> InteractionMatrix {
        InteractionMatrix::from_values(1, vec![c]).unwrap()
    }

    #[test]
    fn rhs_at_zero_is_half_column_sums() {
        let c = InteractionMatrix::from_values(2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let cfg = SimConfig {
            beta: 2.0,
            tau: 0.5,
            ..Default::default()
        };
        let rhs = margin_rhs(&[0.0, 0.0], &c, &cfg).unwrap();
        let scale = 4.0 / (2.0 * 0.5);
        assert!((rhs[0] - scale * 0.5 * 3.0).abs() < 1e-15);
        assert!((rhs[1] - scale * 0.5 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_interactions_keep_margins_at_zero() {
        let c = InteractionMatrix::from_values(3, vec![0.0; 9]).unwrap();
        let system = MarginSystem {
            interactions: c,
            cross: vec![],
        };
        let cfg = SimConfig::default();
        let sched = Schedule {
            step: 0.1,
            horizon: 1.0,
            steps: 10,
        };
        let rec = system.integrate(&cfg, sched).unwrap();
        assert!(rec.train_margins.iter().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn loss_starts_at_log_two() {
        let spec = DistributionSpec::new(2, 5, 4, 0.05, 0.5).unwrap();
        let data = sample_dataset(&spec, 1).unwrap();
        let rec = integrate(&data, &[], &SimConfig::default()).unwrap();
        assert!((rec.loss[0] - LN_2).abs() < 1e-15);
        assert!(rec.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(rec.times.len(), 1001);
        assert!(rec.loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn weight_fn_contract() {
        assert_eq!(WeightFn::dpo().eval(0.0).unwrap(), 0.5);
        assert!(WeightFn::dpo().eval(60.0).unwrap() < 1e-20);
        let bad = WeightFn::custom(|r| 1.0 / r);
        assert!(matches!(bad.eval(0.0), Err(Error::NonFiniteWeight { .. })));
    }

    #[test]
    fn constant_weight_grows_linearly() {
        let c = InteractionMatrix::from_values(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let system = MarginSystem {
            interactions: c.clone(),
            cross: vec![],
        };
        let mut cfg = SimConfig {
            beta: 1.5,
            tau: 2.0,
            integrator: Integrator::Euler,
            ..Default::default()
        };
        cfg.set_weight_fn(WeightFn::constant(1.0));
        let sched = Schedule {
            step: 0.01,
            horizon: 1.0,
            steps: 100,
        };
        let rec = system.integrate(&cfg, sched).unwrap();
        let slope = |j: usize| 1.5 * 1.5 / (2.0 * 2.0) * (c.get(0, j) + c.get(1, j));
        for (k, &t) in rec.times.iter().enumerate() {
            for j in 0..2 {
                assert!((rec.train_margins[k][j] - slope(j) * t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn margins_plateau_under_saturation() {
        let system = MarginSystem {
            interactions: single(4.0),
            cross: vec![],
        };
        let sched = Schedule {
            step: 0.01,
            horizon: 200.0,
            steps: 20000,
        };
        let rec = system.integrate(&SimConfig::default(), sched).unwrap();
        let last = rec.final_train()[0];
        let mid = rec.train_margins[10000][0];
        // r' = 4σ(−r) ≈ 4e^{−r}, so r grows only logarithmically.
        assert!(last - mid < 0.75);
        assert!(last > mid);
    }

    #[test]
    fn single_weight_step_matches_hand_computation() {
        let spec = DistributionSpec::new(1, 1, 3, 0.3, 0.5).unwrap();
        let mut data = sample_dataset(&spec, 4).unwrap();
        data.samples.truncate(1);
        let (h, beta, tau) = (0.01, 1.3, 0.7);
        let cfg = SimConfig {
            beta,
            tau,
            ..Default::default()
        };
        let mut state = WeightState::zeros(2, 3);
        state.euler_step(&data, &cfg, h).unwrap();
        let g = &data.samples[0].embedding;
        let (w, l) = (data.samples[0].preferred_token, data.samples[0].rejected_token);
        for m in 0..3 {
            let expect = h / tau * beta / 2.0 * g[m];
            assert!((state.row(w)[m] - expect).abs() < 1e-15);
            assert!((state.row(l)[m] + expect).abs() < 1e-15);
        }
        let c_self = 2.0 * dot(g, g);
        let r = state.margin(&data.samples[0], beta);
        assert!((r - h * beta * beta / (2.0 * tau) * c_self).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SimConfig { beta: 0.0, ..Default::default() },
            SimConfig { tau: -1.0, ..Default::default() },
            SimConfig { step: Some(0.0), ..Default::default() },
            SimConfig { record_every: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        let cfg = SimConfig {
            step: Some(1.0),
            horizon: Some(0.5),
            ..Default::default()
        };
        assert!(cfg.schedule(10, 5).is_err());
    }

    #[test]
    fn schedule_lands_on_horizon() {
        let cfg = SimConfig {
            step: Some(0.3),
            horizon: Some(1.0),
            ..Default::default()
        };
        let s = cfg.schedule(2, 1).unwrap();
        assert_eq!(s.steps, 4);
        assert_eq!(s.time(4), 1.0);
        assert!((s.time(3) - 0.9).abs() < 1e-15);
        let cfg = SimConfig {
            step: Some(0.25),
            horizon: Some(1.0),
            ..Default::default()
        };
        assert_eq!(cfg.schedule(2, 1).unwrap().steps, 4);
    }

    #[test]
    fn blow_up_is_reported() {
        let system = MarginSystem {
            interactions: single(1.0),
            cross: vec![],
        };
        let mut cfg = SimConfig::default();
        cfg.set_weight_fn(WeightFn::custom(|r: f64| if r > 1e300 { f64::MAX } else { 1e308 }));
        let sched = Schedule {
            step: 10.0,
            horizon: 100.0,
            steps: 10,
        };
        assert!(system.integrate(&cfg, sched).is_err());
    }
}
