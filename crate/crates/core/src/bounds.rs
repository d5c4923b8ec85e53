//! Closed-form quantities of the training-reward and generalization
//! guarantees, regime checks, and single concentration trials.
//!
//! All probabilities and bounds are reported as evaluated, even when they
//! exceed 1; callers decide how to present vacuous values.

use serde::{Deserialize, Serialize};

use crate::dot;
use crate::dynamics::TrajectoryRecord;
use crate::interaction::preference_sharing;
use crate::prefdist::{sample_dataset, DistributionSpec};
use crate::{Error, Result};

const LN_3: f64 = 1.098_612_288_668_109_8;

/// `τ₁ = N τ ln 3 / (10 Q β²)`.
pub fn tau1(n: usize, tau: f64, q: usize, beta: f64) -> f64 {
    n as f64 * tau * LN_3 / (10.0 * q as f64 * beta * beta)
}

/// Slope of `r^L(t) = Qβ²/(4Nτ) · t`.
pub fn lower_slope(n: usize, tau: f64, q: usize, beta: f64) -> f64 {
    q as f64 * beta * beta / (4.0 * n as f64 * tau)
}

/// Slope of `r^U(t) = 10Qβ²/(Nτ) · t`.
pub fn upper_slope(n: usize, tau: f64, q: usize, beta: f64) -> f64 {
    10.0 * q as f64 * beta * beta / (n as f64 * tau)
}

/// `(r^L(t), r^U(t))` for `0 ≤ t ≤ τ₁`.
pub fn margin_bounds(t: f64, n: usize, tau: f64, q: usize, beta: f64) -> Result<(f64, f64)> {
    let horizon = tau1(n, tau, q, beta);
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be non-negative")));
    }
    // Tolerate the rounding in times produced by `k·step` grids.
    if t > horizon * (1.0 + 1e-12) {
        return Err(Error::BeyondHorizon { t, tau1: horizon });
    }
    Ok((lower_slope(n, tau, q, beta) * t, upper_slope(n, tau, q, beta) * t))
}

/// Slopes from the longer-form statement, exposed for inspection only:
/// `2dv²β²/(Nτ)` and the proof's intermediate `(5Q + 2dv²)β²/(2Nτ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixSlopes {
    pub stated: f64,
    pub derived: f64,
}

pub fn appendix_upper_slopes(spec: &DistributionSpec, tau: f64, beta: f64) -> AppendixSlopes {
    let n = spec.n() as f64;
    let dv2 = spec.d as f64 * spec.v * spec.v;
    AppendixSlopes {
        stated: 2.0 * dv2 * beta * beta / (n * tau),
        derived: (5.0 * spec.q as f64 + 2.0 * dv2) * beta * beta / (2.0 * n * tau),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl ConditionCheck {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            passed: lhs <= rhs,
        }
    }

    fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            passed: lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    /// `Z ≤ min(1/(4 l_b²), Q^{1/4} − 2)`; `1/(4·0²)` is read as +∞.
    pub z_bound: ConditionCheck,
    /// `d ≤ 5Q`.
    pub d_bound: ConditionCheck,
    /// `v ≤ 1/(4√Q)`.
    pub v_bound: ConditionCheck,
    /// `Q ≥ 40`, required additionally for generalization.
    pub q_min: ConditionCheck,
    /// `d ≥ 5Q/(2v²)` from the longer-form generalization statement. It
    /// contradicts `d_bound` for any admissible `v`, so it is informational.
    pub appendix_d_lower: ConditionCheck,
}

impl Conditions {
    /// Training-reward regime.
    pub fn training_pass(&self) -> bool {
        self.z_bound.passed && self.d_bound.passed && self.v_bound.passed
    }

    /// Generalization regime (training regime plus `Q ≥ 40`).
    pub fn generalization_pass(&self) -> bool {
        self.training_pass() && self.q_min.passed
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConditionCheck> {
        [&self.z_bound, &self.d_bound, &self.v_bound, &self.q_min, &self.appendix_d_lower].into_iter()
    }
}

pub fn check_conditions(spec: &DistributionSpec) -> Conditions {
    let q = spec.q as f64;
    let lb2 = spec.l_b * spec.l_b;
    let shared = if lb2 == 0.0 { f64::INFINITY } else { 1.0 / (4.0 * lb2) };
    Conditions {
        z_bound: ConditionCheck::le("Z <= min(1/(4 l_b^2), Q^(1/4) - 2)", spec.z() as f64, shared.min(q.powf(0.25) - 2.0)),
        d_bound: ConditionCheck::le("d <= 5Q", spec.d as f64, 5.0 * q),
        v_bound: ConditionCheck::le("v <= 1/(4 sqrt(Q))", spec.v, 1.0 / (4.0 * q.sqrt())),
        q_min: ConditionCheck::ge("Q >= 40", q, 40.0),
        appendix_d_lower: ConditionCheck::ge("d >= 5Q/(2 v^2)", spec.d as f64, 5.0 * q / (2.0 * spec.v * spec.v)),
    }
}

/// `8 K Q^{9/4} exp(−min(c√Q/5, Q^{3/4}/256))`.
pub fn failure_probability(k: usize, q: usize, c_const: f64) -> f64 {
    let q = q as f64;
    let rate = (c_const * q.sqrt() / 5.0).min(q.powf(0.75) / 256.0);
    8.0 * k as f64 * q.powf(2.25) * (-rate).exp()
}

/// `(8Z + 4) K Q² [e^{−ε²/16} + exp(−(cε/v)·min(1, ε/(dv)))]`.
pub fn failure_probability_eps(z: usize, k: usize, q: usize, d: usize, v: f64, epsilon: f64, c_const: f64) -> f64 {
    let q = q as f64;
    let prefactor = (8.0 * z as f64 + 4.0) * k as f64 * q * q;
    let bernstein = (-(c_const * epsilon / v) * 1f64.min(epsilon / (d as f64 * v))).exp();
    prefactor * ((-epsilon * epsilon / 16.0).exp() + bernstein)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationBound {
    /// `2 K Q² e^{−Q^{1/4}/6}`.
    pub main: f64,
    /// `2 K Q² e^{−ε²/(2(2 + dv² + εv))}`.
    pub appendix: f64,
}

pub fn generalization_bound(k: usize, q: usize, d: usize, v: f64, epsilon: f64) -> GeneralizationBound {
    let kq2 = 2.0 * k as f64 * (q as f64).powi(2);
    let main = kq2 * (-(q as f64).powf(0.25) / 6.0).exp();
    let var = 2.0 + d as f64 * v * v + epsilon * v;
    let appendix = kq2 * (-epsilon * epsilon / (2.0 * var)).exp();
    GeneralizationBound { main, appendix }
}

/// `ε = 1/(16 v (Z + 2))`.
pub fn default_epsilon(v: f64, z: usize) -> f64 {
    1.0 / (16.0 * v * (z as f64 + 2.0))
}

/// Which deviation inequalities held for every applicable pair in one draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationOutcome {
    /// `|C(x_j, x_j) − 2(1 + l_b² + dv²)| ≤ 4εv`.
    pub exact_same: bool,
    /// Same cluster, same sign, `j ≠ k`: `|C − 2(1 + l_b²)| ≤ 4εv`.
    pub same: bool,
    /// Same concept, opposite sign: `|C − 2(1 − l_b²)| ≤ 4εv`.
    pub opp: bool,
    /// Token-sharing concepts, same sign: `|C| ≤ l_b² + 2εv`.
    pub share1: bool,
    /// Token-sharing concepts, opposite sign: `|C| ≤ l_b² + 2εv`.
    pub share2: bool,
    /// Largest observed deviation per family (0 when the family is empty),
    /// ordered as the flags above.
    pub max_deviation: [f64; 5],
}

impl ConcentrationOutcome {
    pub fn all(&self) -> bool {
        self.exact_same && self.same && self.opp && self.share1 && self.share2
    }

    pub fn flags(&self) -> [bool; 5] {
        [self.exact_same, self.same, self.opp, self.share1, self.share2]
    }
}

pub const CONCENTRATION_FAMILIES: [&str; 5] = ["exact_same", "same", "opp", "share1", "share2"];

/// Draws one training set and checks the five deviation families.
pub fn concentration_trial(spec: &DistributionSpec, seed: u64, epsilon: f64) -> Result<ConcentrationOutcome> {
    let data = sample_dataset(spec, seed)?;
    let lb2 = spec.l_b * spec.l_b;
    let dv2 = spec.d as f64 * spec.v * spec.v;
    let tight = 4.0 * epsilon * spec.v;
    let loose = lb2 + 2.0 * epsilon * spec.v;
    let mut max_dev = [0.0f64; 5];
    let mut ok = [true; 5];
    let mut record = |family: usize, dev: f64, limit: f64| {
        max_dev[family] = max_dev[family].max(dev);
        if dev > limit {
            ok[family] = false;
        }
    };
    let s = &data.samples;
    for i in 0..s.len() {
        for j in i..s.len() {
            let (a, b) = (&s[i], &s[j]);
            let share = preference_sharing(a, b);
            let same_sign = a.sign == b.sign;
            if a.cluster == b.cluster {
                let c = f64::from(share) * dot(&a.embedding, &b.embedding);
                if i == j {
                    record(0, (c - 2.0 * (1.0 + lb2 + dv2)).abs(), tight);
                } else if same_sign {
                    record(1, (c - 2.0 * (1.0 + lb2)).abs(), tight);
                } else {
                    record(2, (c - 2.0 * (1.0 - lb2)).abs(), tight);
                }
            } else if share != 0 {
                let c = f64::from(share) * dot(&a.embedding, &b.embedding);
                record(if same_sign { 3 } else { 4 }, c.abs(), loose);
            }
        }
    }
    Ok(ConcentrationOutcome {
        exact_same: ok[0],
        same: ok[1],
        opp: ok[2],
        share1: ok[3],
        share2: ok[4],
        max_deviation: max_dev,
    })
}

/// Evaluated closed forms for one distribution and simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub n: usize,
    pub z: usize,
    pub tau1: f64,
    pub r_lower_slope: f64,
    pub r_upper_slope: f64,
    pub r_lower_at_tau1: f64,
    pub r_upper_at_tau1: f64,
    pub conditions: Conditions,
    pub training_conditions_pass: bool,
    pub generalization_conditions_pass: bool,
    pub failure_prob: f64,
    pub failure_prob_eps: f64,
    pub failure_prob_vacuous: bool,
    pub gen_bound: f64,
    pub gen_bound_eps: f64,
    pub gen_bound_vacuous: bool,
    pub epsilon: f64,
    pub c_const: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub appendix_slopes: Option<AppendixSlopes>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub beta: f64,
    pub tau: f64,
    pub c_const: f64,
    pub epsilon: Option<f64>,
    pub appendix_slopes: bool,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tau: 1.0,
            c_const: 1.0,
            epsilon: None,
            appendix_slopes: false,
        }
    }
}

pub fn theory_report(spec: &DistributionSpec, params: &TheoryParams) -> Result<TheoryReport> {
    spec.validate()?;
    if !(params.c_const > 0.0) {
        return Err(Error::InvalidArgument(format!("c = {} must be positive", params.c_const)));
    }
    let (n, q, z) = (spec.n(), spec.q, spec.z());
    let (beta, tau) = (params.beta, params.tau);
    let t1 = tau1(n, tau, q, beta);
    let (lo, hi) = margin_bounds(t1, n, tau, q, beta)?;
    let epsilon = params.epsilon.unwrap_or_else(|| default_epsilon(spec.v, z));
    let conditions = check_conditions(spec);
    let failure_prob = failure_probability(spec.k, q, params.c_const);
    let gen = generalization_bound(spec.k, q, spec.d, spec.v, epsilon);
    Ok(TheoryReport {
        n,
        z,
        tau1: t1,
        r_lower_slope: lower_slope(n, tau, q, beta),
        r_upper_slope: upper_slope(n, tau, q, beta),
        r_lower_at_tau1: lo,
        r_upper_at_tau1: hi,
        training_conditions_pass: conditions.training_pass(),
        generalization_conditions_pass: conditions.generalization_pass(),
        conditions,
        failure_prob,
        failure_prob_eps: failure_probability_eps(z, spec.k, q, spec.d, spec.v, epsilon, params.c_const),
        failure_prob_vacuous: failure_prob >= 1.0,
        gen_bound: gen.main,
        gen_bound_eps: gen.appendix,
        gen_bound_vacuous: gen.main >= 1.0,
        epsilon,
        c_const: params.c_const,
        appendix_slopes: params.appendix_slopes.then(|| appendix_upper_slopes(spec, tau, beta)),
    })
}

/// Whether `r^L(t) ≤ r_i(t) ≤ r^U(t)` for every training margin at every
/// recorded `t ≤ τ₁`. Records past `τ₁` are ignored.
pub fn sandwich_holds(record: &TrajectoryRecord, report: &TheoryReport) -> bool {
    record
        .times
        .iter()
        .zip(&record.train_margins)
        .filter(|(&t, _)| t <= report.tau1 * (1.0 + 1e-12))
        .all(|(&t, margins)| {
            let (lo, hi) = (report.r_lower_slope * t, report.r_upper_slope * t);
            margins.iter().all(|&r| lo <= r && r <= hi)
        })
}
