use prefdyn::bounds::{sandwich_holds, theory_report, TheoryParams};
use prefdyn::dynamics::{integrate, integrate_weights, margin_rhs, Integrator, MarginSystem, Schedule, SimConfig};
use prefdyn::interaction::{build_cross_row, build_interaction_matrix, InteractionMatrix};
use prefdyn::prefdist::{sample_dataset, sample_fresh, DistributionSpec};
use proptest::prelude::*;

/// Exact solution of `ṙ = a σ(−r)`, `r(0) = 0`: separating variables gives
/// `r + eʳ − 1 = a t`, solved here by bisection.
fn scalar_exact(a: f64, t: f64) -> f64 {
    let target = 1.0 + a * t;
    let (mut lo, mut hi) = (0.0, target.max(1.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + mid.exp() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scalar_final(c: f64, beta: f64, tau: f64, integrator: Integrator, steps: usize, horizon: f64) -> f64 {
    let system = MarginSystem {
        interactions: InteractionMatrix::from_values(1, vec![c]).unwrap(),
        cross: vec![],
    };
    let cfg = SimConfig {
        beta,
        tau,
        integrator,
        ..Default::default()
    };
    let sched = Schedule {
        step: horizon / steps as f64,
        horizon,
        steps,
    };
    system.integrate(&cfg, sched).unwrap().final_train()[0]
}

#[test]
fn scalar_rk4_matches_exact_solution() {
    let (c, beta, tau, horizon) = (3.125, 1.0, 1.0, 2.0);
    let exact = scalar_exact(beta * beta / tau * c, horizon);
    let r = scalar_final(c, beta, tau, Integrator::Rk4, 1000, horizon);
    assert!((r - exact).abs() < 1e-12, "{r} vs {exact}");
}

#[test]
fn convergence_orders() {
    let (c, beta, tau, horizon) = (2.5, 1.2, 0.8, 1.5);
    let exact = scalar_exact(beta * beta / tau * c, horizon);
    let err = |integ, steps| (scalar_final(c, beta, tau, integ, steps, horizon) - exact).abs();
    let euler = err(Integrator::Euler, 200) / err(Integrator::Euler, 400);
    assert!((euler - 2.0).abs() < 0.1, "euler ratio {euler}");
    let rk4 = err(Integrator::Rk4, 10) / err(Integrator::Rk4, 20);
    assert!((rk4 - 16.0).abs() < 2.0, "rk4 ratio {rk4}");
}

#[test]
fn margin_and_weight_space_agree_over_ten_thousand_steps() {
    let spec = DistributionSpec::new(1, 10, 40, 0.05, 0.5).unwrap();
    let data = sample_dataset(&spec, 8).unwrap();
    let cfg = SimConfig {
        integrator: Integrator::Euler,
        step: Some(1e-4),
        horizon: Some(1.0),
        record_every: 100,
        ..Default::default()
    };
    let a = integrate(&data, &[], &cfg).unwrap();
    let b = integrate_weights(&data, &cfg).unwrap();
    assert_eq!(a.times, b.times);
    assert_eq!(a.times.len(), 101);
    let max = a
        .train_margins
        .iter()
        .flatten()
        .zip(b.train_margins.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(max <= 1e-8, "max diff {max}");
    assert!(a.final_train().iter().all(|&r| r > 0.5));
}

#[test]
fn fresh_samples_do_not_influence_training() {
    let spec = DistributionSpec::new(2, 6, 8, 0.1, 0.4).unwrap();
    let data = sample_dataset(&spec, 1).unwrap();
    let fresh = sample_fresh(&spec, 25, 1).unwrap();
    let cfg = SimConfig::default();
    let with = integrate(&data, &fresh, &cfg).unwrap();
    let without = integrate(&data, &[], &cfg).unwrap();
    assert_eq!(with.train_margins, without.train_margins);
    assert_eq!(with.loss, without.loss);
}

/// Integrates training and held-out margins as one explicit RK4 system.
fn direct_fresh_rk4(c: &InteractionMatrix, cross: &[Vec<f64>], scale: f64, h: f64, steps: usize) -> Vec<f64> {
    let n = c.n();
    let sig = |r: f64| 1.0 / (1.0 + r.exp());
    let deriv = |r: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let w: Vec<f64> = r.iter().map(|&x| sig(x)).collect();
        let dr = (0..n).map(|j| scale * (0..n).map(|i| c.get(i, j) * w[i]).sum::<f64>()).collect();
        let df = cross.iter().map(|row| scale * row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        (dr, df)
    };
    let mut r = vec![0.0; n];
    let mut f = vec![0.0; cross.len()];
    for _ in 0..steps {
        let (k1, f1) = deriv(&r);
        let r2: Vec<f64> = r.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        let (k2, f2) = deriv(&r2);
        let r3: Vec<f64> = r.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        let (k3, f3) = deriv(&r3);
        let r4: Vec<f64> = r.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        let (k4, f4) = deriv(&r4);
        for i in 0..n {
            r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for m in 0..f.len() {
            f[m] += h / 6.0 * (f1[m] + 2.0 * f2[m] + 2.0 * f3[m] + f4[m]);
        }
    }
    f
}

#[test]
fn fresh_margins_match_direct_integration() {
    let spec = DistributionSpec::with_z(3, 4, 6, 0.2, 0.6, 2).unwrap();
    let data = sample_dataset(&spec, 21).unwrap();
    let fresh = sample_fresh(&spec, 12, 21).unwrap();
    let cfg = SimConfig {
        step: Some(0.01),
        horizon: Some(0.5),
        ..Default::default()
    };
    let rec = integrate(&data, &fresh, &cfg).unwrap();
    let c = build_interaction_matrix(&data).unwrap();
    let cross: Vec<Vec<f64>> = fresh.iter().map(|f| build_cross_row(f, &data).unwrap().values).collect();
    let direct = direct_fresh_rk4(&c, &cross, 1.0 / data.len() as f64, 0.01, 50);
    for (a, b) in rec.final_fresh().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn baseline_margins_are_sandwiched_monotone_and_generalize() {
    let spec = DistributionSpec::new(1, 100, 500, 0.025, 0.5).unwrap();
    let data = sample_dataset(&spec, 0).unwrap();
    let fresh = sample_fresh(&spec, 200, 0).unwrap();
    let rec = integrate(&data, &fresh, &SimConfig::default()).unwrap();
    let report = theory_report(&spec, &TheoryParams::default()).unwrap();
    assert!((rec.times.last().unwrap() - report.tau1).abs() < 1e-15);
    assert!(sandwich_holds(&rec, &report));
    for w in rec.train_margins.windows(2) {
        assert!(w[0].iter().zip(&w[1]).all(|(a, b)| b >= a));
    }
    // At τ₁ the lower and upper envelopes evaluate to ln3/40 and ln3.
    let ln3 = 3f64.ln();
    assert!(rec.final_train().iter().all(|&r| (ln3 / 40.0..=ln3).contains(&r)));
    assert_eq!(rec.fresh_error_rate(rec.times.len() - 1), 0.0);
}

#[test]
fn rhs_at_zero_equals_half_column_sums_on_data() {
    let spec = DistributionSpec::new(2, 3, 5, 0.1, 0.5).unwrap();
    let data = sample_dataset(&spec, 2).unwrap();
    let c = build_interaction_matrix(&data).unwrap();
    let cfg = SimConfig {
        beta: 0.5,
        tau: 2.0,
        ..Default::default()
    };
    let rhs = margin_rhs(&vec![0.0; c.n()], &c, &cfg).unwrap();
    let n = c.n() as f64;
    for (j, v) in rhs.iter().enumerate() {
        let col: f64 = (0..c.n()).map(|i| c.get(i, j)).sum();
        assert!((v - 0.25 / (2.0 * n * 2.0) * col).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_equivalence_holds_for_random_specs(
        k in 1usize..4,
        q in 1usize..6,
        extra_d in 0usize..6,
        v in 0.01f64..0.5,
        l_b in 0.0f64..1.0,
        z in 1usize..3,
        beta in 0.3f64..2.0,
        seed in any::<u64>(),
    ) {
        let spec = DistributionSpec::with_z(k, q, k + 1 + extra_d, v, l_b, z).unwrap();
        let data = sample_dataset(&spec, seed).unwrap();
        let cfg = SimConfig {
            beta,
            integrator: Integrator::Euler,
            step: Some(1e-3),
            horizon: Some(0.2),
            ..Default::default()
        };
        let a = integrate(&data, &[], &cfg).unwrap();
        let b = integrate_weights(&data, &cfg).unwrap();
        for (x, y) in a.final_train().iter().zip(b.final_train()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
