use prefdyn::dynamics::{margin_rhs, SimConfig};
use prefdyn::interaction::{token_sharing, InteractionMatrix};
use prefdyn::multitoken::{
    random_instance, reward_gradient_breakdown, reward_rate, softmax, weight_gradient, InstanceShape, MultiTokenSample, SoftmaxModel,
};
use proptest::prelude::*;

fn shape(vocab: usize, d: usize, len: usize, batch: usize) -> InstanceShape {
    InstanceShape {
        vocab,
        d,
        len,
        batch,
        beta: 0.7,
        scale: 0.8,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Probe reward rate written as a plain double sum:
/// `(β²/N) Σ_i σ(−m_i) Σ_j (y − S*)ᵀ[(y_w − S(W g_w)) C*_w − (y_l − S(W g_l)) C*_l]`.
fn direct_rate(model: &SoftmaxModel, batch: &[MultiTokenSample], probe: usize, g_star: &[f64]) -> f64 {
    let logits = |g: &[f64]| -> Vec<f64> { model.w.chunks(model.d).map(|row| dot(row, g)).collect() };
    let s_star = softmax(&logits(g_star));
    let mut sum = 0.0;
    for s in batch {
        let m = model.margin(s).unwrap();
        let weight = 1.0 / (1.0 + m.exp());
        for j in 0..s.len() {
            for (g, t, sgn) in [(&s.context_w[j], s.tokens_w[j], 1.0), (&s.context_l[j], s.tokens_l[j], -1.0)] {
                let p = softmax(&logits(g));
                let inner: f64 = (0..model.vocab)
                    .map(|v| {
                        let a = f64::from(u8::from(v == probe)) - s_star[v];
                        let b = f64::from(u8::from(v == t)) - p[v];
                        a * b
                    })
                    .sum();
                sum += weight * sgn * inner * dot(g, g_star);
            }
        }
    }
    model.beta * model.beta / batch.len() as f64 * sum
}

fn probe_for(seed: u64, model: &SoftmaxModel) -> (usize, Vec<f64>) {
    let (_, b) = random_instance(seed ^ 0x9e37_79b9, shape(model.vocab, model.d, 1, 1)).unwrap();
    ((seed as usize) % model.vocab, b[0].context_w[0].clone())
}

#[test]
fn decomposition_matches_direct_sum_on_many_instances() {
    for seed in 0..120u64 {
        let sh = shape(3 + (seed % 5) as usize, 2 + (seed % 4) as usize, 1 + (seed % 3) as usize, 1 + (seed % 6) as usize);
        let (model, batch) = random_instance(seed, sh).unwrap();
        let (probe, g_star) = probe_for(seed, &model);
        let parts = reward_gradient_breakdown(&model, &batch, probe, &g_star).unwrap();
        let direct = direct_rate(&model, &batch, probe, &g_star);
        assert!((parts.total - direct).abs() <= 1e-12 * direct.abs().max(1.0), "seed {seed}: {} vs {direct}", parts.total);
        assert_eq!(parts.total, parts.cooccurrence - parts.probability + parts.distribution_corr);
        let chain = reward_rate(&model, &weight_gradient(&model, &batch).unwrap(), probe, &g_star).unwrap();
        assert!((parts.total - chain).abs() <= 1e-10 * chain.abs().max(1.0), "seed {seed}: {} vs {chain}", parts.total);
    }
}

#[test]
fn weight_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..10u64 {
        let (model, batch) = random_instance(seed, shape(5, 4, 3, 4)).unwrap();
        let grad = weight_gradient(&model, &batch).unwrap();
        for idx in 0..model.w.len() {
            let mut plus = model.clone();
            plus.w[idx] += h;
            let mut minus = model.clone();
            minus.w[idx] -= h;
            let fd = -(plus.batch_loss(&batch).unwrap() - minus.batch_loss(&batch).unwrap()) / (2.0 * h);
            assert!(rel(fd, grad[idx]) <= 1e-4 || (fd - grad[idx]).abs() < 1e-9, "seed {seed} idx {idx}: {fd} vs {}", grad[idx]);
        }
    }
}

#[test]
fn reward_rate_matches_directional_difference() {
    let h = 1e-5;
    for seed in 0..20u64 {
        let (model, batch) = random_instance(seed, shape(6, 3, 2, 5)).unwrap();
        let grad = weight_gradient(&model, &batch).unwrap();
        let (probe, g_star) = probe_for(seed, &model);
        let shifted = |eps: f64| {
            let mut m = model.clone();
            m.w.iter_mut().zip(&grad).for_each(|(w, g)| *w += eps * g);
            m.token_reward(&g_star, probe).unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let rate = reward_rate(&model, &grad, probe, &g_star).unwrap();
        assert!(rel(fd, rate) <= 1e-4, "seed {seed}: {fd} vs {rate}");
    }
}

#[test]
fn single_token_shared_context_reduces_to_margin_ode() {
    for seed in 0..10u64 {
        let (model, mut batch) = random_instance(seed, shape(4, 3, 1, 6)).unwrap();
        for s in &mut batch {
            s.context_l = s.context_w.clone();
            if s.tokens_l[0] == s.tokens_w[0] {
                s.tokens_l[0] = (s.tokens_w[0] + 1) % model.vocab;
            }
        }
        let n = batch.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&batch[i], &batch[j]);
                let share = token_sharing(a.tokens_w[0], a.tokens_l[0], b.tokens_w[0], b.tokens_l[0]);
                values[i * n + j] = f64::from(share) * dot(&a.context_w[0], &b.context_w[0]);
            }
        }
        let c = InteractionMatrix::from_values(n, values).unwrap();
        let margins: Vec<f64> = batch.iter().map(|s| model.margin(s).unwrap()).collect();
        let cfg = SimConfig {
            beta: model.beta,
            ..Default::default()
        };
        let rhs = margin_rhs(&margins, &c, &cfg).unwrap();
        for (k, s) in batch.iter().enumerate() {
            let g = &s.context_w[0];
            let w = reward_gradient_breakdown(&model, &batch, s.tokens_w[0], g).unwrap().total;
            let l = reward_gradient_breakdown(&model, &batch, s.tokens_l[0], g).unwrap().total;
            assert!(((w - l) - rhs[k]).abs() < 1e-12 * rhs[k].abs().max(1.0), "seed {seed} k {k}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn breakdown_and_chain_rule_agree(
        seed in any::<u64>(),
        vocab in 2usize..8,
        d in 1usize..6,
        len in 1usize..4,
        batch in 1usize..5,
        beta in 0.1f64..3.0,
    ) {
        let sh = InstanceShape { vocab, d, len, batch, beta, scale: 1.0 };
        let (model, batch) = random_instance(seed, sh).unwrap();
        let (probe, g_star) = probe_for(seed, &model);
        let parts = reward_gradient_breakdown(&model, &batch, probe, &g_star).unwrap();
        let chain = reward_rate(&model, &weight_gradient(&model, &batch).unwrap(), probe, &g_star).unwrap();
        prop_assert!((parts.total - chain).abs() <= 1e-10 * chain.abs().max(1.0));
    }
}
