use prefdyn::embedanalysis::{mean_similarity_matrix, subtract_shared_component, EmbeddingCorpus};
use prefdyn::prefdist::Sign;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Pairwise average over every cross-group pair, skipping self-pairs.
fn brute_force(corpus: &EmbeddingCorpus, a: &str, b: &str) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (u, la)) in corpus.vectors.iter().zip(&corpus.concept_labels).enumerate() {
        for (j, (v, lb)) in corpus.vectors.iter().zip(&corpus.concept_labels).enumerate() {
            if la == a && lb == b && i != j {
                sum += cosine(u, v);
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn random_corpus(seed: u64, concepts: usize, per_group: usize, d: usize, shared: f64) -> EmbeddingCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut vectors, mut labels, mut signs) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..concepts {
        for sign in [Sign::Aligned, Sign::Misaligned] {
            for _ in 0..per_group {
                let mut v: Vec<f64> = (0..d).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
                v[0] += shared;
                v[1 + c % (d - 1)] += sign.as_f64();
                vectors.push(v);
                labels.push(format!("k{c}"));
                signs.push(sign);
            }
        }
    }
    EmbeddingCorpus::new(vectors, labels, signs).unwrap()
}

#[test]
fn matrix_matches_pairwise_brute_force() {
    let corpus = random_corpus(1, 4, 5, 7, 1.5);
    let s = mean_similarity_matrix(&corpus).unwrap();
    for (a, la) in s.labels.iter().enumerate() {
        for (b, lb) in s.labels.iter().enumerate() {
            let brute = brute_force(&corpus, la, lb);
            assert!((s.get(a, b) - brute).abs() < 1e-12, "({la},{lb}) {} vs {brute}", s.get(a, b));
        }
    }
}

#[test]
fn shared_component_inflates_similarity_until_removed() {
    let corpus = random_corpus(2, 5, 40, 12, 2.0);
    let before = mean_similarity_matrix(&corpus).unwrap().off_diagonal_mean().unwrap();
    let after = mean_similarity_matrix(&subtract_shared_component(&corpus)).unwrap().off_diagonal_mean().unwrap();
    assert!(before > 0.6, "{before}");
    assert!(after.abs() < 0.1, "{after}");
}

#[test]
fn text_table_round_trip() {
    let corpus = random_corpus(3, 2, 3, 4, 0.0);
    let mut buf = Vec::new();
    corpus.write_table(&mut buf).unwrap();
    let back = EmbeddingCorpus::read_table(buf.as_slice()).unwrap();
    assert_eq!(back, corpus);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn similarity_is_symmetric_bounded_and_scale_invariant(
        seed in any::<u64>(),
        concepts in 1usize..5,
        per_group in 2usize..5,
        d in 2usize..8,
        shared in -2.0f64..2.0,
        scale in 0.01f64..100.0,
    ) {
        let corpus = random_corpus(seed, concepts, per_group, d, shared);
        let s = mean_similarity_matrix(&corpus).unwrap();
        for a in 0..s.size() {
            for b in 0..s.size() {
                prop_assert_eq!(s.get(a, b), s.get(b, a));
                prop_assert!((-1.0..=1.0).contains(&s.get(a, b)));
            }
        }
        let mut scaled = corpus.clone();
        scaled.vectors.iter_mut().flatten().for_each(|x| *x *= scale);
        let t = mean_similarity_matrix(&scaled).unwrap();
        for (x, y) in s.values.iter().zip(&t.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn centering_is_idempotent(seed in any::<u64>(), shared in -3.0f64..3.0) {
        let once = subtract_shared_component(&random_corpus(seed, 3, 3, 5, shared));
        let twice = subtract_shared_component(&once);
        for (a, b) in once.vectors.iter().flatten().zip(twice.vectors.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
