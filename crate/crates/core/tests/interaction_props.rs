use prefdyn::interaction::{build_interaction_matrix, token_sharing, InteractionMatrix};
use prefdyn::prefdist::{sample_dataset, sample_fresh, DistributionSpec, Sign};
use proptest::prelude::*;

#[test]
fn token_sharing_enumeration() {
    // (y_w − y_l)·(y_w' − y_l') over one-hot vectors, enumerated on a 4-token vocabulary.
    let onehot = |t: usize| -> [i32; 4] {
        let mut v = [0; 4];
        v[t] = 1;
        v
    };
    for wa in 0..4 {
        for la in (0..4).filter(|&l| l != wa) {
            for wb in 0..4 {
                for lb in (0..4).filter(|&l| l != wb) {
                    let (a, b, c, d) = (onehot(wa), onehot(la), onehot(wb), onehot(lb));
                    let brute: i32 = (0..4).map(|m| (a[m] - b[m]) * (c[m] - d[m])).sum();
                    assert_eq!(token_sharing(wa, la, wb, lb), brute);
                }
            }
        }
    }
}

#[test]
fn noiseless_single_pair_matrix_is_fully_enumerable() {
    let (k, q, l_b) = (2, 3, 0.5);
    let spec = DistributionSpec::new(k, q, 6, 1e-12, l_b).unwrap();
    let data = sample_dataset(&spec, 4).unwrap();
    let c = build_interaction_matrix(&data).unwrap();
    for (i, a) in data.samples.iter().enumerate() {
        for (j, b) in data.samples.iter().enumerate() {
            // Within a cluster the token factor is ±2 and the embedding factor
            // 1 + l_b² or l_b² − 1; disjoint pairs across clusters give zero.
            let expected = if a.cluster != b.cluster {
                0.0
            } else if a.sign == b.sign {
                2.0 * (1.0 + l_b * l_b)
            } else {
                -2.0 * (l_b * l_b - 1.0)
            };
            assert!((c.get(i, j) - expected).abs() < 1e-9, "({i},{j}) {} vs {expected}", c.get(i, j));
        }
    }
}

#[test]
fn embedding_inner_products_concentrate_on_expectations() {
    let l_b = 0.4;
    let spec = DistributionSpec::new(2, 2000, 50, 0.02, l_b).unwrap();
    let emb = sample_fresh(&spec, 4000, 3).unwrap();
    let (mut same, mut opp, mut cross) = (Vec::new(), Vec::new(), Vec::new());
    for w in emb.chunks(2) {
        let (a, b) = (&w[0], &w[1]);
        let ip: f64 = a.embedding.iter().zip(&b.embedding).map(|(x, y)| x * y).sum();
        if a.cluster != b.cluster {
            cross.push(ip);
        } else if a.sign == b.sign {
            same.push(ip);
        } else {
            opp.push(ip);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&same) - (1.0 + l_b * l_b)).abs() < 0.01);
    assert!((mean(&opp) - (l_b * l_b - 1.0)).abs() < 0.01);
    assert!((mean(&cross) - l_b * l_b).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn interaction_matrix_is_symmetric_with_nonnegative_diagonal(
        k in 1usize..5,
        q in 1usize..5,
        extra in 0usize..4,
        v in 0.0f64..1.0,
        l_b in 0.0f64..=1.0,
        z in 1usize..4,
        seed in any::<u64>(),
    ) {
        let spec = DistributionSpec::with_z(k, q, k + 1 + extra, v.max(1e-6), l_b, z).unwrap();
        let data = sample_dataset(&spec, seed).unwrap();
        let c = build_interaction_matrix(&data).unwrap();
        prop_assert!(c.is_symmetric());
        for i in 0..c.n() {
            prop_assert!(c.get(i, i) >= 0.0);
            for j in 0..c.n() {
                let share = token_sharing(
                    data.samples[i].preferred_token, data.samples[i].rejected_token,
                    data.samples[j].preferred_token, data.samples[j].rejected_token,
                );
                if share == 0 {
                    prop_assert_eq!(c.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn samples_respect_cluster_token_layout(k in 1usize..6, seed in any::<u64>()) {
        let spec = DistributionSpec::new(k, 3, k + 1, 0.1, 0.5).unwrap();
        let data = sample_dataset(&spec, seed).unwrap();
        prop_assert_eq!(data.len(), 2 * k * 3);
        for s in &data.samples {
            let aligned = spec.tokens(s.cluster, Sign::Aligned);
            let t = spec.tokens(s.cluster, s.sign);
            prop_assert_eq!((s.preferred_token, s.rejected_token), (t.preferred, t.rejected));
            if s.sign == Sign::Misaligned {
                prop_assert_eq!((t.preferred, t.rejected), (aligned.rejected, aligned.preferred));
            }
        }
    }

    #[test]
    fn transpose_mul_matches_dense_product(
        n in 1usize..12,
        cells in proptest::collection::vec((-3.0f64..3.0, 0u8..3), 144),
        x in proptest::collection::vec(-2.0f64..2.0, 12),
    ) {
        // Roughly a third of the entries are zeroed to exercise the run index.
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let (v, keep) = cells[i * 12 + j];
                let v = if keep == 0 { 0.0 } else { v };
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        let c = InteractionMatrix::from_values(n, values.clone()).unwrap();
        let mut y = vec![0.0; n];
        c.transpose_mul(&x[..n], &mut y);
        for j in 0..n {
            let dense: f64 = (0..n).map(|i| values[i * n + j] * x[i]).sum();
            prop_assert!((y[j] - dense).abs() < 1e-12);
        }
    }
}
