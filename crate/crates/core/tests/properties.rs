use std::collections::BTreeMap;

use proptest::prelude::*;

use lidyn::lengthbias::quantile_bins;
use lidyn::simdist::token_similarity_curve;
use lidyn::{maxsim, EmbeddingSet, EmbeddingStore, Vectors};

/// (dim, query rows, chunk rows) with values in [-1, 1].
fn pair() -> impl Strategy<Value = (usize, Vec<f32>, Vec<f32>)> {
    (1usize..=8, 1usize..=6, 1usize..=12).prop_flat_map(|(dim, nq, nc)| {
        (
            Just(dim),
            prop::collection::vec(-1.0f32..1.0, nq * dim),
            prop::collection::vec(-1.0f32..1.0, nc * dim),
        )
    })
}

fn score(q: &[f32], c: &[f32], dim: usize) -> f64 {
    maxsim(Vectors::new(q, dim), Vectors::new(c, dim)).unwrap()
}

fn reversed_rows(v: &[f32], dim: usize) -> Vec<f32> {
    v.chunks(dim).rev().flatten().copied().collect()
}

proptest! {
    #[test]
    fn chunk_row_order_does_not_matter((dim, q, c) in pair()) {
        prop_assert_eq!(score(&q, &c, dim), score(&q, &reversed_rows(&c, dim), dim));
    }

    #[test]
    fn query_rows_contribute_additively((dim, q, c) in pair()) {
        let split = (q.len() / dim).div_ceil(2) * dim;
        let (a, b) = q.split_at(split);
        let whole = score(&q, &c, dim);
        let parts = score(a, &c, dim) + if b.is_empty() { 0.0 } else { score(b, &c, dim) };
        prop_assert!((whole - parts).abs() <= 1e-12);
        prop_assert!((whole - score(&reversed_rows(&q, dim), &c, dim)).abs() <= 1e-12);
    }

    #[test]
    fn scaling_the_query_scales_the_score((dim, q, c) in pair(), s in 0.25f32..4.0) {
        let scaled: Vec<f32> = q.iter().map(|x| x * s).collect();
        let want = f64::from(s) * score(&q, &c, dim);
        prop_assert!((score(&scaled, &c, dim) - want).abs() <= 1e-5 * (1.0 + want.abs()));
    }

    #[test]
    fn appending_chunk_rows_never_lowers_the_score(
        (dim, q, c) in pair(),
        extra in prop::collection::vec(-1.0f32..1.0, 1..40),
    ) {
        let mut longer = c.clone();
        longer.extend(extra.iter().take(extra.len() / dim * dim));
        prop_assert!(score(&q, &longer, dim) >= score(&q, &c, dim));
    }

    #[test]
    fn curves_start_at_mean_row_max((dim, q, c) in pair(), grid in 2usize..60) {
        let curve = token_similarity_curve(Vectors::new(&q, dim), Vectors::new(&c, dim), grid).unwrap();
        let n_q = (q.len() / dim) as f64;
        prop_assert!((curve.values[0] - score(&q, &c, dim) / n_q).abs() <= 1e-9);
        prop_assert!(curve.values.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(curve.values.len(), grid);
    }

    #[test]
    fn quantile_bins_are_balanced_and_ordered(
        lengths in prop::collection::vec(1u32..5000, 10..400),
        n_bins in 2usize..12,
    ) {
        prop_assume!(lengths.len() >= n_bins);
        let map: BTreeMap<String, u32> =
            lengths.iter().enumerate().map(|(i, &l)| (format!("c{i:04}"), l)).collect();
        let bins = quantile_bins(&map, n_bins).unwrap();
        let mut sizes = vec![0usize; n_bins];
        let mut max_len = vec![0u32; n_bins];
        let mut min_len = vec![u32::MAX; n_bins];
        for (id, &len) in &map {
            let b = bins.bin_of(id).unwrap();
            sizes[b] += 1;
            max_len[b] = max_len[b].max(len);
            min_len[b] = min_len[b].min(len);
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for b in 1..n_bins {
            prop_assert!(max_len[b - 1] <= min_len[b]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stores_round_trip_bit_exactly(
        dim in 1usize..6,
        shapes in prop::collection::vec((1usize..5, 1u32..3000), 1..12),
        seed in any::<u32>(),
    ) {
        let sets: Vec<EmbeddingSet> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(rows, tl))| {
                let data = (0..rows * dim)
                    .map(|j| f32::from_bits((seed.wrapping_mul(2_654_435_761).wrapping_add((i * 97 + j) as u32) & 0x3fff_ffff) | 0x0080_0000) - 1.5)
                    .collect();
                EmbeddingSet::new(format!("item {i}"), "ds", tl, dim, data).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        lidyn::write_store(sets.clone(), dir.path(), false).unwrap();
        let store = EmbeddingStore::open_dir(dir.path()).unwrap();
        prop_assert_eq!(store.len(), sets.len());
        for (set, item) in sets.iter().zip(store.items().unwrap()) {
            prop_assert_eq!(item.to_set(), set.clone());
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(item.vectors.as_slice()), bits(set.vectors().as_slice()));
        }
    }
}
