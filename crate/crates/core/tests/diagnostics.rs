use std::collections::BTreeMap;
use std::time::Instant;

use lidyn::lengthbias::{fp_length_report, quantile_bins, FpMode};
use lidyn::metrics::evaluate_run;
use lidyn::simdist::{simdist_report, Mode, Role, POOLED};
use lidyn::synthlab::{
    bias_sweep, generate_corpus, planted_length_bias_run, ModelMode, PlantedRunConfig, SweepOptions,
    SynthConfig,
};
use lidyn::{retrieve, EmbeddingSet, EmbeddingStore};

#[test]
fn ten_thousand_items_split_into_equal_bins() {
    let lengths: BTreeMap<String, u32> = (0..10_000)
        .map(|i| (format!("c{i:05}"), (i * 7919 % 3001) as u32 + 1))
        .collect();
    let bins = quantile_bins(&lengths, 10).unwrap();
    let mut sizes = [0usize; 10];
    for id in lengths.keys() {
        sizes[bins.bin_of(id).unwrap()] += 1;
    }
    assert_eq!(sizes, [1000; 10]);
    let edges = bins.edges();
    assert!(edges.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn large_store_verifies_in_bounded_time() {
    let n = 56_718;
    let dim = 8;
    let sets: Vec<EmbeddingSet> = (0..n)
        .map(|i| {
            let rows = 1 + i % 4;
            let data = (0..rows)
                .flat_map(|r| {
                    let mut v = vec![0.0f32; dim];
                    v[(i + r) % dim] = 1.0;
                    v
                })
                .collect();
            EmbeddingSet::new(format!("doc{i}"), "nano", (rows * 40) as u32, dim, data).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    lidyn::write_store(sets, dir.path(), true).unwrap();
    let start = Instant::now();
    let store = EmbeddingStore::open_dir(dir.path()).unwrap();
    assert_eq!(store.len(), n);
    assert!(store.findings().is_empty());
    assert!(start.elapsed().as_secs() < 30, "took {:?}", start.elapsed());
}

#[test]
fn zero_signal_matches_random_ranking() {
    // Equal lengths everywhere, so no item is favoured and the positive's
    // rank is uniform.
    let cfg = SynthConfig {
        n_chunks: 100,
        n_queries: 400,
        length_range: (16, 16),
        relevance_signal: 0.0,
        noise_scale: 0.0,
        seed: 9,
        ..SynthConfig::default()
    };
    let s = generate_corpus(&cfg).unwrap();
    let report = evaluate_run(&retrieve(&s.queries, &s.corpus, 10).unwrap(), &s.qrels, 10).unwrap();
    let expected: f64 = (1..=10).map(|r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / 100.0;
    assert!(
        (report.mean - expected).abs() < 0.06,
        "mean {} vs {expected}",
        report.mean
    );
}

#[test]
fn pooled_curve_is_the_query_weighted_mean() {
    let s = generate_corpus(&SynthConfig {
        n_queries: 40,
        relevance_signal: 0.4,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let sets: Vec<EmbeddingSet> = s
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut set = q.unwrap().to_set();
            set.dataset = if i % 3 == 0 { "fiqa" } else { "scifact" }.into();
            set
        })
        .collect();
    let queries = EmbeddingStore::from_sets(sets, true).unwrap();
    let run = retrieve(&queries, &s.corpus, 0).unwrap();
    let report = simdist_report(&run, &s.qrels, &queries, &s.corpus, Mode::Failed, 1, 25).unwrap();
    assert!(report.n_queries > 0);
    for role in Role::ALL {
        let pooled = report.pooled(role).unwrap();
        let parts: Vec<_> = report
            .curves
            .iter()
            .filter(|(ds, _)| ds.as_str() != POOLED)
            .map(|(_, roles)| &roles[&role])
            .collect();
        let total: usize = parts.iter().map(|c| c.n_queries).sum();
        assert_eq!(total, pooled.n_queries);
        for g in 0..pooled.values.len() {
            let mean = parts
                .iter()
                .map(|c| c.values[g] * c.n_queries as f64)
                .sum::<f64>()
                / total as f64;
            assert!((pooled.values[g] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn planted_false_positives_are_longer_than_the_corpus() {
    let planted = planted_length_bias_run(&PlantedRunConfig {
        seed: 4,
        ..PlantedRunConfig::default()
    })
    .unwrap();
    let sets: Vec<EmbeddingSet> = planted
        .lengths
        .iter()
        .map(|(id, &l)| EmbeddingSet::new(id.as_str(), "d", l, 1, vec![1.0]).unwrap())
        .collect();
    let manifest = EmbeddingStore::from_sets(sets, true).unwrap().manifest().clone();
    let report = fp_length_report(&planted.run, &planted.qrels, &manifest, 5, FpMode::AbovePositive).unwrap();
    let fp_mean: f64 = report
        .quantiles
        .iter()
        .filter_map(|q| q.mean_fp_length.map(|m| m * q.n_fps as f64))
        .sum::<f64>()
        / report.quantiles.iter().map(|q| q.n_fps).sum::<usize>() as f64;
    assert!(
        fp_mean > 1.2 * report.corpus_mean_length,
        "{fp_mean} vs {}",
        report.corpus_mean_length
    );
}

#[test]
fn sweep_separates_multi_vector_from_single_vector() {
    // Fixed-length positives isolate the false-positive effect.
    let grid: Vec<SynthConfig> = (0..4)
        .map(|seed| SynthConfig {
            dim: 64,
            n_chunks: 1000,
            n_queries: 60,
            relevance_signal: 0.45,
            positive_length_range: Some((64, 64)),
            seed,
            ..SynthConfig::default()
        })
        .collect();
    let opts = SweepOptions {
        n_permutations: 200,
        ..SweepOptions::default()
    };
    let rows = bias_sweep(&grid, &opts).unwrap();
    let mv: Vec<_> = rows
        .iter()
        .filter(|r| r.model_mode == ModelMode::MultiVector)
        .collect();
    let sv: Vec<_> = rows
        .iter()
        .filter(|r| r.model_mode == ModelMode::SingleVector)
        .collect();
    assert_eq!((mv.len(), sv.len()), (4, 4));
    assert!(mv.iter().filter(|r| r.top_bin_above_ci).count() >= 3);
    assert!(mv.iter().all(|r| r.slope > 0.0));
    assert!(sv.iter().filter(|r| r.slope_within_ci()).count() >= 3);
}
