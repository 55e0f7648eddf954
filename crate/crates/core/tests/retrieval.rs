use lidyn::lengthbias::{self, false_positives, quantile_bins};
use lidyn::metrics::evaluate_run;
use lidyn::scoring::retrieve_with;
use lidyn::simdist::{comparison_set, simdist_report_with, Mode};
use lidyn::synthlab::{generate_corpus, SynthConfig};
use lidyn::{maxsim, rank_of, retrieve, EmbeddingSet, EmbeddingStore, Error, Execution, RetrievalRun};

fn synth(seed: u64) -> lidyn::synthlab::SynthCorpus {
    generate_corpus(&SynthConfig {
        n_chunks: 150,
        n_queries: 25,
        relevance_signal: 0.45,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// (chunk id, score) pairs sorted by the total order: score descending,
/// then id ascending.
fn full_sort(queries: &EmbeddingStore, corpus: &EmbeddingStore, qi: usize) -> Vec<(String, f64)> {
    let q = queries.get(qi).unwrap();
    let mut all: Vec<(String, f64)> = corpus
        .iter()
        .map(|c| {
            let c = c.unwrap();
            (c.id().to_string(), maxsim(q.vectors, c.vectors).unwrap())
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all
}

#[test]
fn top_k_is_the_prefix_of_a_full_sort() {
    let s = synth(1);
    let run = retrieve(&s.queries, &s.corpus, 10).unwrap();
    for (qi, list) in run.lists().iter().enumerate() {
        let want = full_sort(&s.queries, &s.corpus, qi);
        let got: Vec<(String, f64)> = list.iter().map(|(id, sc)| (id.to_string(), sc)).collect();
        assert_eq!(got, want[..10].to_vec());
    }
}

#[test]
fn rank_of_matches_a_linear_scan() {
    let s = synth(2);
    let run = retrieve(&s.queries, &s.corpus, 0).unwrap();
    for list in run.lists() {
        for (pos, (id, _)) in list.iter().enumerate().step_by(7) {
            assert_eq!(rank_of(&run, list.query_id(), id).unwrap(), Some(pos + 1));
        }
        assert_eq!(rank_of(&run, list.query_id(), "not-a-chunk").unwrap(), None);
    }
    assert!(matches!(
        rank_of(&run, "nope", "c00000"),
        Err(Error::UnknownQuery(_))
    ));
}

#[test]
fn false_positives_and_comparison_sets_match_linear_scans() {
    let s = synth(3);
    let run = retrieve(&s.queries, &s.corpus, 0).unwrap();
    for list in run.lists() {
        let grades = s.qrels.grades(list.query_id());
        let ids: Vec<&str> = list.iter().map(|(id, _)| id).collect();
        let rel = |id: &str| grades.get(id).is_some_and(|&g| g > 0);
        let first_pos = ids.iter().position(|id| rel(id)).unwrap();
        let fps: Vec<String> = ids[..first_pos].iter().map(|s| s.to_string()).collect();
        assert_eq!(false_positives(list, grades).unwrap(), fps);

        let cmp = comparison_set(&run, &s.qrels, list.query_id()).unwrap();
        assert_eq!(cmp.positive, ids[first_pos]);
        assert_eq!(cmp.positive_rank, first_pos + 1);
        let negatives: Vec<(usize, &str)> = ids
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, id)| !rel(id))
            .collect();
        assert_eq!(cmp.top1_negative, negatives[0].1);
        assert_eq!(cmp.worst_negative, negatives.last().unwrap().1);
        let below = negatives.iter().find(|(i, _)| *i > first_pos).unwrap();
        assert_eq!(cmp.below_positive_negative, below.1);
    }
}

#[test]
fn single_chunk_corpus_puts_it_first_everywhere() {
    let s = synth(4);
    let only = s.corpus.get(0).unwrap().to_set();
    let corpus = EmbeddingStore::from_sets(vec![only], true).unwrap();
    let run = retrieve(&s.queries, &corpus, 5).unwrap();
    let mut buf = Vec::new();
    run.write_trec(&mut buf, "t").unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), s.queries.len());
    assert!(text.lines().all(|l| l.split_whitespace().nth(3) == Some("1")));
}

#[test]
fn full_run_has_every_pair_and_survives_a_file_round_trip() {
    let s = synth(5);
    let run = retrieve(&s.queries, &s.corpus, 0).unwrap();
    assert!(run.is_full());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.trec");
    run.write_trec_file(&path, "exact").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), s.queries.len() * s.corpus.len());
    let back = RetrievalRun::read_trec(&path).unwrap();
    assert!(back.is_full());
    for (a, b) in run.lists().iter().zip(back.lists()) {
        assert_eq!(a.query_id(), b.query_id());
        let ids = |l: &lidyn::ScoredList| l.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>();
        assert_eq!(ids(a), ids(b));
    }
    let original = evaluate_run(&run, &s.qrels, 10).unwrap();
    assert_eq!(original, evaluate_run(&back, &s.qrels, 10).unwrap());
}

#[test]
fn perfect_run_scores_one() {
    let s = synth(6);
    // Put each query's positive first by giving the chunk the query's own rows.
    let mut sets: Vec<EmbeddingSet> = s.corpus.iter().map(|c| c.unwrap().to_set()).collect();
    for (qid, grades) in s.qrels.iter() {
        let positive = grades.keys().next().unwrap();
        let q = s.queries.get_by_id(qid).unwrap().to_set();
        let slot = sets.iter_mut().find(|c| &c.id == positive).unwrap();
        *slot =
            EmbeddingSet::new(&slot.id, &slot.dataset, slot.token_length, q.dim(), q.into_data()).unwrap();
    }
    let corpus = EmbeddingStore::from_sets(sets, true).unwrap();
    let report = evaluate_run(&retrieve(&s.queries, &corpus, 10).unwrap(), &s.qrels, 10).unwrap();
    assert_eq!(report.mean, 1.0);
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let s = synth(7);
    let seq = retrieve_with(&s.queries, &s.corpus, 0, Execution::Sequential).unwrap();
    let par = retrieve_with(&s.queries, &s.corpus, 0, Execution::Parallel).unwrap();
    for (a, b) in seq.lists().iter().zip(par.lists()) {
        assert_eq!(a.entries(), b.entries());
    }
    let h_seq = lengthbias::chunk_harm_with(&seq, &s.qrels, 10, Execution::Sequential).unwrap();
    let h_par = lengthbias::chunk_harm_with(&par, &s.qrels, 10, Execution::Parallel).unwrap();
    assert_eq!(h_seq, h_par);

    let bins = quantile_bins(&s.corpus.manifest().token_lengths(), 10).unwrap();
    let r_seq = lengthbias::harm_report_with(&h_seq, &bins, 200, 0.9, 3, Execution::Sequential).unwrap();
    let r_par = lengthbias::harm_report_with(&h_par, &bins, 200, 0.9, 3, Execution::Parallel).unwrap();
    assert_eq!(r_seq, r_par);
    let e_seq =
        lengthbias::error_count_report_with(&seq, &s.qrels, &bins, 200, 0.9, 3, Execution::Sequential)
            .unwrap();
    let e_par =
        lengthbias::error_count_report_with(&par, &s.qrels, &bins, 200, 0.9, 3, Execution::Parallel).unwrap();
    assert_eq!(e_seq, e_par);

    let d_seq = simdist_report_with(
        &seq,
        &s.qrels,
        &s.queries,
        &s.corpus,
        Mode::Failed,
        1,
        30,
        Execution::Sequential,
    );
    let d_par = simdist_report_with(
        &par,
        &s.qrels,
        &s.queries,
        &s.corpus,
        Mode::Failed,
        1,
        30,
        Execution::Parallel,
    );
    assert_eq!(d_seq.unwrap().curves, d_par.unwrap().curves);
}

#[test]
fn truncated_runs_are_rejected_where_depth_matters() {
    let s = synth(8);
    let run = retrieve(&s.queries, &s.corpus, 10).unwrap();
    assert!(matches!(
        lengthbias::chunk_harm(&run, &s.qrels, 10),
        Err(Error::TruncatedRun(_))
    ));
    assert!(lengthbias::chunk_harm(&run, &s.qrels, 9).is_ok());
    let report = simdist_report_with(
        &run,
        &s.qrels,
        &s.queries,
        &s.corpus,
        Mode::Failed,
        1,
        10,
        Execution::default(),
    );
    assert!(matches!(report, Err(Error::TruncatedRun(_))));
}
