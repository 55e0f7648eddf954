use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lidyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidyn"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Generates a small synthetic dataset into `dir`.
fn generate(dir: &Path) {
    let out = lidyn(&[
        "synth",
        "generate",
        "--n-chunks",
        "60",
        "--n-queries",
        "8",
        "--seed",
        "1",
        "--out-dir",
        &s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn store_flags(dir: &Path) -> Vec<String> {
    let f = |rel: &str| s(&dir.join(rel));
    [
        "--queries-manifest".into(),
        f("queries/manifest.json"),
        "--queries-vectors".into(),
        f("queries/vectors.bin"),
        "--corpus-manifest".into(),
        f("corpus/manifest.json"),
        "--corpus-vectors".into(),
        f("corpus/vectors.bin"),
    ]
    .to_vec()
}

fn retrieve(dir: &Path, k: &str) -> String {
    let run = s(&dir.join(format!("run{k}.trec")));
    let mut args = vec![
        "retrieve".to_string(),
        "--k".into(),
        k.into(),
        "--out".into(),
        run.clone(),
    ];
    args.extend(store_flags(dir));
    let out = lidyn(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    run
}

#[test]
fn help_and_version_exit_zero_but_bad_flags_are_usage_errors() {
    assert_eq!(code(&lidyn(&["--help"])), 0);
    assert_eq!(code(&lidyn(&["--version"])), 0);
    assert_eq!(code(&lidyn(&["retrieve", "--bogus"])), 1);
    assert_eq!(code(&lidyn(&[])), 1);
    let out = lidyn(&[
        "synth",
        "generate",
        "--relevance-signal",
        "2",
        "--out-dir",
        "unused",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(stderr_json(&out)["error"]["kind"], "InvalidConfig");
}

#[test]
fn ingest_accepts_a_valid_store_and_flags_a_truncated_blob() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let manifest = s(&dir.path().join("corpus/manifest.json"));
    let vectors = dir.path().join("corpus/vectors.bin");
    let ok = lidyn(&[
        "ingest",
        "--manifest",
        &manifest,
        "--vectors",
        &s(&vectors),
        "--verify",
    ]);
    assert_eq!(code(&ok), 0);
    let summary: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(summary["report"]["n_items"], 60);
    assert_eq!(summary["format_version"], 1);

    let blob = std::fs::read(&vectors).unwrap();
    let short = dir.path().join("short.bin");
    std::fs::write(&short, &blob[..blob.len() - 8]).unwrap();
    let bad = lidyn(&["ingest", "--manifest", &manifest, "--vectors", &s(&short)]);
    assert_eq!(code(&bad), 2);
    let err = stderr_json(&bad);
    assert_eq!(err["error"]["kind"], "OffsetOutOfBounds");
    assert_eq!(err["error"]["class"], "validation");
}

#[test]
fn verify_reports_every_non_finite_item() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let manifest = s(&dir.path().join("corpus/manifest.json"));
    let vectors = dir.path().join("corpus/vectors.bin");
    let mut blob = std::fs::read(&vectors).unwrap();
    let n = blob.len();
    blob[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
    blob[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
    std::fs::write(&vectors, blob).unwrap();
    assert_eq!(
        code(&lidyn(&[
            "ingest",
            "--manifest",
            &manifest,
            "--vectors",
            &s(&vectors)
        ])),
        0
    );
    let out = lidyn(&[
        "ingest",
        "--manifest",
        &manifest,
        "--vectors",
        &s(&vectors),
        "--verify",
    ]);
    assert_eq!(code(&out), 2);
    let findings = stderr_json(&out)["error"]["findings"].as_array().unwrap().clone();
    assert_eq!(findings.len(), 2);
    assert!(findings.iter().all(|f| f["kind"] == "NonFiniteVector"));
}

#[test]
fn full_retrieval_writes_every_pair_and_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let run = retrieve(dir.path(), "0");
    assert_eq!(std::fs::read_to_string(&run).unwrap().lines().count(), 8 * 60);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{run}.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "retrieve");
    assert_eq!(meta["config"]["k"], 0);
    assert_eq!(meta["report"]["lines"], 480);
}

#[test]
fn evaluate_gives_one_for_a_perfect_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.trec");
    let qrels = dir.path().join("qrels.txt");
    std::fs::write(
        &run,
        "q1 Q0 a 1 2.000000 t\nq1 Q0 b 2 1.000000 t\nq2 Q0 c 1 3.000000 t\n",
    )
    .unwrap();
    std::fs::write(&qrels, "q1 0 a 1\nq2 0 c 2\n").unwrap();
    let out_dir = dir.path().join("eval");
    let out = lidyn(&[
        "evaluate",
        "--run",
        &s(&run),
        "--qrels",
        &s(&qrels),
        "--out-dir",
        &s(&out_dir),
    ]);
    assert_eq!(code(&out), 0);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("evaluate.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["mean"], 1.0);
    let csv = std::fs::read_to_string(out_dir.join("evaluate.csv")).unwrap();
    assert!(csv.starts_with("# lidyn evaluate format_version=1 config="));
    assert_eq!(csv.lines().nth(1), Some("query_id,ndcg"));
}

#[test]
fn analysis_preconditions_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let run = retrieve(dir.path(), "10");
    let qrels = s(&dir.path().join("qrels.txt"));
    let manifest = s(&dir.path().join("corpus/manifest.json"));
    let out = lidyn(&[
        "bias",
        "harm",
        "--run",
        &run,
        "--qrels",
        &qrels,
        "--corpus-manifest",
        &manifest,
        "--out-dir",
        &s(&dir.path().join("h")),
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_json(&out)["error"]["kind"], "TruncatedRun");

    let other = dir.path().join("other_qrels.txt");
    std::fs::write(&other, "zz 0 c00001 1\n").unwrap();
    let out = lidyn(&[
        "evaluate",
        "--run",
        &run,
        "--qrels",
        &s(&other),
        "--out-dir",
        &s(&dir.path().join("e")),
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_json(&out)["error"]["kind"], "EmptyIntersection");
}

#[test]
fn bias_and_simdist_write_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let run = retrieve(dir.path(), "0");
    let qrels = s(&dir.path().join("qrels.txt"));
    let manifest = s(&dir.path().join("corpus/manifest.json"));
    let out_dir = dir.path().join("out");
    let o = s(&out_dir);
    let base = [
        "--run",
        run.as_str(),
        "--qrels",
        qrels.as_str(),
        "--corpus-manifest",
        manifest.as_str(),
        "--out-dir",
        o.as_str(),
    ];
    for (sub, extra) in [
        (
            "fp-length",
            vec!["--fp-mode", "topk:5", "--n-query-quantiles", "4"],
        ),
        ("harm", vec!["--n-permutations", "150", "--seed", "3"]),
        ("error-counts", vec!["--n-permutations", "150", "--n-bins", "5"]),
    ] {
        let out = lidyn(&[&["bias", sub][..], &base, &extra].concat());
        assert_eq!(code(&out), 0, "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["fp_length", "harm_bins", "error_counts"] {
        let json: Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join(format!("{file}.json"))).unwrap())
                .unwrap();
        assert_eq!(json["format_version"], 1);
        assert!(out_dir.join(format!("{file}.csv")).exists());
    }
    let harm: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("harm_bins.json")).unwrap()).unwrap();
    assert_eq!(harm["config"]["seed"], 3);
    assert_eq!(harm["report"]["bins"].as_array().unwrap().len(), 10);
    assert!(
        std::fs::read_to_string(out_dir.join("chunk_harm.csv"))
            .unwrap()
            .lines()
            .count()
            > 60
    );

    let mut args = vec![
        "simdist",
        "--run",
        &run,
        "--qrels",
        &qrels,
        "--mode",
        "success",
        "--cutoff",
        "60",
        "--out-dir",
        &o,
    ];
    let stores = store_flags(dir.path());
    args.extend(stores.iter().map(String::as_str));
    let out = lidyn(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sim: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("simdist.json")).unwrap()).unwrap();
    assert_eq!(sim["report"]["n_queries"], 8);
    assert!(sim["report"]["curves"]["pooled"]["positive"]["values"].is_array());
}

#[test]
fn monotonicity_holds_on_the_default_config() {
    let out = lidyn(&["synth", "monotonicity", "--trials", "1000"]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["report"]["causal_violations"], 0);
    assert!(report["report"]["bidirectional_decreases"].as_u64().unwrap() > 0);
}

#[test]
fn sweep_emits_one_row_per_config_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = lidyn(&[
        "synth",
        "sweep",
        "--n-chunks",
        "80",
        "--n-queries",
        "6",
        "--length-ranges",
        "8-32,8-64",
        "--replicates",
        "2",
        "--n-permutations",
        "100",
        "--out-dir",
        &s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sweep: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["report"].as_array().unwrap().len(), 8);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 8);
}
