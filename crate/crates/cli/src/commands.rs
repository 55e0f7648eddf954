use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use lidyn::lengthbias::{self, quantile_bins};
use lidyn::simdist;
use lidyn::synthlab::{self, SweepOptions};
use lidyn::{EmbeddingStore, Qrels, RetrievalRun, StoreManifest};

use crate::output::{self, ensure_dir, write_csv, write_json, VerifyFailed, EXIT_PRECONDITION};
use crate::{
    BiasCommand, Command, ErrorCountArgs, EvaluateArgs, FpLengthArgs, GenerateArgs, HarmArgs, IngestArgs,
    MonotonicityArgs, QueryCorpusArgs, RetrieveArgs, SimdistArgs, SweepArgs, SynthCommand,
};

pub fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::Retrieve(a) => retrieve(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Bias(BiasCommand::FpLength(a)) => fp_length(&a),
        Command::Bias(BiasCommand::Harm(a)) => harm(&a),
        Command::Bias(BiasCommand::ErrorCounts(a)) => error_counts(&a),
        Command::Simdist(a) => simdist_cmd(&a),
        Command::Synth(SynthCommand::Generate(a)) => generate(&a),
        Command::Synth(SynthCommand::Monotonicity(a)) => monotonicity(&a),
        Command::Synth(SynthCommand::Sweep(a)) => sweep(&a),
    }
}

fn open(manifest: &Path, vectors: &Path) -> anyhow::Result<EmbeddingStore> {
    EmbeddingStore::open(manifest, vectors).with_context(|| format!("opening store {}", manifest.display()))
}

fn open_pair(a: &QueryCorpusArgs) -> anyhow::Result<(EmbeddingStore, EmbeddingStore)> {
    Ok((
        open(&a.queries_manifest, &a.queries_vectors)?,
        open(&a.corpus_manifest, &a.corpus_vectors)?,
    ))
}

fn read_run(path: &Path) -> anyhow::Result<RetrievalRun> {
    RetrievalRun::read_trec(path).with_context(|| format!("reading run {}", path.display()))
}

fn read_qrels(path: &Path) -> anyhow::Result<Qrels> {
    Qrels::read_trec(path).with_context(|| format!("reading qrels {}", path.display()))
}

fn load_manifest(path: &Path) -> anyhow::Result<StoreManifest> {
    StoreManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

#[derive(Serialize)]
struct IngestSummary {
    n_items: usize,
    dim: usize,
    normalized: bool,
    mean_token_length: f64,
    verified: bool,
    findings: usize,
}

fn ingest(a: &IngestArgs) -> anyhow::Result<u8> {
    let store = open(&a.store.manifest, &a.store.vectors)?;
    if a.verify {
        let findings = store.findings();
        if !findings.is_empty() {
            return Err(VerifyFailed(findings).into());
        }
    }
    let summary = IngestSummary {
        n_items: store.len(),
        dim: store.dim(),
        normalized: store.is_normalized(),
        mean_token_length: store.manifest().mean_token_length(),
        verified: a.verify,
        findings: 0,
    };
    print!("{}", output::to_json("ingest", a, &summary)?);
    Ok(0)
}

#[derive(Serialize)]
struct RetrieveSummary {
    n_queries: usize,
    n_corpus: usize,
    lines: usize,
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn retrieve(a: &RetrieveArgs) -> anyhow::Result<u8> {
    let (queries, corpus) = open_pair(&a.stores)?;
    let run = lidyn::retrieve(&queries, &corpus, a.k)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    run.write_trec_file(&a.out, &a.tag)?;
    let summary = RetrieveSummary {
        n_queries: run.len(),
        n_corpus: corpus.len(),
        lines: run.lists().iter().map(|l| l.len()).sum(),
    };
    write_json(&sidecar(&a.out), "retrieve", a, &summary)?;
    Ok(0)
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<u8> {
    if a.k == 0 {
        return Err(output::UsageError("--k must be at least 1".into()).into());
    }
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let report = lidyn::evaluate_run(&run, &qrels, a.k)?;
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("evaluate.json"), "evaluate", a, &report)?;
    write_csv(&a.out_dir.join("evaluate.csv"), "evaluate", a, |w| {
        report.write_csv(w)
    })?;
    Ok(0)
}

fn fp_length(a: &FpLengthArgs) -> anyhow::Result<u8> {
    let run = read_run(&a.inputs.run)?;
    let qrels = read_qrels(&a.inputs.qrels)?;
    let corpus = load_manifest(&a.inputs.corpus_manifest)?;
    let report = lengthbias::fp_length_report(&run, &qrels, &corpus, a.n_query_quantiles, a.fp_mode)?;
    ensure_dir(&a.out_dir)?;
    let cmd = "bias fp-length";
    write_json(&a.out_dir.join("fp_length.json"), cmd, a, &report)?;
    write_csv(&a.out_dir.join("fp_length.csv"), cmd, a, |w| report.write_csv(w))?;
    Ok(0)
}

fn harm(a: &HarmArgs) -> anyhow::Result<u8> {
    let run = read_run(&a.inputs.run)?;
    let qrels = read_qrels(&a.inputs.qrels)?;
    let corpus = load_manifest(&a.inputs.corpus_manifest)?;
    let binning = quantile_bins(&corpus.token_lengths(), a.perm.n_bins)?;
    let harm = lengthbias::chunk_harm(&run, &qrels, a.k)?;
    let report = lengthbias::harm_report(
        &harm,
        &binning,
        a.perm.n_permutations,
        a.perm.ci_level,
        a.perm.seed,
    )?;
    ensure_dir(&a.out_dir)?;
    let cmd = "bias harm";
    write_json(&a.out_dir.join("harm_bins.json"), cmd, a, &report)?;
    write_csv(&a.out_dir.join("harm_bins.csv"), cmd, a, |w| report.write_csv(w))?;
    write_csv(&a.out_dir.join("chunk_harm.csv"), cmd, a, |w| {
        lengthbias::write_harm_csv(&harm, w)
    })?;
    Ok(0)
}

fn error_counts(a: &ErrorCountArgs) -> anyhow::Result<u8> {
    let run = read_run(&a.inputs.run)?;
    let qrels = read_qrels(&a.inputs.qrels)?;
    let corpus = load_manifest(&a.inputs.corpus_manifest)?;
    let binning = quantile_bins(&corpus.token_lengths(), a.perm.n_bins)?;
    let report = lengthbias::error_count_report(
        &run,
        &qrels,
        &binning,
        a.perm.n_permutations,
        a.perm.ci_level,
        a.perm.seed,
    )?;
    ensure_dir(&a.out_dir)?;
    let cmd = "bias error-counts";
    write_json(&a.out_dir.join("error_counts.json"), cmd, a, &report)?;
    write_csv(&a.out_dir.join("error_counts.csv"), cmd, a, |w| {
        report.write_csv(w)
    })?;
    Ok(0)
}

fn simdist_cmd(a: &SimdistArgs) -> anyhow::Result<u8> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let (queries, corpus) = open_pair(&a.stores)?;
    let report = simdist::simdist_report(&run, &qrels, &queries, &corpus, a.mode, a.cutoff, a.grid_size)?;
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("simdist.json"), "simdist", a, &report)?;
    write_csv(&a.out_dir.join("simdist.csv"), "simdist", a, |w| {
        report.write_csv(w)
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct GenerateSummary {
    n_chunks: usize,
    n_queries: usize,
    mean_chunk_length: f64,
}

fn generate(a: &GenerateArgs) -> anyhow::Result<u8> {
    let synth = synthlab::generate_corpus(&a.synth.config())?;
    ensure_dir(&a.out_dir)?;
    synth.write(&a.out_dir)?;
    let summary = GenerateSummary {
        n_chunks: synth.corpus.len(),
        n_queries: synth.queries.len(),
        mean_chunk_length: synth.corpus.manifest().mean_token_length(),
    };
    write_json(&a.out_dir.join("synth.json"), "synth generate", a, &summary)?;
    Ok(0)
}

fn monotonicity(a: &MonotonicityArgs) -> anyhow::Result<u8> {
    let cfg = a.synth.config();
    let trials = synthlab::monotonicity_trials(&cfg, a.trials, a.max_extra)?;
    let report = synthlab::MonotonicityReport::from_trials(&trials, a.max_extra);
    let cmd = "synth monotonicity";
    print!("{}", output::to_json(cmd, a, &report)?);
    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        write_json(&dir.join("monotonicity.json"), cmd, a, &report)?;
        write_csv(&dir.join("monotonicity.csv"), cmd, a, |w| {
            writeln!(w, "trial,causal_delta,bidirectional_delta")?;
            for (i, t) in trials.iter().enumerate() {
                writeln!(w, "{i},{},{}", t.causal_delta, t.bidirectional_delta)?;
            }
            Ok(())
        })?;
    }
    if report.holds() {
        Ok(0)
    } else {
        log::error!(
            "{} causal-prefix extension(s) lowered MaxSim by more than {}",
            report.causal_violations,
            report.tolerance
        );
        Ok(EXIT_PRECONDITION)
    }
}

fn sweep(a: &SweepArgs) -> anyhow::Result<u8> {
    let base = a.synth.config();
    let ranges = if a.length_ranges.is_empty() {
        vec![base.length_range]
    } else {
        a.length_ranges.clone()
    };
    let grid: Vec<_> = ranges
        .iter()
        .flat_map(|&range| {
            let base = &base;
            (0..a.replicates).map(move |r| synthlab::SynthConfig {
                length_range: range,
                seed: base.seed.wrapping_add(r),
                ..base.clone()
            })
        })
        .collect();
    if grid.is_empty() {
        return Err(output::UsageError("--replicates must be at least 1".into()).into());
    }
    let opts = SweepOptions {
        k: a.k,
        n_bins: a.n_bins,
        n_permutations: a.n_permutations,
        ci_level: a.ci_level,
        single_vector: !a.no_single_vector,
    };
    let rows = synthlab::bias_sweep(&grid, &opts)?;
    ensure_dir(&a.out_dir)?;
    let cmd = "synth sweep";
    write_json(&a.out_dir.join("sweep.json"), cmd, a, &rows)?;
    write_csv(&a.out_dir.join("sweep.csv"), cmd, a, |w| {
        synthlab::write_sweep_csv(&rows, w)
    })?;
    Ok(0)
}
