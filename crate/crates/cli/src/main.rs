mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lidyn::lengthbias::{self, FpMode};
use lidyn::simdist::{self, Mode};
use lidyn::synthlab::{ExtensionMode, SynthConfig};

/// Exact late-interaction retrieval and length-bias diagnostics.
#[derive(Debug, Parser)]
#[command(name = "lidyn", version, about)]
struct Cli {
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Open and validate an embedding store.
    Ingest(IngestArgs),
    /// Exhaustive MaxSim retrieval into a TREC run file.
    Retrieve(RetrieveArgs),
    /// nDCG@k of a run against qrels.
    Evaluate(EvaluateArgs),
    /// Length-bias diagnostics.
    #[command(subcommand)]
    Bias(BiasCommand),
    /// Sorted token-similarity curves for failed or successful queries.
    Simdist(SimdistArgs),
    /// Synthetic corpora and controlled experiments.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
enum BiasCommand {
    /// Mean false-positive length against mean relevant length.
    FpLength(FpLengthArgs),
    /// Leave-one-out harm per length bin with a permutation baseline.
    Harm(HarmArgs),
    /// False-positive counts per length bin with a uniform-draw baseline.
    ErrorCounts(ErrorCountArgs),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Write a synthetic corpus, queries and qrels.
    Generate(GenerateArgs),
    /// Check that appending tokens never lowers MaxSim under causal extension.
    Monotonicity(MonotonicityArgs),
    /// Harm-by-length sweep over length ranges and replicate seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
struct StoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    store: StoreArgs,
    /// Scan every vector for finiteness and, if declared, unit norm.
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args, Serialize)]
struct QueryCorpusArgs {
    #[arg(long)]
    queries_manifest: PathBuf,
    #[arg(long)]
    queries_vectors: PathBuf,
    #[arg(long)]
    corpus_manifest: PathBuf,
    #[arg(long)]
    corpus_vectors: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RetrieveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    stores: QueryCorpusArgs,
    /// Ranking depth per query; 0 ranks the whole corpus.
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "lidyn")]
    tag: String,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RunInputs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Corpus manifest; supplies token lengths and the binning population.
    #[arg(long)]
    corpus_manifest: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PermutationArgs {
    #[arg(long, default_value_t = lengthbias::DEFAULT_N_BINS)]
    n_bins: usize,
    #[arg(long, default_value_t = lengthbias::DEFAULT_N_PERMUTATIONS)]
    n_permutations: usize,
    #[arg(long, default_value_t = lengthbias::DEFAULT_CI_LEVEL)]
    ci_level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct FpLengthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: RunInputs,
    #[arg(long, default_value_t = lengthbias::DEFAULT_N_QUERY_QUANTILES)]
    n_query_quantiles: usize,
    /// `above-positive` or `topk:<k>`.
    #[arg(long, default_value = "above-positive")]
    #[serde(serialize_with = "output::display")]
    fp_mode: FpMode,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct HarmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: RunInputs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    perm: PermutationArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ErrorCountArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: RunInputs,
    #[command(flatten)]
    #[serde(flatten)]
    perm: PermutationArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimdistArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    stores: QueryCorpusArgs,
    /// `failed` or `success`.
    #[arg(long, default_value = "failed")]
    #[serde(serialize_with = "output::display")]
    mode: Mode,
    #[arg(long, default_value_t = simdist::DEFAULT_CUTOFF)]
    cutoff: usize,
    #[arg(long, default_value_t = simdist::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Generator knobs; defaults mirror `SynthConfig::default()`.
#[derive(Debug, Clone, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n_chunks: usize,
    #[arg(long, default_value_t = 20)]
    n_queries: usize,
    #[arg(long, default_value_t = 8)]
    query_tokens: usize,
    #[arg(long, default_value_t = 8)]
    min_length: u32,
    #[arg(long, default_value_t = 128)]
    max_length: u32,
    /// Fix planted positives to this token-length range, e.g. `64-64`.
    #[arg(long, value_parser = output::parse_range)]
    positive_length: Option<(u32, u32)>,
    #[arg(long, default_value_t = 0.6)]
    relevance_signal: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "causal_prefix")]
    #[serde(serialize_with = "output::display")]
    extension_mode: ExtensionMode,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            dim: self.dim,
            n_chunks: self.n_chunks,
            n_queries: self.n_queries,
            query_tokens: self.query_tokens,
            length_range: (self.min_length, self.max_length),
            positive_length_range: self.positive_length,
            relevance_signal: self.relevance_signal,
            noise_scale: self.noise_scale,
            seed: self.seed,
            extension_mode: self.extension_mode,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    synth: SynthArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MonotonicityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Extensions append between 1 and this many tokens.
    #[arg(long, default_value_t = 16)]
    max_extra: usize,
    /// Also write per-trial deltas and the summary here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    synth: SynthArgs,
    /// Comma-separated chunk length ranges, e.g. `8-64,8-256`; defaults to
    /// the single range given by --min-length/--max-length.
    #[arg(long, value_delimiter = ',', value_parser = output::parse_range)]
    length_ranges: Vec<(u32, u32)>,
    /// Replicate r of every range uses seed + r.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = lengthbias::DEFAULT_N_BINS)]
    n_bins: usize,
    #[arg(long, default_value_t = lengthbias::DEFAULT_N_PERMUTATIONS)]
    n_permutations: usize,
    #[arg(long, default_value_t = lengthbias::DEFAULT_CI_LEVEL)]
    ci_level: f64,
    /// Skip the mean-pooled single-vector control.
    #[arg(long)]
    no_single_vector: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { output::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        return output::report_error(&e);
    }
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => output::report_error(&e),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        anyhow::ensure!(n >= 1, output::UsageError("--threads must be at least 1".into()));
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if threads.is_some() {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn synth_defaults_match_library() {
        let cli = Cli::try_parse_from(["lidyn", "synth", "generate", "--out-dir", "x"]).unwrap();
        let Command::Synth(SynthCommand::Generate(args)) = cli.command else {
            panic!("wrong subcommand");
        };
        assert_eq!(args.synth.config(), SynthConfig::default());
    }
}
