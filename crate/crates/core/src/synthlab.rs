//! Synthetic embedding corpora for controlled length experiments.
//!
//! All random rows are uniform on the unit sphere (normalized standard
//! normals). Each query owns one planted relevant chunk whose tokens sit at
//! a chosen cosine to the query tokens; every other token is noise. Chunk
//! lengths are drawn uniformly from a range, so longer chunks simply carry
//! more noise tokens and therefore more chances at a spurious maximum.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingSet, EmbeddingStore, Vectors};
use crate::error::{Error, Result};
use crate::lengthbias::{self, harm_permutations, quantile_bins, quantile_sorted, BinReport, BinReportMeta};
use crate::metrics::Qrels;
use crate::par::{self, Execution};
use crate::scoring::{maxsim, retrieve_with, Entry, IdTable, RetrievalRun, ScoredList};
use crate::seed::{self, Rng};

pub const SYNTH_DATASET: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    /// Original rows kept bit-exactly, new rows appended.
    CausalPrefix,
    /// Original rows perturbed and renormalized, new rows appended.
    BidirectionalResample,
}

impl fmt::Display for ExtensionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtensionMode::CausalPrefix => "causal_prefix",
            ExtensionMode::BidirectionalResample => "bidirectional_resample",
        })
    }
}

impl FromStr for ExtensionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal_prefix" | "causal-prefix" => Ok(ExtensionMode::CausalPrefix),
            "bidirectional_resample" | "bidirectional-resample" => Ok(ExtensionMode::BidirectionalResample),
            _ => Err(Error::InvalidConfig(format!("unknown extension mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_chunks: usize,
    pub n_queries: usize,
    pub query_tokens: usize,
    /// Inclusive token-length range of chunks.
    pub length_range: (u32, u32),
    /// Length range for planted positive chunks; `None` uses `length_range`.
    #[serde(default)]
    pub positive_length_range: Option<(u32, u32)>,
    /// Cosine between each planted token and its query token.
    pub relevance_signal: f64,
    /// Gaussian jitter on planted tokens; also the perturbation scale of
    /// bidirectional extension.
    pub noise_scale: f64,
    pub seed: u64,
    pub extension_mode: ExtensionMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 32,
            n_chunks: 200,
            n_queries: 20,
            query_tokens: 8,
            length_range: (8, 128),
            positive_length_range: None,
            relevance_signal: 0.6,
            noise_scale: 0.1,
            seed: 0,
            extension_mode: ExtensionMode::CausalPrefix,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.n_chunks == 0 || self.n_queries == 0 || self.query_tokens == 0 {
            return bad("n_chunks, n_queries and query_tokens must be positive");
        }
        for (lo, hi) in [Some(self.length_range), self.positive_length_range]
            .into_iter()
            .flatten()
        {
            if lo == 0 || lo > hi {
                return bad("length ranges must satisfy 1 <= min <= max");
            }
        }
        if !(0.0..=1.0).contains(&self.relevance_signal) {
            return bad("relevance_signal must lie in [0, 1]");
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad("noise_scale must be finite and non-negative");
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize_to_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Uniform random point on the unit sphere.
pub fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f32> {
    loop {
        let v = normal_vec(rng, dim);
        if v.iter().any(|x| *x != 0.0) {
            return normalize_to_f32(&v);
        }
    }
}

/// Unit vector at cosine `signal` to the unit vector `target`, plus
/// isotropic jitter of scale `noise` before renormalization.
fn planted_token(rng: &mut Rng, target: &[f32], signal: f64, noise: f64) -> Vec<f32> {
    let t: Vec<f64> = target.iter().map(|&x| f64::from(x)).collect();
    let tn = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let t: Vec<f64> = t.iter().map(|x| x / tn).collect();
    // Random direction orthogonal to the target.
    let perp = loop {
        let g = normal_vec(rng, t.len());
        let along: f64 = g.iter().zip(&t).map(|(a, b)| a * b).sum();
        let p: Vec<f64> = g.iter().zip(&t).map(|(a, b)| a - along * b).collect();
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            break p.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let ortho = (1.0 - signal * signal).max(0.0).sqrt();
    let jitter = normal_vec(rng, t.len());
    let v: Vec<f64> = (0..t.len())
        .map(|i| signal * t[i] + ortho * perp[i] + noise * jitter[i])
        .collect();
    normalize_to_f32(&v)
}

/// A generated corpus with its queries and judgments.
#[derive(Debug)]
pub struct SynthCorpus {
    pub corpus: EmbeddingStore,
    pub queries: EmbeddingStore,
    pub qrels: Qrels,
}

impl SynthCorpus {
    /// Writes `corpus/`, `queries/` and `qrels.txt` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.corpus.write(dir.join("corpus"))?;
        self.queries.write(dir.join("queries"))?;
        let path = dir.join("qrels.txt");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.qrels
            .write_trec(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&path, e))
    }
}

pub fn chunk_id(i: usize) -> String {
    format!("c{i:05}")
}

pub fn query_id(i: usize) -> String {
    format!("q{i:04}")
}

/// Builds a synthetic corpus. Each query gets one planted positive chunk,
/// chosen uniformly at random and independently of length.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth-corpus");
    let dim = cfg.dim;

    let query_rows: Vec<Vec<Vec<f32>>> = (0..cfg.n_queries)
        .map(|_| {
            (0..cfg.query_tokens)
                .map(|_| random_unit(&mut rng, dim))
                .collect()
        })
        .collect();

    let (lo, hi) = cfg.length_range;
    let mut chunk_rows: Vec<Vec<Vec<f32>>> = (0..cfg.n_chunks)
        .map(|_| {
            let len = rng.random_range(lo..=hi) as usize;
            (0..len).map(|_| random_unit(&mut rng, dim)).collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_chunks).collect();
    order.shuffle(&mut rng);
    if let Some((plo, phi)) = cfg.positive_length_range {
        for &target in order.iter().take(cfg.n_queries.min(cfg.n_chunks)) {
            let len = rng.random_range(plo..=phi) as usize;
            chunk_rows[target] = (0..len).map(|_| random_unit(&mut rng, dim)).collect();
        }
    }
    let mut qrels = Qrels::new();
    for (qi, rows) in query_rows.iter().enumerate() {
        let target = order[qi % cfg.n_chunks];
        let chunk = &mut chunk_rows[target];
        let mut slots: Vec<usize> = (0..chunk.len()).collect();
        slots.shuffle(&mut rng);
        for (slot, q) in slots.into_iter().zip(rows) {
            chunk[slot] = planted_token(&mut rng, q, cfg.relevance_signal, cfg.noise_scale);
        }
        qrels.insert(query_id(qi), chunk_id(target), 1);
    }

    let corpus = chunk_rows
        .iter()
        .enumerate()
        .map(|(i, rows)| EmbeddingSet::from_rows(chunk_id(i), SYNTH_DATASET, rows.len() as u32, rows))
        .collect::<Result<Vec<_>>>()?;
    let queries = query_rows
        .iter()
        .enumerate()
        .map(|(i, rows)| EmbeddingSet::from_rows(query_id(i), SYNTH_DATASET, rows.len() as u32, rows))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        corpus: EmbeddingStore::from_sets(corpus, true)?.with_provenance(format!(
            "synthetic corpus, seed {}, relevance_signal {}",
            cfg.seed, cfg.relevance_signal
        )),
        queries: EmbeddingStore::from_sets(queries, true)?,
        qrels,
    })
}

/// Ranking-level generator: chunks with random lengths, and per query a
/// ranking whose false positives (items above the single positive) are drawn
/// with probability proportional to `length ^ length_exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRunConfig {
    pub n_chunks: usize,
    pub n_queries: usize,
    pub length_range: (u32, u32),
    /// The positive's rank is uniform on `1..=max_positive_rank`.
    pub max_positive_rank: usize,
    /// 0 gives length-independent false positives.
    pub length_exponent: f64,
    pub seed: u64,
}

impl Default for PlantedRunConfig {
    fn default() -> Self {
        PlantedRunConfig {
            n_chunks: 500,
            n_queries: 300,
            length_range: (8, 512),
            max_positive_rank: 10,
            length_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct PlantedRun {
    pub run: RetrievalRun,
    pub qrels: Qrels,
    pub lengths: BTreeMap<String, u32>,
}

pub fn planted_length_bias_run(cfg: &PlantedRunConfig) -> Result<PlantedRun> {
    let (lo, hi) = cfg.length_range;
    if cfg.n_chunks < 2 || cfg.n_queries == 0 || lo == 0 || lo > hi {
        return Err(Error::InvalidConfig("bad planted run configuration".into()));
    }
    if cfg.max_positive_rank == 0 || cfg.max_positive_rank > cfg.n_chunks {
        return Err(Error::InvalidConfig(
            "max_positive_rank must lie in 1..=n_chunks".into(),
        ));
    }
    if !cfg.length_exponent.is_finite() {
        return Err(Error::InvalidConfig("length_exponent must be finite".into()));
    }
    let mut rng = seed::rng(cfg.seed, "planted-run");
    let lens: Vec<u32> = (0..cfg.n_chunks).map(|_| rng.random_range(lo..=hi)).collect();
    let ids = Arc::new(IdTable::from_ids((0..cfg.n_chunks).map(chunk_id).collect()));
    let n = cfg.n_chunks;
    let mut qrels = Qrels::new();
    let mut lists = Vec::with_capacity(cfg.n_queries);
    for qi in 0..cfg.n_queries {
        let positive = rng.random_range(0..n);
        let rank = rng.random_range(1..=cfg.max_positive_rank);
        // Weighted sampling without replacement via exponential keys.
        let mut keyed: Vec<(f64, usize)> = (0..n)
            .filter(|&c| c != positive)
            .map(|c| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let w = f64::from(lens[c]).powf(cfg.length_exponent);
                (u.ln() / w, c)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rest: Vec<usize> = keyed[rank - 1..].iter().map(|&(_, c)| c).collect();
        rest.shuffle(&mut rng);
        let order = keyed[..rank - 1]
            .iter()
            .map(|&(_, c)| c)
            .chain(std::iter::once(positive))
            .chain(rest);
        let entries = order
            .enumerate()
            .map(|(pos, c)| Entry {
                doc: c as u32,
                score: (n - pos) as f64,
            })
            .collect();
        let qid = query_id(qi);
        qrels.insert(qid.clone(), chunk_id(positive), 1);
        lists.push(ScoredList::from_ranked(qid, ids.clone(), entries));
    }
    Ok(PlantedRun {
        run: RetrievalRun::new(0, ids, lists)?,
        qrels,
        lengths: (0..n).map(|c| (chunk_id(c), lens[c])).collect(),
    })
}

/// Appends `n_extra` random unit rows. In bidirectional mode every original
/// row is first jittered by `noise_scale` and renormalized.
pub fn extend_chunk(
    chunk: &EmbeddingSet,
    n_extra: usize,
    mode: ExtensionMode,
    noise_scale: f64,
    seed: u64,
) -> EmbeddingSet {
    assert!(n_extra >= 1, "n_extra must be at least 1");
    let mut rng = seed::rng(seed, "extend-chunk");
    let dim = chunk.dim();
    let mut data: Vec<f32> = match mode {
        ExtensionMode::CausalPrefix => chunk.vectors().as_slice().to_vec(),
        ExtensionMode::BidirectionalResample => chunk
            .vectors()
            .rows()
            .flat_map(|row| {
                let jitter = normal_vec(&mut rng, dim);
                let v: Vec<f64> = row
                    .iter()
                    .zip(&jitter)
                    .map(|(&x, j)| f64::from(x) + noise_scale * j)
                    .collect();
                normalize_to_f32(&v)
            })
            .collect(),
    };
    for _ in 0..n_extra {
        data.extend(random_unit(&mut rng, dim));
    }
    EmbeddingSet::new(
        chunk.id.clone(),
        chunk.dataset.clone(),
        chunk.token_length + n_extra as u32,
        dim,
        data,
    )
    .expect("extension of a valid set is valid")
}

/// Mean-pools rows and renormalizes, giving a one-row set with the same
/// token length.
pub fn mean_pool(set: &EmbeddingSet) -> EmbeddingSet {
    let v = set.vectors();
    let mut acc = vec![0.0f64; v.dim()];
    for row in v.rows() {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += f64::from(x);
        }
    }
    let n = v.n_rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let pooled = if acc.iter().all(|a| *a == 0.0) {
        acc.iter().map(|&a| a as f32).collect()
    } else {
        normalize_to_f32(&acc)
    };
    EmbeddingSet::new(
        set.id.clone(),
        set.dataset.clone(),
        set.token_length,
        v.dim(),
        pooled,
    )
    .expect("pooled set is valid")
}

pub fn mean_pool_store(store: &EmbeddingStore) -> Result<EmbeddingStore> {
    let sets = store
        .iter()
        .map(|r| r.map(|it| mean_pool(&it.to_set())))
        .collect::<Result<Vec<_>>>()?;
    // A mean of opposing unit rows can vanish, so the result is not
    // declared normalized.
    EmbeddingStore::from_sets(sets, false)
}

/// MaxSim change caused by one extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtensionTrial {
    pub causal_delta: f64,
    pub bidirectional_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub max_extra: usize,
    pub tolerance: f64,
    pub causal_violations: usize,
    pub min_causal_delta: f64,
    pub bidirectional_decreases: usize,
    pub min_bidirectional_delta: f64,
}

impl MonotonicityReport {
    pub fn from_trials(results: &[ExtensionTrial], max_extra: usize) -> Self {
        let tol = MONOTONICITY_TOLERANCE;
        MonotonicityReport {
            trials: results.len(),
            max_extra,
            tolerance: tol,
            causal_violations: results.iter().filter(|r| r.causal_delta < -tol).count(),
            min_causal_delta: results
                .iter()
                .map(|r| r.causal_delta)
                .fold(f64::INFINITY, f64::min),
            bidirectional_decreases: results.iter().filter(|r| r.bidirectional_delta < -tol).count(),
            min_bidirectional_delta: results
                .iter()
                .map(|r| r.bidirectional_delta)
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn holds(&self) -> bool {
        self.causal_violations == 0
    }
}

/// Decrease tolerance for the causal-prefix check.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-6;

/// Random (query, chunk, extension) triples scored before and after the
/// extension in both modes. Query and chunk shapes follow `cfg`.
pub fn monotonicity_trials(
    cfg: &SynthConfig,
    trials: usize,
    max_extra: usize,
) -> Result<Vec<ExtensionTrial>> {
    monotonicity_trials_with(cfg, trials, max_extra, Execution::default())
}

pub fn monotonicity_trials_with(
    cfg: &SynthConfig,
    trials: usize,
    max_extra: usize,
    exec: Execution,
) -> Result<Vec<ExtensionTrial>> {
    cfg.validate()?;
    if max_extra == 0 {
        return Err(Error::InvalidConfig("max_extra must be at least 1".into()));
    }
    let base = seed::derive_seed(cfg.seed, "monotonicity");
    par::try_map_indexed(exec, trials, |t| {
        let mut rng = seed::trial_rng(base, t);
        let q: Vec<f32> = (0..cfg.query_tokens)
            .flat_map(|_| random_unit(&mut rng, cfg.dim))
            .collect();
        let (lo, hi) = cfg.length_range;
        let len = rng.random_range(lo..=hi) as usize;
        let c: Vec<f32> = (0..len).flat_map(|_| random_unit(&mut rng, cfg.dim)).collect();
        let chunk = EmbeddingSet::new("c", SYNTH_DATASET, len as u32, cfg.dim, c)?;
        let n_extra = rng.random_range(1..=max_extra);
        let ext_seed = rng.random::<u64>();
        let qv = Vectors::new(&q, cfg.dim);
        let before = maxsim(qv, chunk.vectors())?;
        let causal = extend_chunk(
            &chunk,
            n_extra,
            ExtensionMode::CausalPrefix,
            cfg.noise_scale,
            ext_seed,
        );
        let bidir = extend_chunk(
            &chunk,
            n_extra,
            ExtensionMode::BidirectionalResample,
            cfg.noise_scale,
            ext_seed,
        );
        Ok(ExtensionTrial {
            causal_delta: maxsim(qv, causal.vectors())? - before,
            bidirectional_delta: maxsim(qv, bidir.vectors())? - before,
        })
    })
}

pub fn monotonicity_report(cfg: &SynthConfig, trials: usize, max_extra: usize) -> Result<MonotonicityReport> {
    let results = monotonicity_trials(cfg, trials, max_extra)?;
    Ok(MonotonicityReport::from_trials(&results, max_extra))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    MultiVector,
    SingleVector,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::MultiVector => "multi_vector",
            ModelMode::SingleVector => "single_vector",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub k: usize,
    pub n_bins: usize,
    pub n_permutations: usize,
    pub ci_level: f64,
    /// Also run the mean-pooled single-vector control.
    pub single_vector: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            k: 10,
            n_bins: lengthbias::DEFAULT_N_BINS,
            n_permutations: lengthbias::DEFAULT_N_PERMUTATIONS,
            ci_level: lengthbias::DEFAULT_CI_LEVEL,
            single_vector: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_index: usize,
    pub length_min: u32,
    pub length_max: u32,
    pub model_mode: ModelMode,
    pub seed: u64,
    /// Least-squares slope of (observed − baseline mean) over bin index.
    pub slope: f64,
    /// Same slope statistic under the permutation null.
    pub slope_ci_low: f64,
    pub slope_ci_high: f64,
    pub top_bin_above_ci: bool,
    pub bins_outside_band: usize,
    pub report: BinReport,
}

impl SweepRow {
    pub fn slope_within_ci(&self) -> bool {
        self.slope >= self.slope_ci_low && self.slope <= self.slope_ci_high
    }
}

/// Least-squares slope of `y` against its index.
pub fn index_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (num, den) = y.iter().enumerate().fold((0.0, 0.0), |(num, den), (i, v)| {
        let dx = i as f64 - xm;
        (num + dx * (v - ym), den + dx * dx)
    });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_one(
    index: usize,
    cfg: &SynthConfig,
    mode: ModelMode,
    corpus: &EmbeddingStore,
    queries: &EmbeddingStore,
    qrels: &Qrels,
    opts: &SweepOptions,
    exec: Execution,
) -> Result<SweepRow> {
    let run = retrieve_with(queries, corpus, 0, exec)?;
    let harm = lengthbias::chunk_harm_with(&run, qrels, opts.k, exec)?;
    let binning = quantile_bins(&corpus.manifest().token_lengths(), opts.n_bins)?;
    let perm_seed = seed::derive_seed(cfg.seed, "sweep");
    let samples = harm_permutations(&harm, &binning, opts.n_permutations, perm_seed, exec)?;
    let report = samples.summarize(
        &binning,
        BinReportMeta {
            statistic: "mean_harm".into(),
            n_permutations: opts.n_permutations,
            ci_level: opts.ci_level,
            seed: perm_seed,
        },
    );
    let means = samples.baseline_means();
    let profile = |v: &[f64]| -> Vec<f64> { v.iter().zip(&means).map(|(a, m)| a - m).collect() };
    let slope = index_slope(&profile(&samples.observed));
    let mut null: Vec<f64> = samples.trials.iter().map(|t| index_slope(&profile(t))).collect();
    null.sort_by(f64::total_cmp);
    let tail = (1.0 - opts.ci_level) / 2.0;
    let top = report.bins.last().expect("n_bins >= 2");
    Ok(SweepRow {
        config_index: index,
        length_min: cfg.length_range.0,
        length_max: cfg.length_range.1,
        model_mode: mode,
        seed: cfg.seed,
        slope,
        slope_ci_low: quantile_sorted(&null, tail),
        slope_ci_high: quantile_sorted(&null, 1.0 - tail),
        top_bin_above_ci: top.observed > top.ci_high,
        bins_outside_band: report.bins.iter().filter(|b| b.outside_band()).count(),
        report,
    })
}

/// Generate → retrieve → harm → permutation report for every config, with
/// the multi-vector scorer and (optionally) the mean-pooled control.
pub fn bias_sweep(grid: &[SynthConfig], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    bias_sweep_with(grid, opts, Execution::default())
}

pub fn bias_sweep_with(grid: &[SynthConfig], opts: &SweepOptions, exec: Execution) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = par::try_map_indexed(exec, grid.len(), |i| -> Result<Vec<SweepRow>> {
        let cfg = &grid[i];
        let synth = generate_corpus(cfg)?;
        let mut rows = vec![sweep_one(
            i,
            cfg,
            ModelMode::MultiVector,
            &synth.corpus,
            &synth.queries,
            &synth.qrels,
            opts,
            exec,
        )?];
        if opts.single_vector {
            let corpus = mean_pool_store(&synth.corpus)?;
            let queries = mean_pool_store(&synth.queries)?;
            rows.push(sweep_one(
                i,
                cfg,
                ModelMode::SingleVector,
                &corpus,
                &queries,
                &synth.qrels,
                opts,
                exec,
            )?);
        }
        Ok(rows)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "config_index,length_min,length_max,model_mode,seed,slope,slope_ci_low,slope_ci_high,top_bin_above_ci,bins_outside_band"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.config_index,
            r.length_min,
            r.length_max,
            r.model_mode,
            r.seed,
            r.slope,
            r.slope_ci_low,
            r.slope_ci_high,
            r.top_bin_above_ci,
            r.bins_outside_band
        )?;
    }
    w.flush()
}
