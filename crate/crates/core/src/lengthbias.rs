//! Length-bias diagnostics.
//!
//! Three analyses over a full retrieval run:
//!
//! * [`fp_length_report`]: mean length of false positives vs relevant
//!   chunks, with queries grouped by the length of their relevant chunks.
//! * [`chunk_harm`] + [`harm_report`]: the nDCG@k each chunk costs the
//!   query set by being in the corpus, averaged per equal-count length bin
//!   and compared with a permutation baseline that shuffles harm values
//!   across chunks.
//! * [`error_count_report`]: how many false-positive occurrences land in each
//!   length bin, against a baseline that redraws each occurrence's chunk
//!   uniformly from the corpus.
//!
//! A chunk's harm is the summed nDCG change over queries when it is deleted
//! from the ranking (lower items move up one place). Only deletions inside
//! the top `k` can change nDCG@k, so the computation needs the first `k + 1`
//! entries of each list and nothing else.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use crate::embedstore::StoreManifest;
use crate::error::{Error, Result};
use crate::metrics::{dcg, ideal_dcg, Grades, Qrels};
use crate::par::{self, Execution};
use crate::report::{csv_field, csv_opt};
use crate::scoring::{RetrievalRun, ScoredList};
use crate::seed;

pub const DEFAULT_N_BINS: usize = 10;
pub const DEFAULT_N_QUERY_QUANTILES: usize = 10;
pub const DEFAULT_N_PERMUTATIONS: usize = 1000;
pub const DEFAULT_CI_LEVEL: f64 = 0.90;
pub const MIN_PERMUTATIONS: usize = 100;

/// Contiguous index ranges splitting `n` sorted items into `n_bins` groups
/// whose sizes differ by at most one.
fn equal_count_ranges(n: usize, n_bins: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_bins)
        .map(|b| (b * n / n_bins)..((b + 1) * n / n_bins))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRange {
    pub low: u32,
    pub high: u32,
    pub n_items: usize,
}

/// Equal-count bins over items sorted by (token length, id).
#[derive(Debug, Clone)]
pub struct QuantileBinning {
    bins: Vec<BinRange>,
    /// Binned ids in sorted order; bin `b` owns a contiguous slice.
    order: Vec<String>,
    labels: Vec<usize>,
    assignment: HashMap<String, usize>,
}

impl QuantileBinning {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[BinRange] {
        &self.bins
    }

    pub fn bin_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Number of binned items.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Binned ids in (length, id) order.
    pub fn items(&self) -> &[String] {
        &self.order
    }

    /// Bin label of each entry of [`Self::items`].
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `n_bins + 1` boundaries: each bin's smallest length, then the
    /// largest length of the last bin.
    pub fn edges(&self) -> Vec<u32> {
        let mut e: Vec<u32> = self.bins.iter().map(|b| b.low).collect();
        e.push(self.bins.last().map_or(0, |b| b.high));
        e
    }
}

/// Splits items into `n_bins` equal-count groups by token length; ties are
/// broken by id so the split is fully determined.
pub fn quantile_bins(lengths: &BTreeMap<String, u32>, n_bins: usize) -> Result<QuantileBinning> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig("n_bins must be at least 2".into()));
    }
    if lengths.len() < n_bins {
        return Err(Error::TooFewItems {
            needed: n_bins,
            got: lengths.len(),
        });
    }
    // BTreeMap iteration is id-ordered, and the sort is stable.
    let mut sorted: Vec<(&String, u32)> = lengths.iter().map(|(k, v)| (k, *v)).collect();
    sorted.sort_by_key(|(_, len)| *len);

    let mut bins = Vec::with_capacity(n_bins);
    let mut labels = vec![0; sorted.len()];
    let mut assignment = HashMap::with_capacity(sorted.len());
    for (b, range) in equal_count_ranges(sorted.len(), n_bins).into_iter().enumerate() {
        bins.push(BinRange {
            low: sorted[range.start].1,
            high: sorted[range.end - 1].1,
            n_items: range.len(),
        });
        for i in range {
            labels[i] = b;
            assignment.insert(sorted[i].0.clone(), b);
        }
    }
    Ok(QuantileBinning {
        bins,
        order: sorted.into_iter().map(|(id, _)| id.clone()).collect(),
        labels,
        assignment,
    })
}

/// Which retrieved items count as false positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpMode {
    /// Irrelevant items ranked above the best-ranked positive.
    #[default]
    AbovePositive,
    /// Irrelevant items inside the top `k`.
    TopK(usize),
}

impl fmt::Display for FpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FpMode::AbovePositive => write!(f, "above-positive"),
            FpMode::TopK(k) => write!(f, "topk:{k}"),
        }
    }
}

impl FromStr for FpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "above-positive" {
            return Ok(FpMode::AbovePositive);
        }
        match s.strip_prefix("topk:").map(str::parse::<usize>) {
            Some(Ok(k)) if k > 0 => Ok(FpMode::TopK(k)),
            _ => Err(Error::InvalidConfig(format!(
                "fp mode must be `above-positive` or `topk:<k>`, got {s:?}"
            ))),
        }
    }
}

/// 0-based position of the best-ranked positive.
fn best_positive_pos(list: &ScoredList, grades: &Grades) -> Option<usize> {
    (0..list.len()).find(|&i| grades.get(list.chunk_id(i)).is_some_and(|&g| g > 0))
}

fn false_positive_positions(list: &ScoredList, grades: &Grades, mode: FpMode) -> Result<Vec<usize>> {
    let is_rel = |i: usize| grades.get(list.chunk_id(i)).is_some_and(|&g| g > 0);
    let end = match mode {
        FpMode::AbovePositive => best_positive_pos(list, grades)
            .ok_or_else(|| Error::NoPositiveInRanking(list.query_id().to_string()))?,
        FpMode::TopK(k) => k.min(list.len()),
    };
    Ok((0..end).filter(|&i| !is_rel(i)).collect())
}

/// Irrelevant chunks ranked strictly above the best-ranked positive, in
/// rank order.
pub fn false_positives(list: &ScoredList, grades: &Grades) -> Result<Vec<String>> {
    Ok(false_positive_positions(list, grades, FpMode::AbovePositive)?
        .into_iter()
        .map(|i| list.chunk_id(i).to_string())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpQuantile {
    pub index: usize,
    pub n_queries: usize,
    /// Range of per-query mean relevant length covered by this quantile.
    pub query_length_low: f64,
    pub query_length_high: f64,
    /// `None` when the quantile's queries have no false positive.
    pub mean_fp_length: Option<f64>,
    pub mean_relevant_length: f64,
    pub n_fps: usize,
    pub n_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpLengthReport {
    pub fp_mode: String,
    pub quantiles: Vec<FpQuantile>,
    pub corpus_mean_length: f64,
    pub n_queries: usize,
    /// Queries left out: no judged positive in the corpus, or no positive
    /// in the ranking.
    pub skipped_queries: usize,
}

impl FpLengthReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "quantile_index,query_length_low,query_length_high,n_queries,mean_fp_length,mean_relevant_length,corpus_mean_length,n_fps,n_relevant"
        )?;
        for q in &self.quantiles {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                q.index,
                q.query_length_low,
                q.query_length_high,
                q.n_queries,
                csv_opt(q.mean_fp_length),
                q.mean_relevant_length,
                self.corpus_mean_length,
                q.n_fps,
                q.n_relevant
            )?;
        }
        w.flush()
    }
}

/// Mean false-positive length vs mean relevant length, with queries split
/// into `n_query_quantiles` equal-count groups by the mean token length of
/// their relevant chunks.
pub fn fp_length_report(
    run: &RetrievalRun,
    qrels: &Qrels,
    corpus: &StoreManifest,
    n_query_quantiles: usize,
    mode: FpMode,
) -> Result<FpLengthReport> {
    if n_query_quantiles < 1 {
        return Err(Error::InvalidConfig("need at least one query quantile".into()));
    }
    let lengths = corpus.token_lengths();
    let length_of = |id: &str| {
        lengths
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    };

    struct QueryStats {
        id: String,
        mean_rel: f64,
        rel_lengths: Vec<u32>,
        fp_lengths: Vec<u32>,
    }
    let mut stats = Vec::new();
    let mut skipped = 0;
    for list in run.lists() {
        let grades = qrels.grades(list.query_id());
        let rel_lengths: Vec<u32> = grades
            .iter()
            .filter(|(_, &g)| g > 0)
            .filter_map(|(c, _)| lengths.get(c).copied())
            .collect();
        if rel_lengths.is_empty() {
            skipped += 1;
            continue;
        }
        let fps = match false_positive_positions(list, grades, mode) {
            Ok(p) => p,
            Err(Error::NoPositiveInRanking(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let fp_lengths = fps
            .into_iter()
            .map(|i| length_of(list.chunk_id(i)))
            .collect::<Result<Vec<_>>>()?;
        let mean_rel = rel_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / rel_lengths.len() as f64;
        stats.push(QueryStats {
            id: list.query_id().to_string(),
            mean_rel,
            rel_lengths,
            fp_lengths,
        });
    }
    if skipped > 0 {
        log::warn!("fp-length: {skipped} queries skipped");
    }
    if stats.len() < n_query_quantiles {
        return Err(Error::TooFewItems {
            needed: n_query_quantiles,
            got: stats.len(),
        });
    }
    stats.sort_by(|a, b| a.mean_rel.total_cmp(&b.mean_rel).then_with(|| a.id.cmp(&b.id)));

    let mean = |v: &mut dyn Iterator<Item = u32>| {
        let (s, n) = v.fold((0u64, 0usize), |(s, n), l| (s + u64::from(l), n + 1));
        (n > 0).then(|| s as f64 / n as f64)
    };
    let quantiles = equal_count_ranges(stats.len(), n_query_quantiles)
        .into_iter()
        .enumerate()
        .map(|(index, range)| {
            let group = &stats[range];
            FpQuantile {
                index,
                n_queries: group.len(),
                query_length_low: group[0].mean_rel,
                query_length_high: group[group.len() - 1].mean_rel,
                mean_fp_length: mean(&mut group.iter().flat_map(|s| s.fp_lengths.iter().copied())),
                mean_relevant_length: mean(&mut group.iter().flat_map(|s| s.rel_lengths.iter().copied()))
                    .expect("every kept query has a relevant chunk"),
                n_fps: group.iter().map(|s| s.fp_lengths.len()).sum(),
                n_relevant: group.iter().map(|s| s.rel_lengths.len()).sum(),
            }
        })
        .collect();
    Ok(FpLengthReport {
        fp_mode: mode.to_string(),
        quantiles,
        corpus_mean_length: corpus.mean_token_length(),
        n_queries: stats.len(),
        skipped_queries: skipped,
    })
}

/// chunk id → summed nDCG@k change over queries caused by the chunk's
/// presence. Positive values mean the chunk hurts retrieval.
pub type HarmMap = BTreeMap<String, f64>;

/// Per-query `(chunk index, delta)` contributions from deleting each of the
/// top `k` entries.
fn query_harm_deltas(list: &ScoredList, grades: &Grades, k: usize) -> Vec<(u32, f64)> {
    let ideal = ideal_dcg(grades, k);
    if ideal == 0.0 {
        return Vec::new();
    }
    let depth = (k + 1).min(list.len());
    let top: Vec<u32> = (0..depth)
        .map(|i| grades.get(list.chunk_id(i)).copied().unwrap_or(0))
        .collect();
    let base = dcg(top.iter().copied(), k) / ideal;
    (0..k.min(list.len()))
        .map(|removed| {
            let edited = top
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != removed)
                .map(|(_, &g)| g);
            let delta = dcg(edited, k) / ideal - base;
            (list.entries()[removed].doc, delta)
        })
        .collect()
}

pub fn chunk_harm(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<HarmMap> {
    chunk_harm_with(run, qrels, k, Execution::default())
}

/// Leave-one-out harm of every chunk in the run, computed by editing the
/// top `k + 1` of each ranking. Chunks outside every top `k` get exactly 0.
pub fn chunk_harm_with(run: &RetrievalRun, qrels: &Qrels, k: usize, exec: Execution) -> Result<HarmMap> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let full = run.is_full();
    for list in run.lists() {
        if !full && list.len() <= k {
            return Err(Error::TruncatedRun(list.query_id().to_string()));
        }
    }
    let per_query = par::map_indexed(exec, run.len(), |qi| {
        let list = &run.lists()[qi];
        query_harm_deltas(list, qrels.grades(list.query_id()), k)
    });
    // Serial accumulation in run order keeps the sums independent of the
    // thread count.
    let ids = run.id_table();
    let mut harm = vec![0.0f64; ids.len()];
    for deltas in per_query {
        for (doc, d) in deltas {
            harm[doc as usize] += d;
        }
    }
    Ok(ids.ids().iter().cloned().zip(harm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub bin_index: usize,
    pub edge_low: u32,
    pub edge_high: u32,
    pub observed: f64,
    pub baseline_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_items: usize,
}

impl BinStat {
    pub fn outside_band(&self) -> bool {
        self.observed < self.ci_low || self.observed > self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReportMeta {
    pub statistic: String,
    pub n_permutations: usize,
    pub ci_level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub metadata: BinReportMeta,
    pub bins: Vec<BinStat>,
}

impl BinReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "bin_index,edge_low,edge_high,observed,baseline_mean,ci_low,ci_high,n_items"
        )?;
        for b in &self.bins {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                b.bin_index,
                b.edge_low,
                b.edge_high,
                b.observed,
                b.baseline_mean,
                b.ci_low,
                b.ci_high,
                b.n_items
            )?;
        }
        w.flush()
    }
}

/// Linear-interpolation quantile of sorted data (`p` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Observed per-bin statistic plus every permutation trial's values.
#[derive(Debug, Clone)]
pub struct PermutationSamples {
    pub observed: Vec<f64>,
    /// `trials[t][b]`: statistic of bin `b` in trial `t`.
    pub trials: Vec<Vec<f64>>,
}

impl PermutationSamples {
    pub fn baseline_means(&self) -> Vec<f64> {
        let n_bins = self.observed.len();
        let n = self.trials.len() as f64;
        (0..n_bins)
            .map(|b| self.trials.iter().map(|t| t[b]).sum::<f64>() / n)
            .collect()
    }

    /// Summarizes into a report. The interval is the empirical
    /// `(1 - level) / 2` and `1 - (1 - level) / 2` quantile pair; it is
    /// widened to include the baseline mean when a very skewed null puts
    /// the mean outside it.
    pub fn summarize(&self, binning: &QuantileBinning, meta: BinReportMeta) -> BinReport {
        let tail = (1.0 - meta.ci_level) / 2.0;
        let means = self.baseline_means();
        let bins = binning
            .bins()
            .iter()
            .enumerate()
            .map(|(b, range)| {
                let mut col: Vec<f64> = self.trials.iter().map(|t| t[b]).collect();
                col.sort_by(f64::total_cmp);
                let lo = quantile_sorted(&col, tail);
                let hi = quantile_sorted(&col, 1.0 - tail);
                BinStat {
                    bin_index: b,
                    edge_low: range.low,
                    edge_high: range.high,
                    observed: self.observed[b],
                    baseline_mean: means[b],
                    ci_low: lo.min(means[b]),
                    ci_high: hi.max(means[b]),
                    n_items: range.n_items,
                }
            })
            .collect();
        BinReport { metadata: meta, bins }
    }
}

fn check_permutation_args(n_permutations: usize, ci_level: f64) -> Result<()> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidConfig(format!(
            "n_permutations must be at least {MIN_PERMUTATIONS}"
        )));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::InvalidConfig("ci_level must lie in (0, 1)".into()));
    }
    Ok(())
}

fn bin_means(values: &[f64], labels: &[usize], sizes: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0; sizes.len()];
    for (v, &b) in values.iter().zip(labels) {
        sums[b] += v;
    }
    sums.iter().zip(sizes).map(|(s, &n)| s / n as f64).collect()
}

/// Observed per-bin mean harm and the permutation null, which shuffles the
/// harm multiset across all binned chunks. Binned chunks missing from
/// `harm` count as 0.
pub fn harm_permutations(
    harm: &HarmMap,
    binning: &QuantileBinning,
    n_permutations: usize,
    seed: u64,
    exec: Execution,
) -> Result<PermutationSamples> {
    if let Some(id) = harm.keys().find(|id| binning.bin_of(id).is_none()) {
        return Err(Error::UnbinnedChunk(id.clone()));
    }
    let values: Vec<f64> = binning
        .items()
        .iter()
        .map(|id| harm.get(id).copied().unwrap_or(0.0))
        .collect();
    let labels = binning.labels();
    let sizes: Vec<usize> = binning.bins().iter().map(|b| b.n_items).collect();
    let base = seed::derive_seed(seed, "harm-permutation");
    let trials = par::map_indexed(exec, n_permutations, |t| {
        let mut rng = seed::trial_rng(base, t);
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut rng);
        bin_means(&shuffled, labels, &sizes)
    });
    Ok(PermutationSamples {
        observed: bin_means(&values, labels, &sizes),
        trials,
    })
}

pub fn harm_report(
    harm: &HarmMap,
    binning: &QuantileBinning,
    n_permutations: usize,
    ci_level: f64,
    seed: u64,
) -> Result<BinReport> {
    harm_report_with(
        harm,
        binning,
        n_permutations,
        ci_level,
        seed,
        Execution::default(),
    )
}

pub fn harm_report_with(
    harm: &HarmMap,
    binning: &QuantileBinning,
    n_permutations: usize,
    ci_level: f64,
    seed: u64,
    exec: Execution,
) -> Result<BinReport> {
    check_permutation_args(n_permutations, ci_level)?;
    let samples = harm_permutations(harm, binning, n_permutations, seed, exec)?;
    Ok(samples.summarize(
        binning,
        BinReportMeta {
            statistic: "mean_harm".into(),
            n_permutations,
            ci_level,
            seed,
        },
    ))
}

/// Bin of every false-positive occurrence (one per query and chunk).
fn false_positive_bins(run: &RetrievalRun, qrels: &Qrels, binning: &QuantileBinning) -> Result<Vec<usize>> {
    let mut bins = Vec::new();
    let mut skipped = 0;
    for list in run.lists() {
        let grades = qrels.grades(list.query_id());
        if !grades.values().any(|&g| g > 0) {
            continue;
        }
        let fps = match false_positive_positions(list, grades, FpMode::AbovePositive) {
            Ok(p) => p,
            Err(Error::NoPositiveInRanking(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for i in fps {
            let id = list.chunk_id(i);
            bins.push(
                binning
                    .bin_of(id)
                    .ok_or_else(|| Error::UnbinnedChunk(id.to_string()))?,
            );
        }
    }
    if skipped > 0 {
        log::warn!("error counts: {skipped} queries have no positive in their ranking");
    }
    Ok(bins)
}

pub fn error_count_report(
    run: &RetrievalRun,
    qrels: &Qrels,
    binning: &QuantileBinning,
    n_permutations: usize,
    ci_level: f64,
    seed: u64,
) -> Result<BinReport> {
    error_count_report_with(
        run,
        qrels,
        binning,
        n_permutations,
        ci_level,
        seed,
        Execution::default(),
    )
}

/// Per-bin counts of false-positive occurrences against a no-bias baseline
/// that assigns every occurrence to a uniformly drawn corpus chunk.
pub fn error_count_report_with(
    run: &RetrievalRun,
    qrels: &Qrels,
    binning: &QuantileBinning,
    n_permutations: usize,
    ci_level: f64,
    seed: u64,
    exec: Execution,
) -> Result<BinReport> {
    check_permutation_args(n_permutations, ci_level)?;
    let fp_bins = false_positive_bins(run, qrels, binning)?;
    let n_bins = binning.n_bins();
    let mut observed = vec![0.0; n_bins];
    for &b in &fp_bins {
        observed[b] += 1.0;
    }
    let labels = binning.labels();
    let base = seed::derive_seed(seed, "error-count-resample");
    let trials = par::map_indexed(exec, n_permutations, |t| {
        let mut rng = seed::trial_rng(base, t);
        let mut counts = vec![0.0; n_bins];
        for _ in 0..fp_bins.len() {
            counts[labels[rng.random_range(0..labels.len())]] += 1.0;
        }
        counts
    });
    Ok(PermutationSamples { observed, trials }.summarize(
        binning,
        BinReportMeta {
            statistic: "false_positive_count".into(),
            n_permutations,
            ci_level,
            seed,
        },
    ))
}

/// Writes a harm map as `chunk_id,harm` rows.
pub fn write_harm_csv<W: Write>(harm: &HarmMap, mut w: W) -> std::io::Result<()> {
    writeln!(w, "chunk_id,harm")?;
    for (c, h) in harm {
        writeln!(w, "{},{}", csv_field(c), h)?;
    }
    w.flush()
}
