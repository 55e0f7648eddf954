//! Sorted document-token similarity curves.
//!
//! For a (query, chunk) pair every query token's similarities against the
//! chunk tokens are sorted in descending order and resampled onto a fixed
//! grid over the fraction of document tokens (linear interpolation), then
//! averaged over query tokens. Curves of many pairs are averaged pointwise.
//! Position 0 of a pair curve is the mean per-token maximum, i.e. the MaxSim
//! score divided by the number of query rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::embedstore::{EmbeddingStore, Vectors};
use crate::error::{Error, Result};
use crate::metrics::{Grades, Qrels};
use crate::par::{self, Execution};
use crate::report::csv_field;
use crate::scoring::{score_matrix, RetrievalRun, ScoredList};

pub const DEFAULT_CUTOFF: usize = 10;
pub const DEFAULT_GRID_SIZE: usize = 100;
pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Positive,
    Top1,
    BelowPositive,
    Worst,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Positive, Role::Top1, Role::BelowPositive, Role::Worst];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Positive => "positive",
            Role::Top1 => "top1",
            Role::BelowPositive => "below_positive",
            Role::Worst => "worst",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Best positive ranked below the cutoff.
    Failed,
    /// Best positive ranked at or above the cutoff.
    Success,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "failed" => Ok(Mode::Failed),
            "success" => Ok(Mode::Success),
            _ => Err(Error::InvalidConfig(format!(
                "mode must be failed or success, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Failed => "failed",
            Mode::Success => "success",
        })
    }
}

/// Fractional grid `[0, 1/(P-1), ..., 1]`.
pub fn fraction_grid(grid_size: usize) -> Vec<f64> {
    let last = (grid_size - 1) as f64;
    (0..grid_size).map(|g| g as f64 / last).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub n_queries: usize,
    pub n_query_tokens: usize,
}

/// Running pointwise sum of curves. The result depends only on the order
/// curves are added, never on how the work was scheduled.
#[derive(Debug, Clone)]
pub struct CurveAccumulator {
    sums: Vec<f64>,
    n_curves: usize,
    n_query_tokens: usize,
}

impl CurveAccumulator {
    pub fn new(grid_size: usize) -> Self {
        CurveAccumulator {
            sums: vec![0.0; grid_size],
            n_curves: 0,
            n_query_tokens: 0,
        }
    }

    pub fn add(&mut self, curve: &SimCurve) {
        // Weighted by the curve's query count so already-aggregated curves
        // merge exactly like their members.
        let w = curve.n_queries.max(1);
        for (s, v) in self.sums.iter_mut().zip(&curve.values) {
            *s += v * w as f64;
        }
        self.n_curves += w;
        self.n_query_tokens += curve.n_query_tokens;
    }

    pub fn n_curves(&self) -> usize {
        self.n_curves
    }

    pub fn finish(&self) -> Option<SimCurve> {
        if self.n_curves == 0 {
            return None;
        }
        let n = self.n_curves as f64;
        Some(SimCurve {
            grid: fraction_grid(self.sums.len()),
            values: self.sums.iter().map(|s| s / n).collect(),
            n_queries: self.n_curves,
            n_query_tokens: self.n_query_tokens,
        })
    }
}

/// Resamples a descending sequence onto the fraction grid. Position `j` of
/// `m` maps to fraction `j / (m - 1)`; one element gives a constant curve.
fn resample_descending(sorted: &[f64], grid: &[f64], out: &mut [f64]) {
    let m = sorted.len();
    if m == 1 {
        out.iter_mut().for_each(|o| *o += sorted[0]);
        return;
    }
    let last = (m - 1) as f64;
    for (o, &f) in out.iter_mut().zip(grid) {
        let x = f * last;
        let j = (x.floor() as usize).min(m - 1);
        let v = if j == m - 1 {
            sorted[j]
        } else {
            let (a, b) = (sorted[j], sorted[j + 1]);
            // Clamping keeps rounding from breaking monotonicity.
            (a + (x - j as f64) * (b - a)).clamp(b, a)
        };
        *o += v;
    }
}

/// Mean sorted-similarity curve of one (query, chunk) pair.
pub fn token_similarity_curve(query: Vectors<'_>, chunk: Vectors<'_>, grid_size: usize) -> Result<SimCurve> {
    if grid_size < 2 {
        return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
    }
    let mat = score_matrix(query, chunk)?;
    let grid = fraction_grid(grid_size);
    let mut values = vec![0.0; grid_size];
    let mut row = Vec::with_capacity(mat.n_cols());
    for r in mat.rows() {
        row.clear();
        row.extend_from_slice(r);
        row.sort_unstable_by(|a, b| b.total_cmp(a));
        resample_descending(&row, &grid, &mut values);
    }
    let n = mat.n_rows() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(SimCurve {
        grid,
        values,
        n_queries: 1,
        n_query_tokens: mat.n_rows(),
    })
}

/// Pointwise mean of the pair curves of `entries`.
pub fn aggregate_curves(entries: &[(Vectors<'_>, Vectors<'_>)], grid_size: usize) -> Result<SimCurve> {
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = CurveAccumulator::new(grid_size);
    for (q, c) in entries {
        acc.add(&token_similarity_curve(*q, *c, grid_size)?);
    }
    Ok(acc.finish().expect("non-empty"))
}

fn best_positive_rank(list: &ScoredList, grades: &Grades) -> Option<usize> {
    (0..list.len())
        .find(|&i| grades.get(list.chunk_id(i)).is_some_and(|&g| g > 0))
        .map(|i| i + 1)
}

/// Queries whose best-ranked positive sits below `cutoff`. Queries without
/// any positive judgment are left out; so are queries whose positives are
/// all missing from the ranking.
pub fn select_failed_queries(run: &RetrievalRun, qrels: &Qrels, cutoff: usize) -> Vec<String> {
    select_queries(run, qrels, Mode::Failed, cutoff)
}

pub fn select_queries(run: &RetrievalRun, qrels: &Qrels, mode: Mode, cutoff: usize) -> Vec<String> {
    run.lists()
        .iter()
        .filter(|l| qrels.has_positive(l.query_id()))
        .filter(|l| match best_positive_rank(l, qrels.grades(l.query_id())) {
            Some(r) => match mode {
                Mode::Failed => r > cutoff,
                Mode::Success => r <= cutoff,
            },
            None => false,
        })
        .map(|l| l.query_id().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub query_id: String,
    pub positive: String,
    pub positive_rank: usize,
    pub top1_negative: String,
    pub below_positive_negative: String,
    pub worst_negative: String,
}

impl Comparison {
    pub fn chunk(&self, role: Role) -> &str {
        match role {
            Role::Positive => &self.positive,
            Role::Top1 => &self.top1_negative,
            Role::BelowPositive => &self.below_positive_negative,
            Role::Worst => &self.worst_negative,
        }
    }
}

/// The positive and the three reference negatives of one query: the
/// highest-ranked irrelevant item, the first irrelevant item below the
/// positive, and the last irrelevant item of the ranking.
pub fn comparison_set(run: &RetrievalRun, qrels: &Qrels, query_id: &str) -> Result<Comparison> {
    let list = run
        .get(query_id)
        .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
    let grades = qrels.grades(query_id);
    let is_rel = |i: usize| grades.get(list.chunk_id(i)).is_some_and(|&g| g > 0);
    let pos = (0..list.len())
        .find(|&i| is_rel(i))
        .ok_or_else(|| Error::NoPositive(query_id.to_string()))?;
    let below = (pos + 1..list.len())
        .find(|&i| !is_rel(i))
        .ok_or_else(|| Error::NoNegativeBelowPositive(query_id.to_string()))?;
    let top1 = (0..list.len()).find(|&i| !is_rel(i)).expect("below exists");
    let worst = (0..list.len()).rev().find(|&i| !is_rel(i)).expect("below exists");
    Ok(Comparison {
        query_id: query_id.to_string(),
        positive: list.chunk_id(pos).to_string(),
        positive_rank: pos + 1,
        top1_negative: list.chunk_id(top1).to_string(),
        below_positive_negative: list.chunk_id(below).to_string(),
        worst_negative: list.chunk_id(worst).to_string(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimDistReport {
    pub mode: Mode,
    pub cutoff: usize,
    pub grid_size: usize,
    pub axis: &'static str,
    pub aggregation: &'static str,
    pub n_queries: usize,
    /// Qualifying queries dropped because no negative ranks below the positive.
    pub skipped_queries: usize,
    /// dataset tag → role → curve; includes the `pooled` entry.
    pub curves: BTreeMap<String, BTreeMap<Role, SimCurve>>,
}

impl SimDistReport {
    pub fn pooled(&self, role: Role) -> Option<&SimCurve> {
        self.curves.get(POOLED)?.get(&role)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dataset,role,fraction,value,n_queries")?;
        for (ds, roles) in &self.curves {
            for (role, curve) in roles {
                for (f, v) in curve.grid.iter().zip(&curve.values) {
                    writeln!(w, "{},{},{},{},{}", csv_field(ds), role, f, v, curve.n_queries)?;
                }
            }
        }
        w.flush()
    }
}

pub fn simdist_report(
    run: &RetrievalRun,
    qrels: &Qrels,
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    mode: Mode,
    cutoff: usize,
    grid_size: usize,
) -> Result<SimDistReport> {
    simdist_report_with(
        run,
        qrels,
        queries,
        corpus,
        mode,
        cutoff,
        grid_size,
        Execution::default(),
    )
}

/// Four role curves (positive, top-1, below-positive and worst negatives)
/// per query dataset tag, plus pooled over all selected queries.
#[allow(clippy::too_many_arguments)]
pub fn simdist_report_with(
    run: &RetrievalRun,
    qrels: &Qrels,
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    mode: Mode,
    cutoff: usize,
    grid_size: usize,
    exec: Execution,
) -> Result<SimDistReport> {
    if grid_size < 2 {
        return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
    }
    if !run.is_full() {
        let first = run.lists().first().map_or("", |l| l.query_id());
        return Err(Error::TruncatedRun(first.to_string()));
    }
    let selected = select_queries(run, qrels, mode, cutoff);
    let mut comparisons = Vec::with_capacity(selected.len());
    let mut skipped = 0;
    for q in &selected {
        match comparison_set(run, qrels, q) {
            Ok(c) => comparisons.push(c),
            Err(Error::NoNegativeBelowPositive(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if comparisons.is_empty() {
        return Err(Error::NoQualifyingQueries);
    }

    let per_query = par::try_map_indexed(exec, comparisons.len(), |i| -> Result<_> {
        let cmp = &comparisons[i];
        let q = queries.get_by_id(&cmp.query_id)?;
        let mut curves = Vec::with_capacity(4);
        for role in Role::ALL {
            let c = corpus.get_by_id(cmp.chunk(role))?;
            curves.push(token_similarity_curve(q.vectors, c.vectors, grid_size)?);
        }
        Ok((q.dataset().to_string(), curves))
    })?;

    let fresh = || -> Vec<CurveAccumulator> {
        Role::ALL
            .iter()
            .map(|_| CurveAccumulator::new(grid_size))
            .collect()
    };
    let mut by_dataset: BTreeMap<String, Vec<CurveAccumulator>> = BTreeMap::new();
    let mut pooled = fresh();
    for (ds, curves) in &per_query {
        let acc = by_dataset.entry(ds.clone()).or_insert_with(fresh);
        for (r, c) in curves.iter().enumerate() {
            acc[r].add(c);
            pooled[r].add(c);
        }
    }
    let finish = |accs: &[CurveAccumulator]| -> BTreeMap<Role, SimCurve> {
        Role::ALL
            .iter()
            .zip(accs)
            .map(|(r, a)| (*r, a.finish().expect("non-empty")))
            .collect()
    };
    let mut curves: BTreeMap<String, BTreeMap<Role, SimCurve>> =
        by_dataset.iter().map(|(ds, a)| (ds.clone(), finish(a))).collect();
    curves.insert(POOLED.to_string(), finish(&pooled));

    Ok(SimDistReport {
        mode,
        cutoff,
        grid_size,
        axis: "fraction_of_document_tokens",
        aggregation: "tokens_then_queries",
        n_queries: comparisons.len(),
        skipped_queries: skipped,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{Entry, IdTable};
    use std::sync::Arc;

    #[test]
    fn constant_similarity_gives_constant_curve() {
        let q = [1.0f32, 0.0, 0.0, 1.0];
        let c = [0.5f32, 0.5, 0.5, 0.5, 0.5, 0.5];
        let curve = token_similarity_curve(Vectors::new(&q, 2), Vectors::new(&c, 2), 7).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_token_interpolation() {
        let q = [1.0f32, 0.0];
        let c = [0.0f32, 1.0, 1.0, 0.0];
        let curve = token_similarity_curve(Vectors::new(&q, 2), Vectors::new(&c, 2), 3).unwrap();
        assert_eq!(curve.values, vec![1.0, 0.5, 0.0]);
        assert_eq!(curve.grid, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn single_token_chunk_is_flat() {
        let q = [0.6f32, 0.8];
        let c = [1.0f32, 0.0];
        let curve = token_similarity_curve(Vectors::new(&q, 2), Vectors::new(&c, 2), 4).unwrap();
        assert!(curve.values.iter().all(|&v| (v - 0.6).abs() < 1e-7));
    }

    #[test]
    fn aggregation_is_mean() {
        let q = [1.0f32];
        let zero = [0.0f32];
        let one = [1.0f32];
        let entries = [
            (Vectors::new(&q, 1), Vectors::new(&zero, 1)),
            (Vectors::new(&q, 1), Vectors::new(&one, 1)),
        ];
        let curve = aggregate_curves(&entries, 5).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.5));
        assert_eq!(curve.n_queries, 2);
        assert!(matches!(aggregate_curves(&[], 5), Err(Error::EmptyInput)));
    }

    fn run_of(order: &[&str]) -> RetrievalRun {
        let table = Arc::new(IdTable::from_ids(order.iter().map(|s| s.to_string()).collect()));
        let entries = (0..order.len())
            .map(|i| Entry {
                doc: i as u32,
                score: -(i as f64),
            })
            .collect();
        RetrievalRun::new(
            0,
            table.clone(),
            vec![ScoredList::from_ranked("q", table, entries)],
        )
        .unwrap()
    }

    #[test]
    fn failure_boundary() {
        let mut order: Vec<String> = (1..=20).map(|i| format!("n{i:02}")).collect();
        let mut qrels = Qrels::new();
        qrels.insert("q", "p", 1);
        order.insert(9, "p".into());
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        assert!(select_failed_queries(&run_of(&refs), &qrels, 10).is_empty());
        order.remove(9);
        order.insert(10, "p".into());
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        assert_eq!(select_failed_queries(&run_of(&refs), &qrels, 10), ["q"]);
    }

    #[test]
    fn comparison_picks() {
        let mut order: Vec<String> = (1..=10).map(|i| format!("n{i:02}")).collect();
        order.push("p".into());
        order.extend((12..=30).map(|i| format!("n{i:02}")));
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        let mut qrels = Qrels::new();
        qrels.insert("q", "p", 1);
        let c = comparison_set(&run_of(&refs), &qrels, "q").unwrap();
        assert_eq!(c.positive, "p");
        assert_eq!(c.positive_rank, 11);
        assert_eq!(c.top1_negative, "n01");
        assert_eq!(c.below_positive_negative, "n12");
        assert_eq!(c.worst_negative, "n30");
    }

    #[test]
    fn positive_last_has_no_negative_below() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "p", 1);
        assert!(matches!(
            comparison_set(&run_of(&["a", "b", "p"]), &qrels, "q"),
            Err(Error::NoNegativeBelowPositive(_))
        ));
        let none = Qrels::new();
        assert!(matches!(
            comparison_set(&run_of(&["a", "p"]), &none, "q"),
            Err(Error::NoPositive(_))
        ));
    }
}
