//! Relevance judgments and nDCG@k.
//!
//! Gain is linear in the grade (`grade / log2(rank + 1)`) and the ideal DCG
//! comes from the query's own judgments, including judged items that the
//! run never retrieved.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::csv_field;
use crate::scoring::{RetrievalRun, ScoredList};

pub type Grades = BTreeMap<String, u32>;

/// query id → {chunk id → grade}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    queries: BTreeMap<String, Grades>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, chunk_id: impl Into<String>, grade: u32) {
        self.queries
            .entry(query_id.into())
            .or_default()
            .insert(chunk_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&Grades> {
        self.queries.get(query_id)
    }

    /// Judgments for `query_id`, empty when unjudged.
    pub fn grades(&self, query_id: &str) -> &Grades {
        static EMPTY: Grades = BTreeMap::new();
        self.queries.get(query_id).unwrap_or(&EMPTY)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grades)> {
        self.queries.iter().map(|(q, g)| (q.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn has_positive(&self, query_id: &str) -> bool {
        self.grades(query_id).values().any(|&g| g > 0)
    }

    pub fn is_relevant(&self, query_id: &str, chunk_id: &str) -> bool {
        self.grades(query_id).get(chunk_id).is_some_and(|&g| g > 0)
    }

    /// Reads TREC qrels: `query_id iteration chunk_id grade`.
    pub fn read_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut qrels = Qrels::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |reason: &str| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: reason.to_string(),
            };
            if fields.len() != 4 {
                return Err(err("expected 4 whitespace-separated fields"));
            }
            let grade: u32 = fields[3]
                .parse()
                .map_err(|_| err("grade must be a non-negative integer"))?;
            qrels.insert(fields[0], fields[2], grade);
        }
        Ok(qrels)
    }

    pub fn write_trec<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (q, grades) in &self.queries {
            for (c, g) in grades {
                writeln!(w, "{q} 0 {c} {g}")?;
            }
        }
        w.flush()
    }
}

/// DCG over the first `k` grades of `grades`, accumulated in rank order.
pub fn dcg(grades: impl IntoIterator<Item = u32>, k: usize) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| f64::from(g) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the ideal ordering of `grades` at cutoff `k`.
pub fn ideal_dcg(grades: &Grades, k: usize) -> f64 {
    let mut g: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    g.sort_unstable_by(|a, b| b.cmp(a));
    dcg(g, k)
}

/// nDCG@k of `list` against one query's grades; 0 when it has no positive.
pub fn ndcg_at_k(list: &ScoredList, grades: &Grades, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let ideal = ideal_dcg(grades, k);
    if ideal == 0.0 {
        return 0.0;
    }
    let ranked = (0..list.len()).map(|i| grades.get(list.chunk_id(i)).copied().unwrap_or(0));
    dcg(ranked, k) / ideal
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub k: usize,
    /// (query id, nDCG@k) in run order.
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    /// Run queries without any positive judgment.
    pub skipped: usize,
}

impl MetricReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "query_id,ndcg")?;
        for (q, v) in &self.per_query {
            writeln!(w, "{},{}", csv_field(q), v)?;
        }
        w.flush()
    }
}

/// Per-query nDCG@k and its mean over queries that have positives.
pub fn evaluate_run(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    let mut per_query = Vec::new();
    let mut skipped = 0;
    for list in run.lists() {
        if !qrels.has_positive(list.query_id()) {
            skipped += 1;
            continue;
        }
        per_query.push((
            list.query_id().to_string(),
            ndcg_at_k(list, qrels.grades(list.query_id()), k),
        ));
    }
    if per_query.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if skipped > 0 {
        log::warn!("{skipped} run queries have no positive judgment and were skipped");
    }
    let missing = qrels.iter().filter(|(q, _)| run.get(q).is_none()).count();
    if missing > 0 {
        log::warn!("{missing} judged queries are absent from the run");
    }
    let mean = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
    Ok(MetricReport {
        k,
        per_query,
        mean,
        skipped,
    })
}
