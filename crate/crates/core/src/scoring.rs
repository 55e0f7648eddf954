//! Exact MaxSim / inner-product scoring and exhaustive retrieval.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::embedstore::{EmbeddingStore, Vectors};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Inner product of two rows, accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_dims(query: Vectors<'_>, chunk: Vectors<'_>) -> Result<()> {
    if query.dim() != chunk.dim() {
        return Err(Error::DimMismatch {
            expected: query.dim(),
            found: chunk.dim(),
        });
    }
    Ok(())
}

#[inline]
fn row_max(q: &[f32], chunk: Vectors<'_>) -> f64 {
    chunk.rows().map(|c| dot(q, c)).fold(f64::NEG_INFINITY, f64::max)
}

/// Late-interaction score: for every query row, the best inner product
/// against any chunk row, summed over query rows. With one row on each side
/// this is the plain inner product.
pub fn maxsim(query: Vectors<'_>, chunk: Vectors<'_>) -> Result<f64> {
    check_dims(query, chunk)?;
    Ok(maxsim_unchecked(query, chunk))
}

fn maxsim_unchecked(query: Vectors<'_>, chunk: Vectors<'_>) -> f64 {
    query.rows().map(|q| row_max(q, chunk)).sum()
}

/// Dense `[n_query_rows × n_chunk_rows]` matrix of inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_cols)
    }

    /// Row-wise max, summed. Equals [`maxsim`] on the same inputs exactly.
    pub fn maxsim(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }
}

pub fn score_matrix(query: Vectors<'_>, chunk: Vectors<'_>) -> Result<ScoreMatrix> {
    check_dims(query, chunk)?;
    let mut data = Vec::with_capacity(query.n_rows() * chunk.n_rows());
    for q in query.rows() {
        data.extend(chunk.rows().map(|c| dot(q, c)));
    }
    Ok(ScoreMatrix {
        n_rows: query.n_rows(),
        n_cols: chunk.n_rows(),
        data,
    })
}

/// Interned chunk ids shared by every list of a run.
#[derive(Debug, Default)]
pub struct IdTable {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdTable {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        IdTable { ids, index }
    }

    fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, doc: u32) -> &str {
        &self.ids[doc as usize]
    }

    pub fn lookup(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub doc: u32,
    pub score: f64,
}

/// One query's ranking, best first. Ordered by score descending, ties
/// broken by chunk id ascending.
#[derive(Debug, Clone)]
pub struct ScoredList {
    query_id: String,
    ids: Arc<IdTable>,
    entries: Vec<Entry>,
}

impl ScoredList {
    /// Sorts `entries` into canonical order.
    pub fn new(query_id: impl Into<String>, ids: Arc<IdTable>, mut entries: Vec<Entry>) -> Self {
        entries.sort_by(|a, b| canonical_cmp(&ids, a, b));
        ScoredList {
            query_id: query_id.into(),
            ids,
            entries,
        }
    }

    /// Keeps `entries` in the given order.
    pub fn from_ranked(query_id: impl Into<String>, ids: Arc<IdTable>, entries: Vec<Entry>) -> Self {
        ScoredList {
            query_id: query_id.into(),
            ids,
            entries,
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn id_table(&self) -> &Arc<IdTable> {
        &self.ids
    }

    /// Chunk id at 0-based position `pos`.
    pub fn chunk_id(&self, pos: usize) -> &str {
        self.ids.id(self.entries[pos].doc)
    }

    /// `(chunk_id, score)` in rank order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.entries.iter().map(|e| (self.ids.id(e.doc), e.score))
    }

    /// 1-based rank of `chunk_id`, if present.
    pub fn rank_of(&self, chunk_id: &str) -> Option<usize> {
        let doc = self.ids.lookup(chunk_id)?;
        self.entries.iter().position(|e| e.doc == doc).map(|p| p + 1)
    }
}

fn canonical_cmp(ids: &IdTable, a: &Entry, b: &Entry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| ids.id(a.doc).cmp(ids.id(b.doc)))
}

/// Rankings for every query of a query set.
#[derive(Debug, Clone)]
pub struct RetrievalRun {
    /// Cutoff used at retrieval time; 0 means full rankings.
    pub k: usize,
    ids: Arc<IdTable>,
    lists: Vec<ScoredList>,
    by_query: HashMap<String, usize>,
}

impl RetrievalRun {
    pub fn new(k: usize, ids: Arc<IdTable>, lists: Vec<ScoredList>) -> Result<Self> {
        let mut by_query = HashMap::with_capacity(lists.len());
        for (i, l) in lists.iter().enumerate() {
            if by_query.insert(l.query_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(l.query_id.clone()));
            }
        }
        Ok(RetrievalRun {
            k,
            ids,
            lists,
            by_query,
        })
    }

    pub fn lists(&self) -> &[ScoredList] {
        &self.lists
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn id_table(&self) -> &Arc<IdTable> {
        &self.ids
    }

    pub fn get(&self, query_id: &str) -> Option<&ScoredList> {
        self.by_query.get(query_id).map(|&i| &self.lists[i])
    }

    /// True when every list ranks every known chunk.
    pub fn is_full(&self) -> bool {
        self.lists.iter().all(|l| l.len() == self.ids.len())
    }

    /// Writes TREC run lines: `query_id Q0 chunk_id rank score tag`.
    pub fn write_trec<W: Write>(&self, mut w: W, tag: &str) -> std::io::Result<()> {
        for list in &self.lists {
            for (rank, (chunk, score)) in list.iter().enumerate() {
                writeln!(
                    w,
                    "{} Q0 {} {} {:.6} {}",
                    list.query_id,
                    chunk,
                    rank + 1,
                    score,
                    tag
                )?;
            }
        }
        w.flush()
    }

    pub fn write_trec_file(&self, path: impl AsRef<Path>, tag: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trec(BufWriter::new(file), tag)
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a TREC run file. Queries keep their first-appearance order and
    /// entries are ordered by the file's rank column.
    pub fn read_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = IdTable::default();
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(usize, Entry)>> = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: &str| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(parse_err("expected 6 whitespace-separated fields"));
            }
            let rank: usize = fields[3].parse().map_err(|_| parse_err("bad rank"))?;
            let score: f64 = fields[4].parse().map_err(|_| parse_err("bad score"))?;
            if !score.is_finite() {
                return Err(parse_err("non-finite score"));
            }
            let doc = table.intern(fields[2]);
            let qid = fields[0];
            if !rows.contains_key(qid) {
                order.push(qid.to_string());
            }
            rows.entry(qid.to_string())
                .or_default()
                .push((rank, Entry { doc, score }));
        }
        let ids = Arc::new(table);
        let lists = order
            .into_iter()
            .map(|qid| {
                let mut r = rows.remove(&qid).unwrap_or_default();
                r.sort_by_key(|(rank, _)| *rank);
                ScoredList::from_ranked(qid, ids.clone(), r.into_iter().map(|(_, e)| e).collect())
            })
            .collect::<Vec<_>>();
        let mut run = RetrievalRun::new(0, ids, lists)?;
        if !run.is_full() {
            run.k = run.lists.iter().map(ScoredList::len).max().unwrap_or(0);
        }
        Ok(run)
    }
}

/// 1-based rank of `chunk_id` in `query_id`'s list, or `None` when a
/// truncated list omits it.
pub fn rank_of(run: &RetrievalRun, query_id: &str, chunk_id: &str) -> Result<Option<usize>> {
    let list = run
        .get(query_id)
        .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?;
    Ok(list.rank_of(chunk_id))
}

/// Exhaustive retrieval of every query against every corpus item; keeps
/// the top `k` per query, or the full ranking when `k == 0`.
pub fn retrieve(queries: &EmbeddingStore, corpus: &EmbeddingStore, k: usize) -> Result<RetrievalRun> {
    retrieve_with(queries, corpus, k, Execution::default())
}

pub fn retrieve_with(
    queries: &EmbeddingStore,
    corpus: &EmbeddingStore,
    k: usize,
    exec: Execution,
) -> Result<RetrievalRun> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if queries.dim() != corpus.dim() {
        return Err(Error::DimMismatch {
            expected: queries.dim(),
            found: corpus.dim(),
        });
    }
    let chunks = corpus.items()?;
    let query_items = queries.items()?;
    let ids = Arc::new(IdTable::from_ids(
        chunks.iter().map(|c| c.id().to_string()).collect(),
    ));

    let lists = par::map_indexed(exec, query_items.len(), |qi| {
        let q = query_items[qi];
        let mut entries: Vec<Entry> = par::map_indexed(exec, chunks.len(), |ci| Entry {
            doc: ci as u32,
            score: maxsim_unchecked(q.vectors, chunks[ci].vectors),
        });
        if k > 0 && k < entries.len() {
            entries.select_nth_unstable_by(k - 1, |a, b| canonical_cmp(&ids, a, b));
            entries.truncate(k);
        }
        ScoredList::new(q.id(), ids.clone(), entries)
    });
    RetrievalRun::new(k, ids, lists)
}
