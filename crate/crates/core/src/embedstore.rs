//! Embedding dump format.
//!
//! A store is two files: `manifest.json` describing every item, and
//! `vectors.bin`, a raw little-endian `f32` blob holding each item's rows
//! back to back (row-major, no per-item header). The manifest is validated
//! eagerly on open; vector contents are checked for finiteness when an item
//! is first touched, or all at once by [`EmbeddingStore::verify`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.bin";

/// Tolerance on row norms for stores declared `normalized`.
pub const NORM_TOLERANCE: f64 = 1e-4;

const F32_BYTES: u64 = 4;

/// Borrowed row-major matrix `[n_rows × dim]`.
#[derive(Debug, Clone, Copy)]
pub struct Vectors<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> Vectors<'a> {
    /// Panics if `dim` is zero or does not divide `data.len()`.
    pub fn new(data: &'a [f32], dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "bad matrix shape");
        Vectors { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }
}

/// One text item's contextualized vectors plus its tokenizer length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub id: String,
    pub dataset: String,
    /// Tokenizer token count of the source text; may differ from the row count.
    pub token_length: u32,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        token_length: u32,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: &str| Error::InvalidSet {
            id: id.clone(),
            reason: reason.to_string(),
        };
        if dim == 0 {
            return Err(invalid("dim must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(invalid("vector data must hold a positive whole number of rows"));
        }
        if token_length == 0 {
            return Err(invalid("token_length must be positive"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVector {
                id,
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(EmbeddingSet {
            id,
            dataset: dataset.into(),
            token_length,
            dim,
            data,
        })
    }

    pub fn from_rows(
        id: impl Into<String>,
        dataset: impl Into<String>,
        token_length: u32,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let id = id.into();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidSet {
                id,
                reason: "rows have different lengths".into(),
            });
        }
        Self::new(id, dataset, token_length, dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vectors(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn vectors(&self) -> Vectors<'_> {
        Vectors::new(&self.data, self.dim)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: String,
    pub n_vectors: u64,
    pub byte_offset: u64,
    pub token_length: u32,
    pub dataset: String,
}

impl ItemMeta {
    fn byte_len(&self, dim: usize) -> u64 {
        self.n_vectors * dim as u64 * F32_BYTES
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub dim: usize,
    pub dtype: Dtype,
    pub endianness: Endianness,
    pub normalized: bool,
    /// Free-text note from the producer (model, special-token handling, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub items: Vec<ItemMeta>,
}

impl StoreManifest {
    /// Reads and validates a manifest without touching any vector file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
        manifest.validate(None)?;
        Ok(manifest)
    }

    /// Checks every manifest invariant; bounds are checked only when the
    /// blob length is known.
    pub fn validate(&self, blob_len: Option<u64>) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::MalformedManifest(format!(
                "unsupported version {}, expected {FORMAT_VERSION}",
                self.version
            )));
        }
        if self.dim == 0 {
            return Err(Error::MalformedManifest("dim must be at least 1".into()));
        }
        if self.items.is_empty() {
            return Err(Error::EmptyStore);
        }
        let mut seen = HashSet::with_capacity(self.items.len());
        let mut prev_offset: Option<u64> = None;
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
            if item.n_vectors == 0 {
                return Err(Error::MalformedManifest(format!(
                    "item {:?} has no vectors",
                    item.id
                )));
            }
            if item.token_length == 0 {
                return Err(Error::MalformedManifest(format!(
                    "item {:?} has token_length 0",
                    item.id
                )));
            }
            if item.byte_offset % F32_BYTES != 0 {
                return Err(Error::MalformedManifest(format!(
                    "item {:?} byte_offset {} is not a multiple of 4",
                    item.id, item.byte_offset
                )));
            }
            if let Some(prev) = prev_offset {
                if item.byte_offset <= prev {
                    return Err(Error::MalformedManifest(format!(
                        "byte offsets must be strictly increasing (item {:?})",
                        item.id
                    )));
                }
            }
            prev_offset = Some(item.byte_offset);
            if let Some(len) = blob_len {
                let end = item.byte_offset + item.byte_len(self.dim);
                if end > len {
                    return Err(Error::OffsetOutOfBounds {
                        id: item.id.clone(),
                        start: item.byte_offset,
                        end,
                        len,
                    });
                }
            }
        }
        Ok(())
    }

    /// item id → token_length.
    pub fn token_lengths(&self) -> BTreeMap<String, u32> {
        self.items
            .iter()
            .map(|it| (it.id.clone(), it.token_length))
            .collect()
    }

    pub fn mean_token_length(&self) -> f64 {
        let total: u64 = self.items.iter().map(|it| u64::from(it.token_length)).sum();
        total as f64 / self.items.len() as f64
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

enum Blob {
    Mapped(memmap2::Mmap),
    Owned(Vec<f32>),
}

impl Blob {
    fn floats(&self) -> &[f32] {
        match self {
            Blob::Mapped(map) => {
                let usable = map.len() - map.len() % F32_BYTES as usize;
                bytemuck::cast_slice(&map[..usable])
            }
            Blob::Owned(v) => v,
        }
    }
}

/// One item of a store: metadata plus its rows.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingRef<'a> {
    pub meta: &'a ItemMeta,
    pub vectors: Vectors<'a>,
}

impl<'a> EmbeddingRef<'a> {
    pub fn id(&self) -> &'a str {
        &self.meta.id
    }

    pub fn dataset(&self) -> &'a str {
        &self.meta.dataset
    }

    pub fn token_length(&self) -> u32 {
        self.meta.token_length
    }

    pub fn to_set(&self) -> EmbeddingSet {
        EmbeddingSet {
            id: self.meta.id.clone(),
            dataset: self.meta.dataset.clone(),
            token_length: self.meta.token_length,
            dim: self.vectors.dim(),
            data: self.vectors.as_slice().to_vec(),
        }
    }
}

/// Immutable collection of embedding sets (corpus or query side).
pub struct EmbeddingStore {
    manifest: StoreManifest,
    blob: Blob,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for EmbeddingStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingStore")
            .field("items", &self.manifest.items.len())
            .field("dim", &self.manifest.dim)
            .field("normalized", &self.manifest.normalized)
            .finish()
    }
}

fn build_index(manifest: &StoreManifest) -> HashMap<String, usize> {
    manifest
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.clone(), i))
        .collect()
}

impl EmbeddingStore {
    /// Opens a store from disk and validates the manifest against the blob.
    pub fn open(manifest_path: impl AsRef<Path>, vectors_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let vectors_path = vectors_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
        let file = File::open(vectors_path).map_err(|e| Error::io(vectors_path, e))?;
        let len = file.metadata().map_err(|e| Error::io(vectors_path, e))?.len();
        manifest.validate(Some(len))?;

        // SAFETY: the mapping is read-only and the store never hands out
        // mutable access; concurrent truncation of the file by another
        // process is outside the supported contract.
        let map = unsafe { memmap2::Mmap::map(&file) }.map_err(|e| Error::io(vectors_path, e))?;
        let blob = if cfg!(target_endian = "little") {
            Blob::Mapped(map)
        } else {
            Blob::Owned(
                map.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            )
        };
        let index = build_index(&manifest);
        Ok(EmbeddingStore {
            manifest,
            blob,
            index,
        })
    }

    /// Opens `<dir>/manifest.json` + `<dir>/vectors.bin`.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::open(dir.join(MANIFEST_FILE), dir.join(VECTORS_FILE))
    }

    /// Builds an in-memory store. Fails on an empty list, mixed dims or
    /// duplicate ids; with `normalized` set every row must be unit norm.
    pub fn from_sets(sets: Vec<EmbeddingSet>, normalized: bool) -> Result<Self> {
        let first = sets.first().ok_or(Error::EmptyStore)?;
        let dim = first.dim;
        let mut seen = HashSet::with_capacity(sets.len());
        let mut items = Vec::with_capacity(sets.len());
        let mut data = Vec::with_capacity(sets.iter().map(|s| s.data.len()).sum());
        for set in sets {
            if set.dim != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: set.dim,
                });
            }
            if !seen.insert(set.id.clone()) {
                return Err(Error::DuplicateId(set.id));
            }
            if normalized {
                check_unit_rows(&set.id, set.vectors())?;
            }
            items.push(ItemMeta {
                n_vectors: set.n_vectors() as u64,
                byte_offset: data.len() as u64 * F32_BYTES,
                token_length: set.token_length,
                dataset: set.dataset,
                id: set.id,
            });
            data.extend_from_slice(&set.data);
        }
        let manifest = StoreManifest {
            version: FORMAT_VERSION,
            dim,
            dtype: Dtype::F32,
            endianness: Endianness::Little,
            normalized,
            provenance: None,
            items,
        };
        let index = build_index(&manifest);
        Ok(EmbeddingStore {
            manifest,
            blob: Blob::Owned(data),
            index,
        })
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.manifest.provenance = Some(note.into());
        self
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.manifest.normalized
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn raw(&self, idx: usize) -> EmbeddingRef<'_> {
        let meta = &self.manifest.items[idx];
        let dim = self.manifest.dim;
        let start = (meta.byte_offset / F32_BYTES) as usize;
        let end = start + meta.n_vectors as usize * dim;
        EmbeddingRef {
            meta,
            vectors: Vectors::new(&self.blob.floats()[start..end], dim),
        }
    }

    /// Item at canonical position `idx`; fails if any entry is non-finite.
    pub fn get(&self, idx: usize) -> Result<EmbeddingRef<'_>> {
        let item = self.raw(idx);
        check_finite(item.id(), item.vectors)?;
        Ok(item)
    }

    pub fn get_by_id(&self, id: &str) -> Result<EmbeddingRef<'_>> {
        let idx = self
            .position(id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        self.get(idx)
    }

    /// Items in canonical (manifest) order.
    pub fn iter(&self) -> impl Iterator<Item = Result<EmbeddingRef<'_>>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Every item, validated. Used by the scoring loops so each item is
    /// checked once instead of once per query.
    pub fn items(&self) -> Result<Vec<EmbeddingRef<'_>>> {
        self.iter().collect()
    }

    /// Scans all vectors and returns every finding (non-finite entries,
    /// and rows off the unit sphere when the store declares normalization).
    pub fn findings(&self) -> Vec<Error> {
        let mut out = Vec::new();
        for idx in 0..self.len() {
            let item = self.raw(idx);
            if let Err(e) = check_finite(item.id(), item.vectors) {
                out.push(e);
                continue;
            }
            if self.manifest.normalized {
                if let Err(e) = check_unit_rows(item.id(), item.vectors) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Eager scan; returns the first finding.
    pub fn verify(&self) -> Result<()> {
        match self.findings().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Writes manifest and blob into `out_dir` (created if missing).
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let manifest_path = out_dir.join(MANIFEST_FILE);
        let vectors_path = out_dir.join(VECTORS_FILE);

        // Re-pack so the written blob is contiguous in canonical order.
        let mut manifest = self.manifest.clone();
        let file = File::create(&vectors_path).map_err(|e| Error::io(&vectors_path, e))?;
        let mut w = BufWriter::new(file);
        let mut offset = 0u64;
        for (idx, meta) in manifest.items.iter_mut().enumerate() {
            meta.byte_offset = offset;
            for v in self.raw(idx).vectors.as_slice() {
                w.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&vectors_path, e))?;
            }
            offset += meta.byte_len(manifest.dim);
        }
        w.flush().map_err(|e| Error::io(&vectors_path, e))?;
        manifest.write(&manifest_path)?;
        Ok((manifest_path, vectors_path))
    }
}

fn check_finite(id: &str, vectors: Vectors<'_>) -> Result<()> {
    match vectors.as_slice().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(Error::NonFiniteVector {
            id: id.to_string(),
            row: pos / vectors.dim(),
            col: pos % vectors.dim(),
        }),
    }
}

fn check_unit_rows(id: &str, vectors: Vectors<'_>) -> Result<()> {
    for (row, r) in vectors.rows().enumerate() {
        let norm = r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized {
                id: id.to_string(),
                row,
                norm,
            });
        }
    }
    Ok(())
}

/// Writes `sets` as a store in `out_dir`; returns (manifest, vectors) paths.
pub fn write_store(
    sets: Vec<EmbeddingSet>,
    out_dir: impl AsRef<Path>,
    normalized: bool,
) -> Result<(PathBuf, PathBuf)> {
    EmbeddingStore::from_sets(sets, normalized)?.write(out_dir)
}

pub fn open_store(manifest_path: impl AsRef<Path>, vectors_path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::open(manifest_path, vectors_path)
}

/// Pools several stores into one, dropping items longer than
/// `max_token_length`. Ids that occur in more than one retained item are
/// rewritten as `<dataset>/<id>`.
pub fn merge_stores(stores: &[&EmbeddingStore], max_token_length: u32) -> Result<EmbeddingStore> {
    let first = stores.first().ok_or(Error::EmptyStore)?;
    for s in stores {
        if s.dim() != first.dim() {
            return Err(Error::DimMismatch {
                expected: first.dim(),
                found: s.dim(),
            });
        }
        if s.is_normalized() != first.is_normalized() {
            return Err(Error::NormalizationMismatch);
        }
    }

    let retained: Vec<EmbeddingRef<'_>> = stores
        .iter()
        .flat_map(|s| (0..s.len()).map(move |i| s.raw(i)))
        .filter(|it| it.token_length() <= max_token_length)
        .collect();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for it in &retained {
        *counts.entry(it.id()).or_default() += 1;
    }
    let dropped = stores.iter().map(|s| s.len()).sum::<usize>() - retained.len();
    if dropped > 0 {
        log::info!("merge dropped {dropped} items above {max_token_length} tokens");
    }

    let sets = retained
        .iter()
        .map(|it| {
            let mut set = it.to_set();
            if counts[it.id()] > 1 {
                set.id = format!("{}/{}", it.dataset(), it.id());
            }
            set
        })
        .collect();
    let merged = EmbeddingStore::from_sets(sets, first.is_normalized())?;
    let provenance: Vec<&str> = stores
        .iter()
        .filter_map(|s| s.manifest.provenance.as_deref())
        .collect();
    Ok(if provenance.is_empty() {
        merged
    } else {
        merged.with_provenance(provenance.join("; "))
    })
}
