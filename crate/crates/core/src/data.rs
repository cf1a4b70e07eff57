//! Record types, manifest and outcome ingestion, dataset splitting and the
//! binary embedding store.
//!
//! Store layout (all integers and reals little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XMAL"
//! 4       4     version (u32, = 1)
//! 8       4     count   (u32, rows)
//! 12      4     dim     (u32, columns)
//! 16      4*count*dim  row-major f32 payload
//! ```
//!
//! Row ids live in a sidecar `<name>.ids`, one id per line in row order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"XMAL";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// One audio/text segment with its acoustic feature matrix (frames x feature_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub person_id: String,
    pub text: String,
    pub acoustic_features: Array2<f64>,
    pub duration_s: f64,
}

/// One manifest line as stored on disk. `features_path` is resolved relative
/// to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub segment_id: String,
    pub person_id: String,
    pub text: String,
    pub features_path: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub person_id: String,
    pub outcome_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Parse manifest lines without touching the feature files.
pub fn read_manifest_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if entry.segment_id.is_empty() || entry.person_id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "empty segment_id or person_id".into(),
            });
        }
        if !(entry.duration_s >= 0.0 && entry.duration_s.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("invalid duration_s {}", entry.duration_s),
            });
        }
        if !seen.insert(entry.segment_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id: entry.segment_id,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn resolve_features_path(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.features_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Load a manifest and every segment's feature matrix, in file order.
pub fn load_manifest(path: &Path) -> Result<Vec<SegmentRecord>> {
    let entries = read_manifest_entries(path)?;
    let mut feature_dim = None;
    let mut records = Vec::with_capacity(entries.len());
    for entry in entries {
        let fpath = resolve_features_path(path, &entry);
        let store = read_store(&fpath)?;
        if store.len() == 0 {
            return Err(Error::Store {
                path: fpath,
                msg: "acoustic features need at least one frame".into(),
            });
        }
        match feature_dim {
            None => feature_dim = Some(store.dim()),
            Some(d) if d != store.dim() => {
                return Err(Error::Shape(format!(
                    "segment {} has feature_dim {}, expected {}",
                    entry.segment_id,
                    store.dim(),
                    d
                )))
            }
            _ => {}
        }
        records.push(SegmentRecord {
            segment_id: entry.segment_id,
            person_id: entry.person_id,
            text: entry.text,
            acoustic_features: store.to_f64(),
            duration_s: entry.duration_s,
        });
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("manifest entry serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read `person_id,outcome_name,value` rows. Output is sorted by person id.
pub fn read_outcomes(path: &Path) -> Result<Vec<PersonRecord>> {
    let mut by_person: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [person, outcome, value] = fields[..] else {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        };
        let value: f64 = value
            .parse()
            .map_err(|_| parse_err(format!("bad value {value:?}")))?;
        if !value.is_finite() {
            return Err(parse_err("non-finite outcome value".into()));
        }
        let scores = by_person.entry(person.to_string()).or_default();
        if scores.insert(outcome.to_string(), value).is_some() {
            return Err(parse_err(format!("duplicate outcome {outcome} for {person}")));
        }
    }
    Ok(by_person
        .into_iter()
        .map(|(person_id, outcome_scores)| PersonRecord {
            person_id,
            outcome_scores,
        })
        .collect())
}

pub fn write_outcomes(path: &Path, persons: &[PersonRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in persons {
        for (name, value) in &p.outcome_scores {
            writeln!(w, "{},{},{}", p.person_id, name, value).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shuffle `ids` with a seeded generator and cut it into train/val/test.
/// Val and test get `floor(n * ratio)` records; the remainder goes to train.
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (rt, rv, rs) = ratios;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty id list".into()));
    }
    if [rt, rv, rs].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be nonnegative, got {ratios:?}"
        )));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    let n = ids.len();
    // Small slack so that e.g. 10 * 0.1 floors to 1 even with representation error.
    let bucket = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let n_val = bucket(rv);
    let n_test = bucket(rs);
    let n_train = n - n_val - n_test;

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
    })
}

/// Rows of f32 values keyed by unique string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    matrix: Array2<f32>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, matrix: Array2<f32>) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} ids for {} rows",
                ids.len(),
                matrix.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.is_empty() || id.contains('\n') || id.contains('\r') {
                return Err(Error::InvalidArgument(format!("invalid store id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate store id {id:?}")));
            }
        }
        if let Some(bad) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "store value at flat index {bad} is not finite"
            )));
        }
        Ok(Self { ids, matrix })
    }

    /// Build a store from f64 rows, narrowing to f32.
    pub fn from_f64(ids: Vec<String>, matrix: &Array2<f64>) -> Result<Self> {
        Self::new(ids, matrix.mapv(|v| v as f32))
    }

    /// A store whose ids are the row indices "0", "1", ...
    pub fn indexed(matrix: &Array2<f64>) -> Self {
        let ids = (0..matrix.nrows()).map(|i| i.to_string()).collect();
        Self::from_f64(ids, matrix).expect("indexed ids are unique")
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.matrix.mapv(f64::from)
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.matrix.row(i)
    }

    /// Rows for `ids` in the given order, as f64.
    pub fn select(&self, ids: &[String]) -> Result<Array2<f64>> {
        let index = self.index();
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (r, id) in ids.iter().enumerate() {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Shape(format!("id {id:?} not in store")))?;
            out.row_mut(r).assign(&self.matrix.row(i).mapv(f64::from));
        }
        Ok(out)
    }
}

pub fn ids_sidecar(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let count = u32::try_from(store.len())
        .map_err(|_| Error::InvalidArgument("store too large".into()))?;
    let dim = u32::try_from(store.dim())
        .map_err(|_| Error::InvalidArgument("store too wide".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * store.matrix.len());
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in store.matrix.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let mut ids = String::new();
    for id in &store.ids {
        ids.push_str(id);
        ids.push('\n');
    }
    let sidecar = ids_sidecar(path);
    fs::write(&sidecar, ids).map_err(|e| Error::io(sidecar, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let store_err = |msg: &str| Error::Store {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(store_err("truncated header"));
    }
    if &bytes[0..4] != STORE_MAGIC {
        return Err(store_err("wrong magic bytes"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != STORE_VERSION {
        return Err(store_err(&format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    let dim = word(12) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * dim * 4 {
        return Err(store_err("payload length mismatch"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = Array2::from_shape_vec((count, dim), values).expect("length checked");

    let sidecar = ids_sidecar(path);
    let ids: Vec<String> = fs::read_to_string(&sidecar)
        .map_err(|e| Error::io(&sidecar, e))?
        .lines()
        .map(str::to_string)
        .collect();
    if ids.len() != count {
        return Err(store_err(&format!(
            "id sidecar has {} ids, header declares {count}",
            ids.len()
        )));
    }
    EmbeddingStore::new(ids, matrix).map_err(|e| store_err(&e.to_string()))
}
