//! Multi-dataset corpus model, on-disk layout, and deterministic splitting.
//!
//! On disk a corpus is a directory holding `corpus.json`:
//!
//! ```json
//! {"feature_dim": 8, "datasets": [{"id": "a", "file": "a.csv", "curated_split_file": "a_split.csv"}]}
//! ```
//!
//! plus one CSV per dataset (`file_id,mos,votes,condition_id,f0,...`) and
//! optional curated split CSVs (`file_id,split`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MIN_DATASET_SIZE: usize = 10;
pub const MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}, row {row}: {message}")]
    Ingest {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error("dataset '{dataset}', file '{file_id}': {message}")]
    Validation {
        dataset: String,
        file_id: String,
        message: String,
    },
    #[error("dataset '{dataset}': {message}")]
    Dataset { dataset: String, message: String },
    #[error("feature dimension mismatch: expected {expected}, dataset '{dataset}' has {found}")]
    DimensionMismatch {
        dataset: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid split spec: {0}")]
    SplitSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub file_id: String,
    pub features: Vec<f64>,
    pub mos: f64,
    pub votes: u32,
    pub condition_id: Option<String>,
}

impl Sample {
    fn validate(&self, dataset: &str, dim: usize) -> Result<(), CorpusError> {
        let fail = |message: String| CorpusError::Validation {
            dataset: dataset.to_string(),
            file_id: self.file_id.clone(),
            message,
        };
        if self.file_id.is_empty() {
            return Err(fail("empty file_id".into()));
        }
        if !self.mos.is_finite() || !(1.0..=5.0).contains(&self.mos) {
            return Err(fail(format!("mos {} outside [1, 5]", self.mos)));
        }
        if self.votes == 0 {
            return Err(fail("votes must be >= 1".into()));
        }
        if self.features.len() != dim {
            return Err(fail(format!(
                "expected {dim} features, found {}",
                self.features.len()
            )));
        }
        if let Some(k) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("feature f{k} is not finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub samples: Vec<Sample>,
    pub curated_split: Option<BTreeMap<String, Split>>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            id: id.into(),
            samples,
            curated_split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self, dim: usize) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::Dataset {
                dataset: String::new(),
                message: "empty dataset id".into(),
            });
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.features.len() != dim {
                return Err(CorpusError::DimensionMismatch {
                    dataset: self.id.clone(),
                    expected: dim,
                    found: s.features.len(),
                });
            }
            s.validate(&self.id, dim)?;
            if !seen.insert(s.file_id.as_str()) {
                return Err(CorpusError::Validation {
                    dataset: self.id.clone(),
                    file_id: s.file_id.clone(),
                    message: "duplicate file_id".into(),
                });
            }
        }
        if let Some(curated) = &self.curated_split {
            for file_id in curated.keys() {
                if !seen.contains(file_id.as_str()) {
                    return Err(CorpusError::Validation {
                        dataset: self.id.clone(),
                        file_id: file_id.clone(),
                        message: "curated split references unknown file_id".into(),
                    });
                }
            }
            if let Some(s) = self
                .samples
                .iter()
                .find(|s| !curated.contains_key(&s.file_id))
            {
                return Err(CorpusError::Validation {
                    dataset: self.id.clone(),
                    file_id: s.file_id.clone(),
                    message: "file missing from curated split".into(),
                });
            }
        }
        Ok(())
    }

    pub fn mos(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mos).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub feature_dim: usize,
    pub datasets: Vec<Dataset>,
}

impl Corpus {
    /// Builds a corpus and checks every invariant.
    pub fn new(feature_dim: usize, datasets: Vec<Dataset>) -> Result<Self, CorpusError> {
        let corpus = Self {
            feature_dim,
            datasets,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.feature_dim == 0 {
            return Err(CorpusError::SplitSpec("feature_dim must be positive".into()));
        }
        let mut ids = HashSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id.as_str()) {
                return Err(CorpusError::Dataset {
                    dataset: d.id.clone(),
                    message: "duplicate dataset id".into(),
                });
            }
            d.validate(self.feature_dim)?;
        }
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.id.clone()).collect()
    }

    /// Moves the named datasets into a second corpus with the same
    /// feature dimension. Unknown ids are ignored.
    pub fn split_off(mut self, ids: &[&str]) -> (Corpus, Corpus) {
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.datasets)
            .into_iter()
            .partition(|d| ids.contains(&d.id.as_str()));
        (
            Corpus {
                feature_dim: self.feature_dim,
                datasets: kept,
            },
            Corpus {
                feature_dim: self.feature_dim,
                datasets: taken,
            },
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    curated_split_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    feature_dim: usize,
    datasets: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CorpusError {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    CorpusError::Ingest {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// Reads a corpus directory. Sample order follows row order in each file.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    if manifest.feature_dim == 0 {
        return Err(CorpusError::Manifest {
            path: manifest_path,
            message: "feature_dim must be positive".into(),
        });
    }
    let mut datasets = Vec::with_capacity(manifest.datasets.len());
    for entry in &manifest.datasets {
        let path = dir.join(&entry.file);
        let samples = read_samples(&path, &entry.id, manifest.feature_dim)?;
        let curated_split = match &entry.curated_split_file {
            Some(f) => Some(read_curated(&dir.join(f))?),
            None => None,
        };
        datasets.push(Dataset {
            id: entry.id.clone(),
            samples,
            curated_split,
        });
    }
    Corpus::new(manifest.feature_dim, datasets)
}

fn read_samples(path: &Path, dataset: &str, dim: usize) -> Result<Vec<Sample>, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = header_row(dim);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        let found = headers.len().saturating_sub(4);
        if headers.len() >= 4 && found != dim {
            return Err(CorpusError::DimensionMismatch {
                dataset: dataset.to_string(),
                expected: dim,
                found,
            });
        }
        return Err(CorpusError::Ingest {
            path: path.to_path_buf(),
            row: 1,
            message: format!("expected header '{}'", expected.join(",")),
        });
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| CorpusError::Ingest {
            path: path.to_path_buf(),
            row,
            message,
        };
        let num = |idx: usize, name: &str| -> Result<f64, CorpusError> {
            record[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {name}: {e}")))
        };
        let mos = num(1, "mos")?;
        let votes = record[2]
            .trim()
            .parse::<u32>()
            .map_err(|e| bad(format!("column votes: {e}")))?;
        let condition_id = match record[3].trim() {
            "" => None,
            c => Some(c.to_string()),
        };
        let features = (0..dim)
            .map(|k| num(4 + k, &format!("f{k}")))
            .collect::<Result<Vec<_>, _>>()?;
        let sample = Sample {
            file_id: record[0].to_string(),
            features,
            mos,
            votes,
            condition_id,
        };
        sample.validate(dataset, dim)?;
        samples.push(sample);
    }
    Ok(samples)
}

fn read_curated(path: &Path) -> Result<BTreeMap<String, Split>, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| CorpusError::Ingest {
            path: path.to_path_buf(),
            row,
            message,
        };
        if record.len() != 2 {
            return Err(bad("expected 2 columns: file_id,split".into()));
        }
        let split: Split = record[1].trim().parse().map_err(bad)?;
        if out.insert(record[0].to_string(), split).is_some() {
            return Err(bad(format!("duplicate file_id '{}'", &record[0])));
        }
    }
    Ok(out)
}

fn header_row(dim: usize) -> Vec<String> {
    ["file_id", "mos", "votes", "condition_id"]
        .into_iter()
        .map(String::from)
        .chain((0..dim).map(|k| format!("f{k}")))
        .collect()
}

fn dataset_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.csv")
}

/// Writes the corpus layout into `dir` and returns the written paths.
///
/// Numbers use Rust's shortest round-trip formatting so that a reload yields
/// an identical corpus.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for d in &corpus.datasets {
        let file = dataset_file_name(&d.id);
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(header_row(corpus.feature_dim))
            .map_err(|e| csv_err(&path, e))?;
        for s in &d.samples {
            let mut row = vec![
                s.file_id.clone(),
                s.mos.to_string(),
                s.votes.to_string(),
                s.condition_id.clone().unwrap_or_default(),
            ];
            row.extend(s.features.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);

        let curated_split_file = match &d.curated_split {
            Some(curated) => {
                let name = format!("{}_split.csv", file.trim_end_matches(".csv"));
                let path = dir.join(&name);
                let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
                w.write_record(["file_id", "split"])
                    .map_err(|e| csv_err(&path, e))?;
                // file order, not map order
                for s in &d.samples {
                    if let Some(split) = curated.get(&s.file_id) {
                        w.write_record([s.file_id.as_str(), split.as_str()])
                            .map_err(|e| csv_err(&path, e))?;
                    }
                }
                w.flush().map_err(io_err(&path))?;
                written.push(path);
                Some(name)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: d.id.clone(),
            file,
            curated_split_file,
        });
    }
    let manifest = Manifest {
        feature_dim: corpus.feature_dim,
        datasets: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    pub honor_curated: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: (0.8, 0.1, 0.1),
            seed: 0,
            honor_curated: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (a, b, c) = self.fractions;
        for (name, f) in [("train", a), ("val", b), ("test", c)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CorpusError::SplitSpec(format!(
                    "{name} fraction {f} not in (0, 1)"
                )));
            }
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CorpusError::SplitSpec(format!(
                "fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Indices into `Dataset::samples`, in sample order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Position of a file in the seeded ordering, uniform on `[0, 1)`.
pub fn split_key(seed: u64, dataset_id: &str, file_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((dataset_id.len() as u64).to_le_bytes());
    h.update(dataset_id.as_bytes());
    h.update(file_id.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

fn split_counts(n: usize, (_, val, test): (f64, f64, f64)) -> (usize, usize, usize) {
    let mut n_test = ((n as f64) * test).round().max(1.0) as usize;
    let mut n_val = ((n as f64) * val).round().max(1.0) as usize;
    while n_test + n_val >= n {
        if n_val > 1 {
            n_val -= 1;
        } else {
            n_test -= 1;
        }
    }
    (n - n_val - n_test, n_val, n_test)
}

/// Partitions a dataset into train/validation/test.
///
/// Files are ordered by a hash of `(seed, dataset_id, file_id)` and the
/// ordering is cut at the rounded cumulative fractions, so the result does
/// not depend on sample order.
pub fn split_dataset(d: &Dataset, spec: &SplitSpec) -> Result<SplitIndices, CorpusError> {
    spec.validate()?;
    if d.len() < MIN_DATASET_SIZE {
        return Err(CorpusError::Dataset {
            dataset: d.id.clone(),
            message: format!(
                "{} samples, at least {MIN_DATASET_SIZE} required for splitting",
                d.len()
            ),
        });
    }
    if let (true, Some(curated)) = (spec.honor_curated, &d.curated_split) {
        return curated_split(d, curated);
    }
    let mut order: Vec<(f64, usize)> = d
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (split_key(spec.seed, &d.id, &s.file_id), i))
        .collect();
    order.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| d.samples[a.1].file_id.cmp(&d.samples[b.1].file_id))
    });
    let (n_train, n_val, _) = split_counts(d.len(), spec.fractions);
    let mut out = SplitIndices {
        train: order[..n_train].iter().map(|p| p.1).collect(),
        val: order[n_train..n_train + n_val].iter().map(|p| p.1).collect(),
        test: order[n_train + n_val..].iter().map(|p| p.1).collect(),
    };
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

fn curated_split(d: &Dataset, curated: &BTreeMap<String, Split>) -> Result<SplitIndices, CorpusError> {
    let known: HashSet<&str> = d.samples.iter().map(|s| s.file_id.as_str()).collect();
    if let Some(unknown) = curated.keys().find(|k| !known.contains(k.as_str())) {
        return Err(CorpusError::Validation {
            dataset: d.id.clone(),
            file_id: unknown.clone(),
            message: "curated split references unknown file_id".into(),
        });
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in d.samples.iter().enumerate() {
        match curated.get(&s.file_id) {
            Some(Split::Train) => out.train.push(i),
            Some(Split::Val) => out.val.push(i),
            Some(Split::Test) => out.test.push(i),
            None => {
                return Err(CorpusError::Validation {
                    dataset: d.id.clone(),
                    file_id: s.file_id.clone(),
                    message: "file missing from curated split".into(),
                })
            }
        }
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        if out.get(split).is_empty() {
            return Err(CorpusError::Dataset {
                dataset: d.id.clone(),
                message: format!("curated split leaves the {split} set empty"),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_dataset(id: &str, n: usize, dim: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                file_id: format!("{id}_{i:04}"),
                features: (0..dim).map(|k| (i * (k + 1)) as f64 * 0.01).collect(),
                mos: 1.0 + 4.0 * (i as f64 / n.max(1) as f64),
                votes: 8,
                condition_id: if i % 2 == 0 { Some(format!("c{}", i % 5)) } else { None },
            })
            .collect();
        Dataset::new(id, samples)
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = toy_dataset("a", 100, 2);
        let spec = SplitSpec {
            fractions: (0.8, 0.1, 0.1),
            seed: 7,
            honor_curated: true,
        };
        let s = split_dataset(&d, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_dataset(&d, &spec).unwrap(), s);
    }

    #[test]
    fn split_ignores_sample_order() {
        let d = toy_dataset("a", 50, 2);
        let mut rev = d.clone();
        rev.samples.reverse();
        let spec = SplitSpec::default();
        let ids = |d: &Dataset, idx: &[usize]| {
            let mut v: Vec<String> = idx.iter().map(|&i| d.samples[i].file_id.clone()).collect();
            v.sort();
            v
        };
        let a = split_dataset(&d, &spec).unwrap();
        let b = split_dataset(&rev, &spec).unwrap();
        assert_eq!(ids(&d, &a.test), ids(&rev, &b.test));
        assert_eq!(ids(&d, &a.train), ids(&rev, &b.train));
    }

    #[test]
    fn seeds_give_distinct_partitions() {
        let d = toy_dataset("a", 100, 1);
        let parts: HashSet<SplitIndices> = (0..20)
            .map(|seed| {
                split_dataset(
                    &d,
                    &SplitSpec {
                        seed,
                        ..SplitSpec::default()
                    },
                )
                .unwrap()
            })
            .collect();
        assert!(parts.len() >= 19);
    }

    #[test]
    fn curated_all_test_is_rejected() {
        let mut d = toy_dataset("a", 10, 1);
        d.curated_split = Some(
            d.samples
                .iter()
                .map(|s| (s.file_id.clone(), Split::Test))
                .collect(),
        );
        let err = split_dataset(&d, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("train set empty"), "{err}");

        // ignored when not honored
        let spec = SplitSpec {
            honor_curated: false,
            ..SplitSpec::default()
        };
        assert!(split_dataset(&d, &spec).is_ok());
    }

    #[test]
    fn curated_split_is_followed() {
        let mut d = toy_dataset("a", 12, 1);
        let assign = |i: usize| match i % 4 {
            0 => Split::Test,
            1 => Split::Val,
            _ => Split::Train,
        };
        d.curated_split = Some(
            d.samples
                .iter()
                .enumerate()
                .map(|(i, s)| (s.file_id.clone(), assign(i)))
                .collect(),
        );
        let s = split_dataset(&d, &SplitSpec::default()).unwrap();
        assert_eq!(s.test, vec![0, 4, 8]);
        assert_eq!(s.val, vec![1, 5, 9]);
        assert_eq!(s.train.len(), 6);
    }

    #[test]
    fn curated_unknown_file_id() {
        let mut d = toy_dataset("a", 10, 1);
        let mut map: BTreeMap<String, Split> = d
            .samples
            .iter()
            .map(|s| (s.file_id.clone(), Split::Train))
            .collect();
        map.insert("ghost".into(), Split::Test);
        d.curated_split = Some(map);
        let err = split_dataset(&d, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn too_small_and_bad_fractions() {
        let d = toy_dataset("a", 9, 1);
        assert!(split_dataset(&d, &SplitSpec::default()).is_err());
        let d = toy_dataset("a", 20, 1);
        let spec = SplitSpec {
            fractions: (0.8, 0.2, 0.0),
            ..SplitSpec::default()
        };
        assert!(split_dataset(&d, &spec).is_err());
        let spec = SplitSpec {
            fractions: (0.8, 0.1, 0.2),
            ..SplitSpec::default()
        };
        assert!(split_dataset(&d, &spec).is_err());
    }

    #[test]
    fn validation_rejects_bad_records() {
        let mut d = toy_dataset("a", 10, 2);
        d.samples[3].mos = 5.3;
        let err = Corpus::new(2, vec![d]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'a'") && msg.contains("a_0003"), "{msg}");

        let mut d = toy_dataset("a", 10, 2);
        d.samples[1].votes = 0;
        assert!(Corpus::new(2, vec![d]).is_err());

        let mut d = toy_dataset("a", 10, 2);
        d.samples[1].features[0] = f64::INFINITY;
        assert!(Corpus::new(2, vec![d]).is_err());

        let d = toy_dataset("a", 10, 2);
        let dup = d.clone();
        assert!(Corpus::new(2, vec![d, dup]).is_err());
    }
}
