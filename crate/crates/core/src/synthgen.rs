//! Synthetic multi-dataset corpora with a controllable corpus effect.
//!
//! Every sample has a latent quality `q` drawn from its dataset's support.
//! Features are a fixed sinusoidal embedding of `q` plus noise, shared by
//! all datasets. Labels come from simulated 5-point votes on a per-dataset
//! warped scale, so the same `q` gets different MOS in different datasets.
//! The latent values and warps are kept in a separate [`GroundTruth`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, Sample};
use crate::seed;
use crate::stats::{self, StatsError};

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("dataset '{0}' is unknown to the ground truth")]
    UnknownDataset(String),
    #[error("dataset '{dataset}': no latent value for file '{file_id}'")]
    UnknownFile { dataset: String, file_id: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> SynthError {
    SynthError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// A strictly increasing map from the latent scale onto a dataset's label
/// scale. Values are not clamped here; vote simulation clamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWarp", into = "RawWarp")]
pub enum WarpSpec {
    Identity,
    Affine { a: f64, b: f64 },
    /// Logistic curve rescaled so that 1 ↦ 1 and 5 ↦ 5.
    SigmoidWarp { center: f64, steepness: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawWarp {
    kind: String,
    #[serde(default)]
    params: Vec<f64>,
}

impl TryFrom<RawWarp> for WarpSpec {
    type Error = String;

    fn try_from(raw: RawWarp) -> Result<Self, Self::Error> {
        let w = match (raw.kind.as_str(), raw.params.as_slice()) {
            ("identity", []) => WarpSpec::Identity,
            ("affine", &[a, b]) => WarpSpec::Affine { a, b },
            ("sigmoid-warp", &[center, steepness]) => WarpSpec::SigmoidWarp { center, steepness },
            (kind, params) => {
                return Err(format!(
                    "unsupported warp '{kind}' with {} params",
                    params.len()
                ))
            }
        };
        w.validate()?;
        Ok(w)
    }
}

impl From<WarpSpec> for RawWarp {
    fn from(w: WarpSpec) -> Self {
        let (kind, params) = match w {
            WarpSpec::Identity => ("identity", vec![]),
            WarpSpec::Affine { a, b } => ("affine", vec![a, b]),
            WarpSpec::SigmoidWarp { center, steepness } => ("sigmoid-warp", vec![center, steepness]),
        };
        RawWarp {
            kind: kind.to_string(),
            params,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl WarpSpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            WarpSpec::Identity => Ok(()),
            WarpSpec::Affine { a, b } => {
                if !(a > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(format!("affine warp needs a > 0 and finite b, got ({a}, {b})"));
                }
                Ok(())
            }
            WarpSpec::SigmoidWarp { center, steepness } => {
                if !(1.0..=5.0).contains(&center) {
                    return Err(format!("sigmoid center {center} outside [1, 5]"));
                }
                if !(steepness > 0.0 && steepness.is_finite()) {
                    return Err(format!("sigmoid steepness must be > 0, got {steepness}"));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, q: f64) -> f64 {
        match *self {
            WarpSpec::Identity => q,
            WarpSpec::Affine { a, b } => a * q + b,
            WarpSpec::SigmoidWarp { center, steepness } => {
                let lo = logistic(steepness * (1.0 - center));
                let hi = logistic(steepness * (5.0 - center));
                1.0 + 4.0 * (logistic(steepness * (q - center)) - lo) / (hi - lo)
            }
        }
    }
}

/// Closed latent-quality interval a dataset draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Support {
    fn default() -> Self {
        Self { lo: 1.0, hi: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_datasets: usize,
    pub samples_per_dataset: usize,
    pub feature_dim: usize,
    pub warps: Vec<WarpSpec>,
    pub vote_count: u32,
    pub vote_noise_sd: f64,
    pub feature_noise_sd: f64,
    /// Per-dataset support; `None` means `[1, 5]` everywhere.
    #[serde(default)]
    pub condition_shift: Option<Vec<Support>>,
    pub seed: u64,
    /// Defaults to `ds1`, `ds2`, ...
    #[serde(default)]
    pub dataset_ids: Option<Vec<String>>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_datasets == 0 {
            return Err(config_err("n_datasets", "must be positive"));
        }
        if self.samples_per_dataset == 0 {
            return Err(config_err("samples_per_dataset", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be positive"));
        }
        if self.vote_count == 0 {
            return Err(config_err("vote_count", "must be positive"));
        }
        if self.warps.len() != self.n_datasets {
            return Err(config_err(
                "warps",
                format!("{} warps for {} datasets", self.warps.len(), self.n_datasets),
            ));
        }
        for (j, w) in self.warps.iter().enumerate() {
            w.validate().map_err(|m| config_err(format!("warps[{j}]"), m))?;
        }
        for (name, v) in [
            ("vote_noise_sd", self.vote_noise_sd),
            ("feature_noise_sd", self.feature_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(name, "must be a nonnegative finite number"));
            }
        }
        if let Some(shift) = &self.condition_shift {
            if shift.len() != self.n_datasets {
                return Err(config_err(
                    "condition_shift",
                    format!("{} intervals for {} datasets", shift.len(), self.n_datasets),
                ));
            }
            for (j, s) in shift.iter().enumerate() {
                if !(1.0 <= s.lo && s.lo <= s.hi && s.hi <= 5.0) {
                    return Err(config_err(
                        format!("condition_shift[{j}]"),
                        format!("[{}, {}] is not a nonempty subset of [1, 5]", s.lo, s.hi),
                    ));
                }
            }
        }
        if let Some(ids) = &self.dataset_ids {
            if ids.len() != self.n_datasets {
                return Err(config_err(
                    "dataset_ids",
                    format!("{} ids for {} datasets", ids.len(), self.n_datasets),
                ));
            }
            let mut seen = std::collections::HashSet::new();
            for (j, id) in ids.iter().enumerate() {
                if id.is_empty() || !seen.insert(id) {
                    return Err(config_err(format!("dataset_ids[{j}]"), "empty or duplicate id"));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        match &self.dataset_ids {
            Some(ids) => ids.clone(),
            None => (1..=self.n_datasets).map(|j| format!("ds{j}")).collect(),
        }
    }

    fn support(&self, j: usize) -> Support {
        self.condition_shift
            .as_ref()
            .map(|s| s[j])
            .unwrap_or_default()
    }
}

/// The fixed feature embedding `φ_k(q) = sin(ω_k q + θ_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FeatureMap {
    pub fn from_seed(seed: u64, dim: usize) -> Self {
        let mut rng = seed::derived_rng(seed, &["feature-map"]);
        let omega = (0..dim).map(|_| rng.random_range(1.0..3.0)).collect();
        let theta = (0..dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self { omega, theta }
    }

    pub fn embed(&self, q: f64) -> Vec<f64> {
        self.omega
            .iter()
            .zip(&self.theta)
            .map(|(w, t)| (w * q + t).sin())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntry {
    pub file_id: String,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTruth {
    pub warp: WarpSpec,
    pub support: Support,
    pub latent: Vec<LatentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub feature_map: FeatureMap,
    pub datasets: BTreeMap<String, DatasetTruth>,
}

impl GroundTruth {
    pub fn warp(&self, dataset_id: &str) -> Option<WarpSpec> {
        self.datasets.get(dataset_id).map(|d| d.warp)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("truth serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let io = |message: String| SynthError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// One simulated ACR vote.
fn vote<R: Rng>(rng: &mut R, target: f64, noise: Option<&Normal<f64>>) -> f64 {
    let jitter = noise.map_or(0.0, |n| n.sample(rng));
    (target + jitter).clamp(1.0, 5.0).round()
}

/// Draws a corpus and its ground truth. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, GroundTruth), SynthError> {
    config.validate()?;
    let feature_map = FeatureMap::from_seed(config.seed, config.feature_dim);
    let vote_noise = (config.vote_noise_sd > 0.0)
        .then(|| Normal::new(0.0, config.vote_noise_sd).expect("validated sd"));
    let feature_noise = (config.feature_noise_sd > 0.0)
        .then(|| Normal::new(0.0, config.feature_noise_sd).expect("validated sd"));

    let mut datasets = Vec::with_capacity(config.n_datasets);
    let mut truth = BTreeMap::new();
    for (j, id) in config.ids().into_iter().enumerate() {
        let warp = config.warps[j];
        let support = config.support(j);
        let mut rng = seed::derived_rng(config.seed, &["dataset", &j.to_string()]);
        let mut samples = Vec::with_capacity(config.samples_per_dataset);
        let mut latent = Vec::with_capacity(config.samples_per_dataset);
        for i in 0..config.samples_per_dataset {
            let q = if support.hi > support.lo {
                rng.random_range(support.lo..=support.hi)
            } else {
                support.lo
            };
            let mut features = feature_map.embed(q);
            if let Some(noise) = &feature_noise {
                for f in &mut features {
                    *f += noise.sample(&mut rng);
                }
            }
            let target = warp.apply(q);
            let total: f64 = (0..config.vote_count)
                .map(|_| vote(&mut rng, target, vote_noise.as_ref()))
                .sum();
            let mos = (total / config.vote_count as f64).clamp(1.0, 5.0);
            let file_id = format!("{id}_{i:05}");
            latent.push(LatentEntry {
                file_id: file_id.clone(),
                q,
            });
            samples.push(Sample {
                file_id,
                features,
                mos,
                votes: config.vote_count,
                condition_id: None,
            });
        }
        truth.insert(
            id.clone(),
            DatasetTruth {
                warp,
                support,
                latent,
            },
        );
        datasets.push(Dataset::new(id, samples));
    }
    let corpus = Corpus::new(config.feature_dim, datasets).map_err(|e| config_err("corpus", e.to_string()))?;
    Ok((
        corpus,
        GroundTruth {
            feature_map,
            datasets: truth,
        },
    ))
}

/// LCC between observed MOS and the noise-free warped latent quality: the
/// ceiling any estimator can reach on this dataset.
pub fn oracle_correlation(dataset: &Dataset, truth: &GroundTruth) -> Result<f64, SynthError> {
    let dt = truth
        .datasets
        .get(&dataset.id)
        .ok_or_else(|| SynthError::UnknownDataset(dataset.id.clone()))?;
    let by_file: BTreeMap<&str, f64> = dt.latent.iter().map(|e| (e.file_id.as_str(), e.q)).collect();
    let mut warped = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let q = by_file.get(s.file_id.as_str()).ok_or_else(|| SynthError::UnknownFile {
            dataset: dataset.id.clone(),
            file_id: s.file_id.clone(),
        })?;
        warped.push(dt.warp.apply(*q));
    }
    Ok(stats::lcc(&dataset.mos(), &warped)?)
}
