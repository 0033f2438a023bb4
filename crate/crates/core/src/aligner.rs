//! Per-dataset score alignment appended to the estimator output.
//!
//! The estimator produces a score on the reference dataset's scale. Every
//! other dataset owns a small mapping
//!
//! ```text
//! a_j(s) = s + c + Σ_k v_k · tanh(w_k · s + b_k)
//! ```
//!
//! with `h` hidden units (`3h + 1` parameters). The unit skip makes the
//! mapping the identity when `v` and `c` are zero. The reference dataset has
//! no mapping and passes scores through untouched.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignerError {
    #[error("dataset '{0}' has no aligner mapping and is not the reference")]
    UnknownDataset(String),
    #[error("reference dataset '{0}' is not among the aligned datasets")]
    MissingReference(String),
    #[error("invalid aligner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignerConfig {
    #[serde(default = "default_hidden")]
    pub hidden_units: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub reference_id: String,
    #[serde(default)]
    pub fallback_reference_id: Option<String>,
}

fn default_hidden() -> usize {
    16
}

fn default_init_scale() -> f64 {
    1e-3
}

impl AlignerConfig {
    pub fn new(reference_id: impl Into<String>) -> Self {
        Self {
            hidden_units: default_hidden(),
            init_scale: default_init_scale(),
            reference_id: reference_id.into(),
            fallback_reference_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), AlignerError> {
        if self.hidden_units == 0 {
            return Err(AlignerError::Config("hidden_units must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(AlignerError::Config("init_scale must be >= 0".into()));
        }
        if self.fallback_reference_id.as_deref() == Some(self.reference_id.as_str()) {
            return Err(AlignerError::Config(
                "fallback_reference_id must differ from reference_id".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

impl Mapping {
    pub fn param_count(&self) -> usize {
        3 * self.w.len() + 1
    }

    pub fn apply(&self, s: f64) -> f64 {
        let mut out = s + self.c;
        for k in 0..self.w.len() {
            out += self.v[k] * (self.w[k] * s + self.b[k]).tanh();
        }
        out
    }

    /// Output, derivative with respect to the input score, and the
    /// parameter gradient (scaled by `upstream`) written into `grad` in
    /// `[w.., b.., v.., c]` order.
    pub(crate) fn apply_backward(&self, s: f64, upstream: f64, grad: &mut [f64]) -> (f64, f64) {
        let h = self.w.len();
        let mut out = s + self.c;
        let mut d_s = 1.0;
        for k in 0..h {
            let t = (self.w[k] * s + self.b[k]).tanh();
            let dt = 1.0 - t * t;
            out += self.v[k] * t;
            d_s += self.v[k] * dt * self.w[k];
            let g_pre = upstream * self.v[k] * dt;
            grad[k] += g_pre * s;
            grad[h + k] += g_pre;
            grad[2 * h + k] += upstream * t;
        }
        grad[3 * h] += upstream;
        (out, d_s)
    }

    fn flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.v);
        out.push(self.c);
    }

    fn set_flat(&mut self, src: &[f64]) {
        let h = self.w.len();
        self.w.copy_from_slice(&src[..h]);
        self.b.copy_from_slice(&src[h..2 * h]);
        self.v.copy_from_slice(&src[2 * h..3 * h]);
        self.c = src[3 * h];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoredAligner", into = "StoredAligner")]
pub struct AlignerParams {
    pub reference_id: String,
    pub mappings: BTreeMap<String, Mapping>,
    pub frozen: bool,
    pub config: AlignerConfig,
}

/// Serialized form: one flat `[w.., b.., v.., c]` array per dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredAligner {
    reference_id: String,
    frozen: bool,
    config: AlignerConfig,
    mappings: BTreeMap<String, Vec<f64>>,
}

impl From<AlignerParams> for StoredAligner {
    fn from(a: AlignerParams) -> Self {
        let mappings = a
            .mappings
            .iter()
            .map(|(id, m)| {
                let mut flat = Vec::with_capacity(m.param_count());
                m.flat(&mut flat);
                (id.clone(), flat)
            })
            .collect();
        Self {
            reference_id: a.reference_id,
            frozen: a.frozen,
            config: a.config,
            mappings,
        }
    }
}

impl TryFrom<StoredAligner> for AlignerParams {
    type Error = String;

    fn try_from(s: StoredAligner) -> Result<Self, Self::Error> {
        let h = s.config.hidden_units;
        if s.mappings.contains_key(&s.reference_id) {
            return Err(format!("reference '{}' must not have a mapping", s.reference_id));
        }
        let mut mappings = BTreeMap::new();
        for (id, flat) in s.mappings {
            if flat.len() != 3 * h + 1 {
                return Err(format!(
                    "mapping '{id}' has {} values, expected {}",
                    flat.len(),
                    3 * h + 1
                ));
            }
            let mut m = Mapping {
                w: vec![0.0; h],
                b: vec![0.0; h],
                v: vec![0.0; h],
                c: 0.0,
            };
            m.set_flat(&flat);
            mappings.insert(id, m);
        }
        Ok(Self {
            reference_id: s.reference_id,
            mappings,
            frozen: s.frozen,
            config: s.config,
        })
    }
}

/// Builds near-identity mappings for every non-reference id.
///
/// Each mapping draws from its own stream keyed by dataset id, so a dataset's
/// initial mapping does not depend on which other datasets are present.
pub fn init_aligner(
    cfg: &AlignerConfig,
    reference_id: &str,
    dataset_ids: &[String],
    seed: u64,
) -> Result<AlignerParams, AlignerError> {
    cfg.validate()?;
    if !dataset_ids.iter().any(|d| d == reference_id) {
        return Err(AlignerError::MissingReference(reference_id.to_string()));
    }
    let h = cfg.hidden_units;
    let mut mappings = BTreeMap::new();
    for id in dataset_ids.iter().filter(|d| *d != reference_id) {
        let mut rng = seed::derived_rng(seed, &["aligner", id]);
        let w: Vec<f64> = (0..h).map(|_| rng.random_range(-1.5..1.5)).collect();
        // centre each unit's transition inside the 1..5 score range
        let b = w
            .iter()
            .map(|wk| -3.0 * wk + rng.random_range(-1.0..1.0))
            .collect();
        let v = (0..h)
            .map(|_| cfg.init_scale * rng.random_range(-1.0..1.0) / h as f64)
            .collect();
        mappings.insert(id.clone(), Mapping { w, b, v, c: 0.0 });
    }
    Ok(AlignerParams {
        reference_id: reference_id.to_string(),
        mappings,
        frozen: false,
        config: cfg.clone(),
    })
}

impl AlignerParams {
    pub fn param_count(&self) -> usize {
        self.mappings.values().map(Mapping::param_count).sum()
    }

    /// True when `dataset_id` is the reference or has a mapping.
    pub fn knows(&self, dataset_id: &str) -> bool {
        dataset_id == self.reference_id || self.mappings.contains_key(dataset_id)
    }

    pub fn apply(&self, raw_score: f64, dataset_id: &str) -> Result<f64, AlignerError> {
        if dataset_id == self.reference_id {
            return Ok(raw_score);
        }
        self.mappings
            .get(dataset_id)
            .map(|m| m.apply(raw_score))
            .ok_or_else(|| AlignerError::UnknownDataset(dataset_id.to_string()))
    }

    /// Flat parameter vector, mappings in id order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.mappings.values() {
            m.flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.param_count(), "aligner flat length");
        let mut offset = 0;
        for m in self.mappings.values_mut() {
            let n = m.param_count();
            m.set_flat(&src[offset..offset + n]);
            offset += n;
        }
    }

    /// Offset of each mapping inside [`Self::flat`].
    pub(crate) fn offsets(&self) -> BTreeMap<&str, usize> {
        let mut offset = 0;
        self.mappings
            .iter()
            .map(|(id, m)| {
                let at = offset;
                offset += m.param_count();
                (id.as_str(), at)
            })
            .collect()
    }
}
