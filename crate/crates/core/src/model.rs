//! Feed-forward quality estimator with native double-precision training.
//!
//! The estimator maps a feature vector to one unconstrained score. When an
//! [`AlignerParams`] is attached, the training loss is taken on the aligned
//! score and gradients flow through the aligner into the estimator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aligner::{AlignerError, AlignerParams, Mapping};
use crate::corpus::Dataset;
use crate::seed;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("{0} data is empty")]
    EmptyData(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Aligner(#[from] AlignerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorArch {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl EstimatorArch {
    /// 8-32-16-1 tanh style network for `input_dim` features.
    pub fn toy(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: vec![32, 16],
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_layers.contains(&0) {
            return Err(ModelError::Config(
                "input_dim and hidden layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        for &width in self.hidden_layers.iter().chain(std::iter::once(&1)) {
            dims.push((fan_in, width));
            fan_in = width;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Row-major `out × in` weights plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn out_dim(&self) -> usize {
        self.biases.len()
    }

    fn in_dim(&self) -> usize {
        self.weights.len() / self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub arch: EstimatorArch,
    pub layers: Vec<Dense>,
}

pub fn init_estimator(arch: &EstimatorArch, seed: u64) -> EstimatorParams {
    let mut rng = seed::derived_rng(seed, &["estimator-init"]);
    let layers = arch
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            Dense {
                weights: (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-scale..scale))
                    .collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    EstimatorParams {
        arch: arch.clone(),
        layers,
    }
}

/// Per-layer activation buffers reused across samples.
#[derive(Debug, Clone)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    fn new(arch: &EstimatorArch) -> Self {
        let mut acts = vec![vec![0.0; arch.input_dim]];
        let mut widest = arch.input_dim;
        for (_, out) in arch.layer_dims() {
            acts.push(vec![0.0; out]);
            widest = widest.max(out);
        }
        Self {
            acts,
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }
}

impl EstimatorParams {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let dims = self.arch.layer_dims();
        let ok = dims.len() == self.layers.len()
            && dims
                .iter()
                .zip(&self.layers)
                .all(|(&(i, o), l)| l.biases.len() == o && l.weights.len() == i * o);
        if !ok {
            return Err(ModelError::Config("layer shapes do not match arch".into()));
        }
        if self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .any(|v| !v.is_finite())
        {
            return Err(ModelError::Config("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.param_count(), "estimator flat length");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
    }

    fn forward_into(&self, features: &[f64], scratch: &mut Scratch) -> f64 {
        scratch.acts[0].copy_from_slice(features);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = scratch.acts.split_at_mut(li + 1);
            let input = &prev[li];
            let output = &mut rest[0];
            let n_in = layer.in_dim();
            for (o, out) in output.iter_mut().enumerate() {
                let row = &layer.weights[o * n_in..(o + 1) * n_in];
                let pre = layer.biases[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                *out = if li == last {
                    pre
                } else {
                    self.arch.activation.apply(pre)
                };
            }
        }
        scratch.acts[self.layers.len()][0]
    }

    /// Accumulates `d_out · ∂score/∂θ` into `grad` (layout of [`Self::flat`])
    /// using the activations left in `scratch` by the last forward pass.
    fn backward_into(&self, d_out: f64, scratch: &mut Scratch, grad: &mut [f64]) {
        let offsets = self.layer_offsets();
        scratch.delta[0] = d_out;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
            let input = &scratch.acts[li];
            let base = offsets[li];
            for o in 0..n_out {
                let d = scratch.delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (gw, x) in g.iter_mut().zip(input) {
                    *gw += d * x;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if li == 0 {
                break;
            }
            let act = self.arch.activation;
            for (i, &x) in input.iter().enumerate().take(n_in) {
                let mut s = 0.0;
                for o in 0..n_out {
                    s += layer.weights[o * n_in + i] * scratch.delta[o];
                }
                scratch.delta_next[i] = s * act.derivative_from_output(x);
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let here = at;
                at += l.weights.len() + l.biases.len();
                here
            })
            .collect()
    }
}

/// Raw (reference-scale) score for one feature vector.
pub fn forward(params: &EstimatorParams, features: &[f64]) -> Result<f64, ModelError> {
    if features.len() != params.arch.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: params.arch.input_dim,
            found: features.len(),
        });
    }
    let mut scratch = Scratch::new(&params.arch);
    Ok(params.forward_into(features, &mut scratch))
}

#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    /// Index into [`GroupedData::ids`].
    pub group: usize,
    pub features: &'a [f64],
    pub mos: f64,
}

/// Samples from one or more datasets, tagged by dataset.
#[derive(Debug, Clone, Default)]
pub struct GroupedData<'a> {
    pub ids: Vec<String>,
    pub items: Vec<Item<'a>>,
}

impl<'a> GroupedData<'a> {
    /// Collects the listed sample indices of each dataset, in order.
    pub fn from_parts(parts: &[(&'a Dataset, &[usize])]) -> Self {
        let mut out = Self::default();
        for (g, (d, idx)) in parts.iter().enumerate() {
            out.ids.push(d.id.clone());
            out.items.extend(idx.iter().map(|&i| Item {
                group: g,
                features: &d.samples[i].features,
                mos: d.samples[i].mos,
            }));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub seed: u64,
    /// Fisher-averaged per-dataset validation LCC at which a frozen aligner
    /// starts learning; `null` trains the aligner from the first epoch.
    pub aligner_freeze_threshold: Option<f64>,
}

fn default_freeze() -> Option<f64> {
    Some(0.6)
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            learning_rate: 2e-3,
            optimizer: OptimizerKind::default(),
            patience: 10,
            seed: 0,
            aligner_freeze_threshold: default_freeze(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        if let Some(t) = self.aligner_freeze_threshold {
            // values above 1 are allowed and mean "never unfreeze"
            if !(t >= 0.0 && t.is_finite()) {
                return bad("aligner_freeze_threshold must be >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_corr: f64,
    pub aligner_frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_corr,aligner_frozen\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_corr, e.aligner_frozen
            )
            .expect("write to string");
        }
        out
    }

    /// SHA-256 of the CSV form, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

/// How each group's score reaches the loss.
#[derive(Clone, Copy)]
enum Route<'p> {
    Identity,
    Mapped { mapping: &'p Mapping, offset: usize },
}

fn routes<'p>(
    aligner: Option<&'p AlignerParams>,
    ids: &[String],
) -> Result<Vec<Route<'p>>, ModelError> {
    let Some(a) = aligner else {
        return Ok(vec![Route::Identity; ids.len()]);
    };
    let offsets = a.offsets();
    ids.iter()
        .map(|id| {
            if *id == a.reference_id {
                Ok(Route::Identity)
            } else if let Some(m) = a.mappings.get(id) {
                Ok(Route::Mapped {
                    mapping: m,
                    offset: offsets[id.as_str()],
                })
            } else {
                Err(AlignerError::UnknownDataset(id.clone()).into())
            }
        })
        .collect()
}

/// Mean squared error over `idx` and, when `grads` is given, its gradient
/// with respect to estimator and aligner parameters (overwritten).
fn loss_and_grad(
    est: &EstimatorParams,
    routes: &[Route<'_>],
    data: &GroupedData<'_>,
    idx: &[usize],
    scratch: &mut Scratch,
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    if let Some((ge, ga)) = grads.as_mut() {
        ge.fill(0.0);
        ga.fill(0.0);
    }
    let scale = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let item = data.items[i];
        let raw = est.forward_into(item.features, scratch);
        match grads.as_mut() {
            None => {
                let out = match routes[item.group] {
                    Route::Identity => raw,
                    Route::Mapped { mapping, .. } => mapping.apply(raw),
                };
                loss += (out - item.mos).powi(2);
            }
            Some((ge, ga)) => {
                let (out, d_raw) = match routes[item.group] {
                    Route::Identity => (raw, 1.0),
                    Route::Mapped { mapping, offset } => {
                        let out = mapping.apply(raw);
                        let upstream = 2.0 * (out - item.mos) * scale;
                        let n = mapping.param_count();
                        mapping.apply_backward(raw, upstream, &mut ga[offset..offset + n])
                    }
                };
                let err = out - item.mos;
                loss += err * err;
                est.backward_into(2.0 * err * scale * d_raw, scratch, ge);
            }
        }
    }
    loss * scale
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for k in 0..params.len() {
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * grad[k];
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    params[k] -= self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Aligned predictions for every item, in item order.
fn predictions(
    est: &EstimatorParams,
    routes: &[Route<'_>],
    data: &GroupedData<'_>,
    scratch: &mut Scratch,
) -> Vec<f64> {
    data.items
        .iter()
        .map(|item| {
            let raw = est.forward_into(item.features, scratch);
            match routes[item.group] {
                Route::Identity => raw,
                Route::Mapped { mapping, .. } => mapping.apply(raw),
            }
        })
        .collect()
}

/// Fisher-averaged per-dataset LCC. Datasets whose correlation is undefined
/// contribute zero.
pub fn fisher_mean_lcc(pred: &[f64], data: &GroupedData<'_>) -> f64 {
    let mut per_group: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); data.ids.len()];
    for (p, item) in pred.iter().zip(&data.items) {
        per_group[item.group].0.push(*p);
        per_group[item.group].1.push(item.mos);
    }
    let zs: Vec<f64> = per_group
        .iter()
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, y)| stats::lcc(p, y).map(stats::fisher).unwrap_or(0.0))
        .collect();
    if zs.is_empty() {
        return 0.0;
    }
    stats::inv_fisher(zs.iter().sum::<f64>() / zs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EstimatorParams,
    pub aligner: Option<AlignerParams>,
    pub history: TrainHistory,
}

/// Mini-batch training on mean squared error.
///
/// Batch order depends only on `(cfg.seed, epoch)`. The returned parameters
/// are those of the epoch with the lowest validation loss. With an aligner
/// and a freeze threshold, aligner parameters stay fixed until the first
/// epoch whose validation correlation reaches the threshold.
pub fn train(
    params: EstimatorParams,
    train_data: &GroupedData<'_>,
    val_data: &GroupedData<'_>,
    cfg: &TrainConfig,
    aligner: Option<AlignerParams>,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    params.check_shapes()?;
    if train_data.is_empty() {
        return Err(ModelError::EmptyData("training"));
    }
    if val_data.is_empty() {
        return Err(ModelError::EmptyData("validation"));
    }
    for item in train_data.items.iter().chain(&val_data.items) {
        if item.features.len() != params.arch.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: params.arch.input_dim,
                found: item.features.len(),
            });
        }
    }
    // fail early on unregistered datasets
    routes(aligner.as_ref(), &train_data.ids)?;
    routes(aligner.as_ref(), &val_data.ids)?;

    let mut est = params;
    let mut al = aligner;
    let mut frozen = al.is_some() && cfg.aligner_freeze_threshold.is_some();
    let mut est_flat = est.flat();
    let mut al_flat = al.as_ref().map(AlignerParams::flat).unwrap_or_default();
    let mut est_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, est_flat.len());
    let mut al_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, al_flat.len());
    let mut ge = vec![0.0; est_flat.len()];
    let mut ga = vec![0.0; al_flat.len()];
    let mut scratch = Scratch::new(&est.arch);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, EstimatorParams, Option<AlignerParams>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let mut rng = seed::derived_rng(cfg.seed, &["batch-order", &epoch.to_string()]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let frozen_this_epoch = frozen;
        let mut sse = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let r = routes(al.as_ref(), &train_data.ids)?;
            let loss = loss_and_grad(&est, &r, train_data, batch, &mut scratch, Some((&mut ge, &mut ga)));
            if !loss.is_finite() || ge.iter().chain(&ga).any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { epoch, batch: b });
            }
            sse += loss * batch.len() as f64;
            est_opt.step(&mut est_flat, &ge);
            est.set_flat(&est_flat);
            if let Some(a) = al.as_mut() {
                if !frozen {
                    al_opt.step(&mut al_flat, &ga);
                    a.set_flat(&al_flat);
                }
            }
        }
        let train_loss = sse / train_data.len() as f64;

        let r = routes(al.as_ref(), &val_data.ids)?;
        let pred = predictions(&est, &r, val_data, &mut scratch);
        let val_loss = pred
            .iter()
            .zip(&val_data.items)
            .map(|(p, it)| (p - it.mos).powi(2))
            .sum::<f64>()
            / val_data.len() as f64;
        if !val_loss.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        let val_corr = fisher_mean_lcc(&pred, val_data);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_corr,
            aligner_frozen: frozen_this_epoch && al.is_some(),
        });

        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            let mut snapshot = al.clone();
            if let Some(a) = snapshot.as_mut() {
                a.frozen = frozen;
            }
            best = Some((val_loss, est.clone(), snapshot));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if frozen && cfg.aligner_freeze_threshold.is_some_and(|t| val_corr >= t) {
            frozen = false;
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    let (_, params, aligner) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        aligner,
        history,
    })
}

/// Largest relative difference between the analytic gradient of the
/// batch MSE and central finite differences, over every estimator and
/// aligner parameter. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    params: &EstimatorParams,
    aligner: Option<&AlignerParams>,
    batch: &GroupedData<'_>,
    eps: f64,
) -> Result<f64, ModelError> {
    assert!((1e-8..=1e-3).contains(&eps), "eps outside [1e-8, 1e-3]");
    if batch.is_empty() {
        return Err(ModelError::EmptyData("batch"));
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Scratch::new(&params.arch);
    let r = routes(aligner, &batch.ids)?;
    let mut ge = vec![0.0; params.param_count()];
    let mut ga = vec![0.0; aligner.map_or(0, AlignerParams::param_count)];
    loss_and_grad(params, &r, batch, &idx, &mut scratch, Some((&mut ge, &mut ga)));

    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;

    let base = params.flat();
    let mut probe = params.clone();
    for k in 0..base.len() {
        let mut shifted = base.clone();
        shifted[k] = base[k] + eps;
        probe.set_flat(&shifted);
        let up = loss_and_grad(&probe, &r, batch, &idx, &mut scratch, None);
        shifted[k] = base[k] - eps;
        probe.set_flat(&shifted);
        let down = loss_and_grad(&probe, &r, batch, &idx, &mut scratch, None);
        worst = worst.max(rel(ge[k], (up - down) / (2.0 * eps)));
    }

    if let Some(a) = aligner {
        let base = a.flat();
        let mut probe = a.clone();
        for k in 0..base.len() {
            let mut shifted = base.clone();
            shifted[k] = base[k] + eps;
            probe.set_flat(&shifted);
            let up = loss_and_grad(params, &routes(Some(&probe), &batch.ids)?, batch, &idx, &mut scratch, None);
            shifted[k] = base[k] - eps;
            probe.set_flat(&shifted);
            let down = loss_and_grad(params, &routes(Some(&probe), &batch.ids)?, batch, &idx, &mut scratch, None);
            worst = worst.max(rel(ga[k], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Full-batch MSE, exposed for optimizer checks.
pub fn batch_loss(
    params: &EstimatorParams,
    aligner: Option<&AlignerParams>,
    batch: &GroupedData<'_>,
) -> Result<f64, ModelError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Scratch::new(&params.arch);
    let r = routes(aligner, &batch.ids)?;
    Ok(loss_and_grad(params, &r, batch, &idx, &mut scratch, None))
}

/// One full-batch plain gradient step on estimator and aligner.
pub fn sgd_step(
    params: &mut EstimatorParams,
    aligner: Option<&mut AlignerParams>,
    batch: &GroupedData<'_>,
    learning_rate: f64,
) -> Result<(), ModelError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Scratch::new(&params.arch);
    let mut ge = vec![0.0; params.param_count()];
    let (mut ga, al_flat) = match aligner.as_deref() {
        Some(a) => (vec![0.0; a.param_count()], a.flat()),
        None => (Vec::new(), Vec::new()),
    };
    {
        let r = routes(aligner.as_deref(), &batch.ids)?;
        loss_and_grad(params, &r, batch, &idx, &mut scratch, Some((&mut ge, &mut ga)));
    }
    let flat: Vec<f64> = params
        .flat()
        .iter()
        .zip(&ge)
        .map(|(p, g)| p - learning_rate * g)
        .collect();
    params.set_flat(&flat);
    if let Some(a) = aligner {
        let flat: Vec<f64> = al_flat.iter().zip(&ga).map(|(p, g)| p - learning_rate * g).collect();
        a.set_flat(&flat);
    }
    Ok(())
}

/// Score on a dataset's scale: aligned when the aligner knows the dataset,
/// reference scale otherwise.
pub fn predict(
    params: &EstimatorParams,
    aligner: Option<&AlignerParams>,
    features: &[f64],
    dataset_id: &str,
) -> Result<f64, ModelError> {
    let raw = forward(params, features)?;
    match aligner {
        Some(a) if a.knows(dataset_id) => Ok(a.apply(raw, dataset_id)?),
        _ => Ok(raw),
    }
}

/// Serialized trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub arch: EstimatorArch,
    pub layers: Vec<Dense>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligner: Option<AlignerParams>,
    pub training_datasets: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TrainedModel {
    pub fn new(params: EstimatorParams, aligner: Option<AlignerParams>, training_datasets: Vec<String>) -> Self {
        Self {
            arch: params.arch,
            layers: params.layers,
            aligner,
            training_datasets,
            metadata: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> Result<EstimatorParams, ModelError> {
        let p = EstimatorParams {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
        };
        p.check_shapes()?;
        Ok(p)
    }
}
