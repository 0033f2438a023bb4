//! The Dataset Concealment training/evaluation matrix.
//!
//! For `N` datasets the matrix holds `N` Individual variants (one dataset
//! each), one Global variant (all datasets) and `N` Concealed variants (all
//! but one). Every dataset is split once per replication index, and all
//! variants of that replication share the split, so differences between
//! `ρ_I`, `ρ_G` and `ρ_C` come from the training sets alone.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::{init_aligner, AlignerConfig, AlignerError};
use crate::corpus::{split_dataset, Corpus, CorpusError, SplitIndices, SplitSpec};
use crate::model::{
    forward, init_estimator, predict, train, EstimatorArch, GroupedData, ModelError, TrainConfig,
    TrainHistory, TrainedModel,
};
use crate::seed;
use crate::stats::{
    self, aggregate, gaps, significant_difference, AggregateCorrelation, CorrelationKind,
    CorrelationSet, GapResult, Significance, StatsError,
};

pub const RUNS_FILE: &str = "runs.jsonl";

#[derive(Debug, Error)]
pub enum DscError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("concealment leakage: {job} trains on {count} samples of '{dataset}'")]
    Leakage {
        job: String,
        dataset: String,
        count: usize,
    },
    #[error("dataset '{0}' also appears in the model's training corpus")]
    NotUnseen(String),
    #[error("feature dimension {found} does not match the model's {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aligner(#[from] AlignerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dataset", rename_all = "lowercase")]
pub enum VariantKind {
    Individual(String),
    Global,
    Concealed(String),
}

impl VariantKind {
    pub fn family(&self) -> Family {
        match self {
            VariantKind::Individual(_) => Family::Individual,
            VariantKind::Global => Family::Global,
            VariantKind::Concealed(_) => Family::Concealed,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::Individual(d) => write!(f, "individual:{d}"),
            VariantKind::Global => f.write_str("global"),
            VariantKind::Concealed(d) => write!(f, "concealed:{d}"),
        }
    }
}

/// Variant family, without the dataset a variant is tied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Individual,
    Global,
    Concealed,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Individual, Family::Global, Family::Concealed];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Individual => "individual",
            Family::Global => "global",
            Family::Concealed => "concealed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conventional,
    Aligned,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Conventional => "conventional",
            Mode::Aligned => "aligned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replications {
    pub individual: usize,
    pub global: usize,
    pub concealed: usize,
}

impl Default for Replications {
    fn default() -> Self {
        Self {
            individual: 10,
            global: 10,
            concealed: 2,
        }
    }
}

impl Replications {
    pub fn uniform(n: usize) -> Self {
        Self {
            individual: n,
            global: n,
            concealed: n,
        }
    }

    pub fn max(&self) -> usize {
        self.individual.max(self.global).max(self.concealed)
    }

    pub fn job_count(&self, n_datasets: usize) -> usize {
        self.individual * n_datasets + self.global + self.concealed * n_datasets
    }
}

/// Identifies a job independent of its seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobKey {
    pub variant: VariantKind,
    pub mode: Mode,
    pub replication: usize,
}

impl fmt::Display for JobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/rep{}", self.variant, self.mode.as_str(), self.replication)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub key: JobKey,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
    /// Aligner reference for aligned multi-dataset jobs.
    pub reference_id: Option<String>,
}

/// Expands the variant matrix for one mode into jobs.
///
/// Seeds depend on the experiment seed, variant and replication only, so
/// conventional and aligned runs of the same variant share initialization
/// and batch order.
pub fn plan(
    corpus: &Corpus,
    mode: Mode,
    reps: &Replications,
    aligner: Option<&AlignerConfig>,
    experiment_seed: u64,
) -> Result<Vec<Job>, DscError> {
    let ids = corpus.ids();
    if ids.len() < 2 {
        return Err(DscError::Config(format!(
            "need at least 2 datasets, corpus has {}",
            ids.len()
        )));
    }
    if reps.individual == 0 || reps.global == 0 || reps.concealed == 0 {
        return Err(DscError::Config("replication counts must be positive".into()));
    }
    let aligner = match mode {
        Mode::Conventional => None,
        Mode::Aligned => {
            let cfg = aligner
                .ok_or_else(|| DscError::Config("aligned mode needs an aligner config".into()))?;
            cfg.validate()?;
            if !ids.contains(&cfg.reference_id) {
                return Err(DscError::Config(format!(
                    "reference dataset '{}' is not in the corpus",
                    cfg.reference_id
                )));
            }
            Some(cfg)
        }
    };
    let make = |variant: VariantKind, replication: usize, train_ids: Vec<String>, eval_ids: Vec<String>| -> Result<Job, DscError> {
        let seed = seed::derive(experiment_seed, &["job", &variant.to_string(), &replication.to_string()]);
        let reference_id = match (aligner, &variant) {
            (None, _) | (Some(_), VariantKind::Individual(_)) => None,
            (Some(cfg), VariantKind::Concealed(hidden)) if *hidden == cfg.reference_id => {
                let fallback = cfg.fallback_reference_id.clone().ok_or_else(|| {
                    DscError::Config(format!(
                        "reference '{hidden}' is concealed and no fallback reference is configured"
                    ))
                })?;
                if !train_ids.contains(&fallback) {
                    return Err(DscError::Config(format!(
                        "fallback reference '{fallback}' is not available when concealing '{hidden}'"
                    )));
                }
                Some(fallback)
            }
            (Some(cfg), _) => Some(cfg.reference_id.clone()),
        };
        Ok(Job {
            key: JobKey {
                variant,
                mode,
                replication,
            },
            seed,
            train_ids,
            eval_ids,
            reference_id,
        })
    };

    let mut jobs = Vec::with_capacity(reps.job_count(ids.len()));
    for id in &ids {
        for r in 0..reps.individual {
            jobs.push(make(VariantKind::Individual(id.clone()), r, vec![id.clone()], vec![id.clone()])?);
        }
    }
    for r in 0..reps.global {
        jobs.push(make(VariantKind::Global, r, ids.clone(), ids.clone())?);
    }
    for id in &ids {
        let rest: Vec<String> = ids.iter().filter(|d| *d != id).cloned().collect();
        for r in 0..reps.concealed {
            jobs.push(make(VariantKind::Concealed(id.clone()), r, rest.clone(), vec![id.clone()])?);
        }
    }
    Ok(jobs)
}

/// Per-replication splits of every dataset, keyed by dataset id.
#[derive(Debug, Clone)]
pub struct SplitTable {
    splits: Vec<BTreeMap<String, SplitIndices>>,
}

impl SplitTable {
    /// Splits every dataset once per replication index. The split seed for
    /// replication `r` is derived from `spec.seed` and `r`.
    pub fn build(corpus: &Corpus, spec: &SplitSpec, replications: usize) -> Result<Self, DscError> {
        let mut splits = Vec::with_capacity(replications);
        for r in 0..replications {
            let rep_spec = SplitSpec {
                seed: seed::derive(spec.seed, &["replication", &r.to_string()]),
                ..*spec
            };
            let mut by_id = BTreeMap::new();
            for d in &corpus.datasets {
                by_id.insert(d.id.clone(), split_dataset(d, &rep_spec)?);
            }
            splits.push(by_id);
        }
        Ok(Self { splits })
    }

    pub fn get(&self, replication: usize, dataset: &str) -> Option<&SplitIndices> {
        self.splits.get(replication)?.get(dataset)
    }

    pub fn replications(&self) -> usize {
        self.splits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: VariantKind,
    pub mode: Mode,
    pub dataset_id: String,
    pub replication: usize,
    pub lcc: f64,
    pub srcc: f64,
    pub seed: u64,
    pub history_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobStatus {
    Completed {
        results: Vec<RunResult>,
        /// Absent for jobs restored from `runs.jsonl`.
        history: Option<TrainHistory>,
        model: Option<Box<TrainedModel>>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub job: Job,
    pub status: JobStatus,
}

impl JobOutcome {
    pub fn results(&self) -> &[RunResult] {
        match &self.status {
            JobStatus::Completed { results, .. } => results,
            JobStatus::Failed { .. } => &[],
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, JobStatus::Failed { .. })
    }
}

#[derive(Debug, Clone)]
pub struct ExecuteConfig {
    pub arch: EstimatorArch,
    pub train: TrainConfig,
    pub aligner: Option<AlignerConfig>,
    pub parallelism: usize,
}

/// Confirms that a Concealed job's training data holds nothing from the
/// concealed dataset.
pub fn check_leakage(job: &Job, train_data: &GroupedData<'_>, corpus: &Corpus) -> Result<(), DscError> {
    let VariantKind::Concealed(hidden) = &job.key.variant else {
        return Ok(());
    };
    let hidden_features: HashSet<*const f64> = corpus
        .dataset(hidden)
        .map(|d| d.samples.iter().map(|s| s.features.as_ptr()).collect())
        .unwrap_or_default();
    let count = train_data
        .items
        .iter()
        .filter(|it| train_data.ids[it.group] == *hidden || hidden_features.contains(&it.features.as_ptr()))
        .count();
    if count > 0 {
        return Err(DscError::Leakage {
            job: job.key.to_string(),
            dataset: hidden.clone(),
            count,
        });
    }
    Ok(())
}

fn parts<'a>(
    corpus: &'a Corpus,
    splits: &'a SplitTable,
    ids: &[String],
    replication: usize,
    pick: fn(&SplitIndices) -> &[usize],
) -> Result<GroupedData<'a>, DscError> {
    let mut v = Vec::with_capacity(ids.len());
    for id in ids {
        let d = corpus
            .dataset(id)
            .ok_or_else(|| DscError::Config(format!("unknown dataset '{id}'")))?;
        let s = splits
            .get(replication, id)
            .ok_or_else(|| DscError::Config(format!("no split for '{id}' at replication {replication}")))?;
        v.push((d, pick(s)));
    }
    Ok(GroupedData::from_parts(&v))
}

/// Trains one job and evaluates it on the test split of each target
/// dataset.
pub fn run_job(job: &Job, corpus: &Corpus, splits: &SplitTable, cfg: &ExecuteConfig) -> Result<JobStatus, DscError> {
    let r = job.key.replication;
    let train_data = parts(corpus, splits, &job.train_ids, r, |s| &s.train)?;
    let val_data = parts(corpus, splits, &job.train_ids, r, |s| &s.val)?;
    check_leakage(job, &train_data, corpus)?;

    let params = init_estimator(&cfg.arch, seed::derive(job.seed, &["init"]));
    let aligner = match (&job.reference_id, &cfg.aligner) {
        (Some(reference), Some(acfg)) => Some(init_aligner(acfg, reference, &job.train_ids, job.seed)?),
        (Some(_), None) => return Err(DscError::Config("aligned job without aligner config".into())),
        (None, _) => None,
    };
    let train_cfg = TrainConfig {
        seed: seed::derive(job.seed, &["batches"]),
        ..cfg.train.clone()
    };
    let outcome = train(params, &train_data, &val_data, &train_cfg, aligner)?;
    let digest = outcome.history.digest();

    let mut results = Vec::with_capacity(job.eval_ids.len());
    for id in &job.eval_ids {
        let d = corpus
            .dataset(id)
            .ok_or_else(|| DscError::Config(format!("unknown dataset '{id}'")))?;
        let test = &splits
            .get(r, id)
            .ok_or_else(|| DscError::Config(format!("no split for '{id}'")))?
            .test;
        let mut pred = Vec::with_capacity(test.len());
        let mut mos = Vec::with_capacity(test.len());
        for &i in test {
            let s = &d.samples[i];
            // a concealed dataset has no mapping; score it on the reference scale
            let score = match &job.key.variant {
                VariantKind::Concealed(_) => forward(&outcome.params, &s.features)?,
                _ => predict(&outcome.params, outcome.aligner.as_ref(), &s.features, id)?,
            };
            pred.push(score);
            mos.push(s.mos);
        }
        results.push(RunResult {
            variant: job.key.variant.clone(),
            mode: job.key.mode,
            dataset_id: id.clone(),
            replication: r,
            lcc: stats::lcc(&pred, &mos)?,
            srcc: stats::srcc(&pred, &mos)?,
            seed: job.seed,
            history_digest: digest.clone(),
        });
    }
    let mut model = TrainedModel::new(outcome.params, outcome.aligner, job.train_ids.clone());
    model.metadata.insert("job".into(), serde_json::Value::String(job.key.to_string()));
    model.metadata.insert("seed".into(), serde_json::json!(job.seed));
    Ok(JobStatus::Completed {
        results,
        history: Some(outcome.history),
        model: Some(Box::new(model)),
    })
}

/// Runs every job on a pool of `cfg.parallelism` workers. Outcomes come back
/// in job order and do not depend on the worker count. `on_done` is called
/// from worker threads as each job finishes.
pub fn execute<F>(
    jobs: &[Job],
    corpus: &Corpus,
    splits: &SplitTable,
    cfg: &ExecuteConfig,
    on_done: F,
) -> Result<Vec<JobOutcome>, DscError>
where
    F: Fn(&JobOutcome) + Sync,
{
    let needed = jobs.iter().map(|j| j.key.replication + 1).max().unwrap_or(0);
    if needed > splits.replications() {
        return Err(DscError::Config(format!(
            "jobs need {needed} replications of splits, table has {}",
            splits.replications()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| DscError::Config(e.to_string()))?;
    let outcomes = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let status = run_job(job, corpus, splits, cfg)
                    .unwrap_or_else(|e| JobStatus::Failed { error: e.to_string() });
                let outcome = JobOutcome {
                    job: job.clone(),
                    status,
                };
                on_done(&outcome);
                outcome
            })
            .collect()
    });
    Ok(outcomes)
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunRecord {
    Ok(RunResult),
    Failed {
        variant: VariantKind,
        mode: Mode,
        replication: usize,
        seed: u64,
        error: String,
    },
}

impl RunRecord {
    pub fn key(&self) -> JobKey {
        match self {
            RunRecord::Ok(r) => JobKey {
                variant: r.variant.clone(),
                mode: r.mode,
                replication: r.replication,
            },
            RunRecord::Failed {
                variant,
                mode,
                replication,
                ..
            } => JobKey {
                variant: variant.clone(),
                mode: *mode,
                replication: *replication,
            },
        }
    }
}

pub fn records_of(outcome: &JobOutcome) -> Vec<RunRecord> {
    match &outcome.status {
        JobStatus::Completed { results, .. } => results.iter().cloned().map(RunRecord::Ok).collect(),
        JobStatus::Failed { error } => vec![RunRecord::Failed {
            variant: outcome.job.key.variant.clone(),
            mode: outcome.job.key.mode,
            replication: outcome.job.key.replication,
            seed: outcome.job.seed,
            error: error.clone(),
        }],
    }
}

pub fn record_line(record: &RunRecord) -> String {
    let mut s = serde_json::to_string(record).expect("record serializes");
    s.push('\n');
    s
}

/// Reads `runs.jsonl`, skipping a torn final line.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, DscError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(DscError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        }
    };
    let mut out = Vec::new();
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| DscError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => break,
            Err(e) => {
                return Err(DscError::Io {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(out)
}

/// Rebuilds outcomes for jobs fully covered by earlier records.
pub fn restore_outcomes(jobs: &[Job], records: &[RunRecord]) -> Vec<JobOutcome> {
    let mut by_key: BTreeMap<JobKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_key.entry(r.key()).or_default().push(r);
    }
    let mut out = Vec::new();
    for job in jobs {
        let Some(recs) = by_key.get(&job.key) else {
            continue;
        };
        if let Some(RunRecord::Failed { error, seed, .. }) =
            recs.iter().find(|r| matches!(r, RunRecord::Failed { .. })).copied()
        {
            if *seed == job.seed {
                out.push(JobOutcome {
                    job: job.clone(),
                    status: JobStatus::Failed { error: error.clone() },
                });
            }
            continue;
        }
        let mut results = Vec::new();
        for id in &job.eval_ids {
            if let Some(RunRecord::Ok(r)) = recs
                .iter()
                .find(|r| matches!(r, RunRecord::Ok(x) if x.dataset_id == *id && x.seed == job.seed))
            {
                results.push(r.clone());
            }
        }
        if results.len() == job.eval_ids.len() {
            out.push(JobOutcome {
                job: job.clone(),
                status: JobStatus::Completed {
                    results,
                    history: None,
                    model: None,
                },
            });
        }
    }
    out
}

/// Writes outcomes to `runs.jsonl` in the given (job) order.
pub fn write_records(path: &Path, outcomes: &[JobOutcome]) -> Result<(), DscError> {
    let io = |e: std::io::Error| DscError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = fs::File::create(path).map_err(io)?;
    for o in outcomes {
        for r in records_of(o) {
            f.write_all(record_line(&r).as_bytes()).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenResult {
    pub dataset_id: String,
    pub n: usize,
    pub correlation: Result<(f64, f64), String>,
}

/// Scores datasets that were never part of training, on the reference
/// scale, and correlates per dataset.
pub fn infer_unseen(model: &TrainedModel, unseen: &Corpus) -> Result<Vec<UnseenResult>, DscError> {
    let params = model.params()?;
    if !unseen.datasets.is_empty() && unseen.feature_dim != params.arch.input_dim {
        return Err(DscError::Dimension {
            expected: params.arch.input_dim,
            found: unseen.feature_dim,
        });
    }
    let trained: BTreeSet<&str> = model.training_datasets.iter().map(String::as_str).collect();
    if let Some(d) = unseen.datasets.iter().find(|d| trained.contains(d.id.as_str())) {
        return Err(DscError::NotUnseen(d.id.clone()));
    }
    let mut out = Vec::with_capacity(unseen.datasets.len());
    for d in &unseen.datasets {
        let pred = d
            .samples
            .iter()
            .map(|s| forward(&params, &s.features))
            .collect::<Result<Vec<_>, _>>()?;
        let mos = d.mos();
        let correlation = stats::lcc(&pred, &mos)
            .and_then(|l| stats::srcc(&pred, &mos).map(|s| (l, s)))
            .map_err(|e| e.to_string());
        out.push(UnseenResult {
            dataset_id: d.id.clone(),
            n: d.len(),
            correlation,
        });
    }
    Ok(out)
}

/// Aggregated correlations behind one (dataset, family, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub lcc: AggregateCorrelation,
    pub srcc: AggregateCorrelation,
    pub lcc_values: Vec<f64>,
    pub srcc_values: Vec<f64>,
}

impl CellStats {
    fn from_results(results: &[&RunResult]) -> Result<Self, StatsError> {
        let mut sorted: Vec<&RunResult> = results.to_vec();
        sorted.sort_by_key(|r| r.replication);
        let lcc_values: Vec<f64> = sorted.iter().map(|r| r.lcc).collect();
        let srcc_values: Vec<f64> = sorted.iter().map(|r| r.srcc).collect();
        Ok(Self {
            lcc: aggregate(&CorrelationSet::new(CorrelationKind::Lcc, lcc_values.clone())?),
            srcc: aggregate(&CorrelationSet::new(CorrelationKind::Srcc, srcc_values.clone())?),
            lcc_values,
            srcc_values,
        })
    }

    pub fn lcc_set(&self) -> CorrelationSet {
        CorrelationSet {
            kind: CorrelationKind::Lcc,
            values: self.lcc_values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum Cell {
    Present(CellStats),
    Missing { reason: String },
}

impl Cell {
    pub fn stats(&self) -> Option<&CellStats> {
        match self {
            Cell::Present(s) => Some(s),
            Cell::Missing { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset_id: String,
    pub mode: Mode,
    pub individual: Cell,
    pub global: Cell,
    pub concealed: Cell,
    /// LCC-based gaps; absent when any of the three cells is missing.
    pub gaps: Option<GapResult>,
}

impl DatasetRow {
    pub fn cell(&self, family: Family) -> &Cell {
        match family {
            Family::Individual => &self.individual,
            Family::Global => &self.global,
            Family::Concealed => &self.concealed,
        }
    }
}

/// Aligned minus conventional for one (dataset, family) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignerEffect {
    pub dataset_id: String,
    pub family: Family,
    pub conventional: f64,
    pub aligned: f64,
    pub delta: f64,
    pub significance: Significance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscReport {
    pub datasets: Vec<String>,
    pub modes: Vec<Mode>,
    pub rows: Vec<DatasetRow>,
    pub aligner_effects: Vec<AlignerEffect>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl DscReport {
    pub fn row(&self, dataset: &str, mode: Mode) -> Option<&DatasetRow> {
        self.rows.iter().find(|r| r.dataset_id == dataset && r.mode == mode)
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.gaps.is_some())
    }
}

fn cell_for(outcomes: &[JobOutcome], dataset: &str, family: Family, mode: Mode) -> Cell {
    let relevant: Vec<&JobOutcome> = outcomes
        .iter()
        .filter(|o| o.job.key.mode == mode && o.job.key.variant.family() == family)
        .filter(|o| match &o.job.key.variant {
            VariantKind::Global => true,
            VariantKind::Individual(d) | VariantKind::Concealed(d) => d == dataset,
        })
        .collect();
    if relevant.is_empty() {
        return Cell::Missing {
            reason: "no runs".into(),
        };
    }
    if let Some(failed) = relevant.iter().find(|o| o.is_failed()) {
        return Cell::Missing {
            reason: format!("job {} failed", failed.job.key),
        };
    }
    let results: Vec<&RunResult> = relevant
        .iter()
        .flat_map(|o| o.results())
        .filter(|r| r.dataset_id == dataset)
        .collect();
    if results.is_empty() {
        return Cell::Missing {
            reason: "no results for dataset".into(),
        };
    }
    match CellStats::from_results(&results) {
        Ok(s) => Cell::Present(s),
        Err(e) => Cell::Missing { reason: e.to_string() },
    }
}

/// Aggregates outcomes into per-dataset cells, gaps, and (when both modes
/// are present) aligner effects. Failed jobs leave their cells missing.
pub fn assemble_report(outcomes: &[JobOutcome], datasets: &[String]) -> DscReport {
    let modes: Vec<Mode> = [Mode::Conventional, Mode::Aligned]
        .into_iter()
        .filter(|m| outcomes.iter().any(|o| o.job.key.mode == *m))
        .collect();
    let mut rows = Vec::new();
    for &mode in &modes {
        for id in datasets {
            let individual = cell_for(outcomes, id, Family::Individual, mode);
            let global = cell_for(outcomes, id, Family::Global, mode);
            let concealed = cell_for(outcomes, id, Family::Concealed, mode);
            let gaps = match (individual.stats(), global.stats(), concealed.stats()) {
                (Some(i), Some(g), Some(c)) => Some(gaps(&i.lcc, &g.lcc, &c.lcc, &i.lcc_set(), &g.lcc_set(), &c.lcc_set())),
                _ => None,
            };
            rows.push(DatasetRow {
                dataset_id: id.clone(),
                mode,
                individual,
                global,
                concealed,
                gaps,
            });
        }
    }

    let mut aligner_effects = Vec::new();
    if modes.len() == 2 {
        for id in datasets {
            for family in Family::ALL {
                let conv = rows
                    .iter()
                    .find(|r| r.dataset_id == *id && r.mode == Mode::Conventional)
                    .and_then(|r| r.cell(family).stats());
                let al = rows
                    .iter()
                    .find(|r| r.dataset_id == *id && r.mode == Mode::Aligned)
                    .and_then(|r| r.cell(family).stats());
                if let (Some(c), Some(a)) = (conv, al) {
                    aligner_effects.push(AlignerEffect {
                        dataset_id: id.clone(),
                        family,
                        conventional: c.lcc.r_avg,
                        aligned: a.lcc.r_avg,
                        delta: a.lcc.r_avg - c.lcc.r_avg,
                        significance: significant_difference(&a.lcc_set(), &c.lcc_set()),
                    });
                }
            }
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("gap_metric".into(), "lcc".into());
    metadata.insert(
        "concealed_evaluation".into(),
        "Concealed(j) is evaluated only on dataset j, using reference-scale scores".into(),
    );
    metadata.insert(
        "global_evaluation".into(),
        "Global is evaluated on every dataset, using aligned scores when an aligner is attached".into(),
    );
    metadata.insert(
        "freeze_criterion".into(),
        "Fisher-averaged per-dataset validation LCC".into(),
    );
    metadata.insert("se_method".into(), "sample standard deviation of per-replication z".into());
    metadata.insert(
        "failed_jobs".into(),
        outcomes
            .iter()
            .filter(|o| o.is_failed())
            .map(|o| o.job.key.to_string())
            .collect::<Vec<_>>()
            .into(),
    );
    DscReport {
        datasets: datasets.to_vec(),
        modes,
        rows,
        aligner_effects,
        metadata,
    }
}
