//! Experiment configuration and the end-to-end DSC run behind `dsc dsc`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::aligner::AlignerConfig;
use crate::corpus::{load_corpus, Corpus, CorpusError, SplitSpec};
use crate::model::{EstimatorArch, TrainConfig, TrainedModel};
use crate::protocol::{
    assemble_report, execute, infer_unseen, plan, read_records, record_line, records_of, restore_outcomes,
    write_records, DscError, DscReport, ExecuteConfig, Job, JobOutcome, JobStatus, Mode, Replications,
    SplitTable, VariantKind, RUNS_FILE,
};
use crate::report::{self, sha256_hex, ReportError};
use crate::stats::{aggregate, CorrelationKind, CorrelationSet};
use crate::synthgen::{generate, SynthConfig, SynthError, TRUTH_FILE};

pub const UNSEEN_FILE: &str = "unseen.csv";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("config field '{field}': {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    /// Directory readable by `load_corpus`.
    Path(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    /// Datasets held out from the DSC matrix and scored by every Global
    /// model.
    #[serde(default)]
    pub unseen: Vec<String>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Defaults to `EstimatorArch::toy(feature_dim)`.
    #[serde(default)]
    pub arch: Option<EstimatorArch>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub aligner: Option<AlignerConfig>,
    /// Defaults to both modes with an aligner config, conventional only
    /// without.
    #[serde(default)]
    pub modes: Option<Vec<Mode>>,
    #[serde(default)]
    pub replications: Replications,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn default_parallelism() -> usize {
    1
}

/// Parses JSON, naming the offending field on failure.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        field_err(if field == "." { "<root>".into() } else { field }, e.into_inner())
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_json(&text)
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let CorpusSource::Path(p) = &mut cfg.corpus {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate().map_err(|e| match e {
                SynthError::Config { field, message } => field_err(format!("corpus.synthetic.{field}"), message),
                other => field_err("corpus.synthetic", other),
            })?;
        }
        self.split.validate().map_err(|e| field_err("split", e))?;
        if let Some(a) = &self.arch {
            a.validate().map_err(|e| field_err("arch", e))?;
        }
        self.train.validate().map_err(|e| field_err("train", e))?;
        if let Some(a) = &self.aligner {
            a.validate().map_err(|e| field_err("aligner", e))?;
        }
        let r = &self.replications;
        if r.individual == 0 || r.global == 0 || r.concealed == 0 {
            return Err(field_err("replications", "counts must be positive"));
        }
        if self.parallelism == 0 {
            return Err(field_err("parallelism", "must be positive"));
        }
        if let Some(modes) = &self.modes {
            if modes.is_empty() {
                return Err(field_err("modes", "must not be empty"));
            }
            if modes.contains(&Mode::Aligned) && self.aligner.is_none() {
                return Err(field_err("modes", "aligned mode needs an aligner config"));
            }
        }
        Ok(())
    }

    pub fn resolved_modes(&self) -> Vec<Mode> {
        let mut modes = match &self.modes {
            Some(m) => m.clone(),
            None if self.aligner.is_some() => vec![Mode::Conventional, Mode::Aligned],
            None => vec![Mode::Conventional],
        };
        modes.sort();
        modes.dedup();
        modes
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dsc(#[from] DscError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for violated preconditions, 1 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Dsc(DscError::Config(_)) => 2,
            ExperimentError::Synth(SynthError::Config { .. }) => 2,
            ExperimentError::Dsc(
                DscError::NotUnseen(_) | DscError::Dimension { .. } | DscError::Leakage { .. },
            ) => 3,
            ExperimentError::Corpus(
                CorpusError::Validation { .. } | CorpusError::Dataset { .. } | CorpusError::DimensionMismatch { .. },
            )
            | ExperimentError::Dsc(DscError::Corpus(
                CorpusError::Validation { .. } | CorpusError::Dataset { .. } | CorpusError::DimensionMismatch { .. },
            )) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Overrides `ExperimentConfig::modes`.
    pub modes: Option<Vec<Mode>>,
    /// Overrides `ExperimentConfig::parallelism`.
    pub parallelism: Option<usize>,
    /// Restricts the matrix to these variant families.
    pub only: Option<Vec<crate::protocol::Family>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenSummary {
    pub mode: Mode,
    pub dataset_id: String,
    /// Global models that produced a correlation.
    pub n_models: usize,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub lcc_values: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub report: DscReport,
    pub outcomes: Vec<JobOutcome>,
    pub unseen: Vec<UnseenSummary>,
    pub files: Vec<PathBuf>,
}

/// Loads or generates the corpus. Returns it with the ground-truth JSON for
/// synthetic corpora.
pub fn materialize_corpus(source: &CorpusSource) -> Result<(Corpus, Option<Vec<u8>>), ExperimentError> {
    match source {
        CorpusSource::Path(p) => Ok((load_corpus(p)?, None)),
        CorpusSource::Synthetic(s) => {
            let (corpus, truth) = generate(s)?;
            let mut bytes = serde_json::to_vec_pretty(&truth).expect("truth serializes");
            bytes.push(b'\n');
            Ok((corpus, Some(bytes)))
        }
    }
}

fn model_file(job: &Job) -> Option<String> {
    match job.key.variant {
        VariantKind::Global => Some(format!(
            "global_{}_rep{}.json",
            job.key.mode.as_str(),
            job.key.replication
        )),
        _ => None,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn model_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(model).expect("model serializes");
    b.push(b'\n');
    b
}

/// Runs the configured DSC matrix and writes every output file.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let modes = opts.modes.clone().unwrap_or_else(|| cfg.resolved_modes());
    if modes.contains(&Mode::Aligned) && cfg.aligner.is_none() {
        return Err(field_err("modes", "aligned mode needs an aligner config").into());
    }
    let parallelism = opts.parallelism.unwrap_or(cfg.parallelism).max(1);

    let (full, truth) = materialize_corpus(&cfg.corpus)?;
    for id in &cfg.unseen {
        if full.dataset(id).is_none() {
            return Err(field_err("unseen", format!("dataset '{id}' is not in the corpus")).into());
        }
    }
    let unseen_ids: Vec<&str> = cfg.unseen.iter().map(String::as_str).collect();
    let (corpus, unseen) = full.split_off(&unseen_ids);
    let arch = cfg.arch.clone().unwrap_or_else(|| EstimatorArch::toy(corpus.feature_dim));
    if arch.input_dim != corpus.feature_dim {
        return Err(DscError::Dimension {
            expected: arch.input_dim,
            found: corpus.feature_dim,
        }
        .into());
    }

    let mut jobs = Vec::new();
    for &mode in &modes {
        jobs.extend(plan(&corpus, mode, &cfg.replications, cfg.aligner.as_ref(), cfg.seed)?);
    }
    if let Some(only) = &opts.only {
        jobs.retain(|j| only.contains(&j.key.variant.family()));
    }
    let splits = SplitTable::build(&corpus, &cfg.split, cfg.replications.max())?;

    let out = &cfg.output_dir;
    let models_dir = out.join(MODELS_DIR);
    fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    let runs_path = out.join(RUNS_FILE);

    let mut restored = Vec::new();
    if opts.resume {
        let records = read_records(&runs_path)?;
        restored = restore_outcomes(&jobs, &records)
            .into_iter()
            .filter(|o| match (&o.status, model_file(&o.job)) {
                (JobStatus::Completed { .. }, Some(name)) => models_dir.join(name).is_file(),
                _ => true,
            })
            .collect();
    }
    // start the log from the restored records so a torn line is dropped
    write_records(&runs_path, &restored)?;

    let done: std::collections::HashSet<_> = restored.iter().map(|o| o.job.key.clone()).collect();
    let pending: Vec<Job> = jobs.iter().filter(|j| !done.contains(&j.key)).cloned().collect();
    let exec_cfg = ExecuteConfig {
        arch: arch.clone(),
        train: cfg.train.clone(),
        aligner: cfg.aligner.clone(),
        parallelism,
    };
    let log = Mutex::new(
        fs::OpenOptions::new()
            .append(true)
            .open(&runs_path)
            .map_err(io_err(&runs_path))?,
    );
    let write_failure = Mutex::new(None::<ExperimentError>);
    let fresh = execute(&pending, &corpus, &splits, &exec_cfg, |o| {
        let result = (|| -> Result<(), ExperimentError> {
            if let (JobStatus::Completed { model: Some(m), .. }, Some(name)) = (&o.status, model_file(&o.job)) {
                write_atomic(&models_dir.join(name), &model_bytes(m))?;
            }
            let text: String = records_of(o).iter().map(record_line).collect();
            let mut f = log.lock().expect("log lock");
            f.write_all(text.as_bytes()).map_err(io_err(&runs_path))?;
            f.flush().map_err(io_err(&runs_path))
        })();
        if let Err(e) = result {
            write_failure.lock().expect("failure lock").get_or_insert(e);
        }
    })?;
    drop(log);
    if let Some(e) = write_failure.into_inner().expect("failure lock") {
        return Err(e);
    }

    // canonical job order, independent of completion order and resumption
    let mut by_key: BTreeMap<_, JobOutcome> = restored
        .into_iter()
        .chain(fresh)
        .map(|o| (o.job.key.clone(), o))
        .collect();
    let outcomes: Vec<JobOutcome> = jobs.iter().filter_map(|j| by_key.remove(&j.key)).collect();
    write_records(&runs_path, &outcomes)?;

    let unseen_summary = score_unseen(&outcomes, &unseen, &models_dir)?;
    let report = assemble_report(&outcomes, &corpus.ids());

    let mut extra_files = BTreeMap::new();
    extra_files.insert(UNSEEN_FILE.to_string(), unseen_csv(&unseen_summary)?);
    let mut files = Vec::new();
    if let Some(t) = truth {
        let p = out.join(TRUTH_FILE);
        fs::write(&p, &t).map_err(io_err(&p))?;
        files.push(p);
        extra_files.insert(TRUTH_FILE.to_string(), t);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    metadata.insert("modes".into(), serde_json::to_value(&modes).expect("modes serialize"));
    metadata.insert("jobs".into(), Value::from(outcomes.len()));
    metadata.insert(
        "failed_jobs".into(),
        Value::from(outcomes.iter().filter(|o| o.is_failed()).count()),
    );
    metadata.insert("runs_sha256".into(), Value::from(sha256_hex(&fs::read(&runs_path).map_err(io_err(&runs_path))?)));
    let mut model_digests = BTreeMap::new();
    for j in &jobs {
        if let Some(name) = model_file(j) {
            if let Ok(bytes) = fs::read(models_dir.join(&name)) {
                model_digests.insert(name, sha256_hex(&bytes));
            }
        }
    }
    metadata.insert("model_sha256".into(), serde_json::to_value(model_digests).expect("digests serialize"));
    metadata.insert("package_version".into(), Value::from(env!("CARGO_PKG_VERSION")));
    files.extend(report::emit(&report, out, &metadata, &extra_files)?);
    files.push(runs_path);

    Ok(ExperimentOutput {
        report,
        outcomes,
        unseen: unseen_summary,
        files,
    })
}

/// Scores the unseen datasets with every Global model, per mode.
fn score_unseen(outcomes: &[JobOutcome], unseen: &Corpus, models_dir: &Path) -> Result<Vec<UnseenSummary>, ExperimentError> {
    // (lcc values, srcc values, first error) per (mode, dataset)
    type Collected = (Vec<f64>, Vec<f64>, Option<String>);
    let mut per: BTreeMap<(Mode, String), Collected> = BTreeMap::new();
    if unseen.datasets.is_empty() {
        return Ok(Vec::new());
    }
    for o in outcomes {
        let JobStatus::Completed { model, .. } = &o.status else {
            continue;
        };
        let Some(name) = model_file(&o.job) else {
            continue;
        };
        let loaded;
        let model = match model {
            Some(m) => m.as_ref(),
            None => {
                let path = models_dir.join(name);
                loaded = read_json::<TrainedModel>(&path)?;
                &loaded
            }
        };
        for r in infer_unseen(model, unseen)? {
            let entry = per.entry((o.job.key.mode, r.dataset_id)).or_default();
            match r.correlation {
                Ok((l, s)) => {
                    entry.0.push(l);
                    entry.1.push(s);
                }
                Err(e) => {
                    entry.2.get_or_insert(e);
                }
            }
        }
    }
    let mut out = Vec::new();
    for ((mode, dataset_id), (lcc, srcc, error)) in per {
        let agg = |kind, v: &Vec<f64>| {
            CorrelationSet::new(kind, v.clone())
                .ok()
                .filter(|s| !s.is_empty())
                .map(|s| aggregate(&s).r_avg)
        };
        out.push(UnseenSummary {
            mode,
            dataset_id,
            n_models: lcc.len(),
            lcc: agg(CorrelationKind::Lcc, &lcc),
            srcc: agg(CorrelationKind::Srcc, &srcc),
            lcc_values: lcc,
            error,
        });
    }
    Ok(out)
}

fn unseen_csv(rows: &[UnseenSummary]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ExperimentError::Report(ReportError::Csv(e));
    w.write_record(["mode", "dataset_id", "n_models", "lcc_r_avg", "srcc_r_avg", "error"])
        .map_err(csv_err)?;
    let num = |x: Option<f64>| x.map(|v| report::round12(v).to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            r.dataset_id.clone(),
            r.n_models.to_string(),
            num(r.lcc),
            num(r.srcc),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| ExperimentError::Report(ReportError::Csv(e.into_error().into())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "corpus": {"synthetic": {
            "n_datasets": 2, "samples_per_dataset": 40, "feature_dim": 3,
            "warps": [{"kind": "identity"}, {"kind": "affine", "params": [1.0, 0.5]}],
            "vote_count": 5, "vote_noise_sd": 0.5, "feature_noise_sd": 0.0, "seed": 1
        }},
        "output_dir": "out"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg: ExperimentConfig = parse_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.replications, Replications::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.split, SplitSpec::default());
        assert_eq!(cfg.parallelism, 1);
        assert_eq!(cfg.resolved_modes(), vec![Mode::Conventional]);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"samples_per_dataset\": 40", "\"samples_per_dataset\": -4");
        let err = parse_json::<ExperimentConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("corpus.synthetic.samples_per_dataset"), "{err}");

        let bad = MINIMAL.replace("\"output_dir\"", "\"bogus\": 1, \"output_dir\"");
        let err = parse_json::<ExperimentConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");

        let mut cfg: ExperimentConfig = parse_json(MINIMAL).unwrap();
        cfg.modes = Some(vec![Mode::Aligned]);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("modes"), "{err}");
        cfg.modes = None;
        cfg.replications.global = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("replications"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        fs::write(&path, MINIMAL).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("out"));
    }
}
