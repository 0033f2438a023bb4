use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use dsc::corpus::{load_corpus, save_corpus, CorpusError};
use dsc::experiment::{read_json, ExperimentConfig, ExperimentError, RunOptions};
use dsc::model::TrainedModel;
use dsc::protocol::{infer_unseen, Mode};
use dsc::stats::{self, StatsError};
use dsc::synthgen::{generate, SynthConfig, SynthError, TRUTH_FILE};

#[derive(Parser)]
#[command(name = "dsc", version, about = "Dataset Concealment evaluation for multi-corpus quality estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground truth.
    Synth {
        /// Synthetic corpus config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory for the corpus files and truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Individual / Global / Concealed matrix and write the report.
    #[command(group(ArgGroup::new("mode").args(["no_aligner", "aligner", "both"])))]
    Dsc {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Skip jobs already recorded in runs.jsonl.
        #[arg(long)]
        resume: bool,
        /// Worker threads (overrides `parallelism`).
        #[arg(long, value_name = "K", value_parser = clap::value_parser!(u64).range(1..))]
        jobs: Option<u64>,
        /// Conventional training only.
        #[arg(long)]
        no_aligner: bool,
        /// Aligned training only.
        #[arg(long)]
        aligner: bool,
        /// Conventional and aligned training.
        #[arg(long)]
        both: bool,
        /// Overrides the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score unseen datasets with a saved Global model.
    Infer {
        /// Model JSON written by `dsc dsc` under models/.
        #[arg(long)]
        model: PathBuf,
        /// Corpus directory holding only unseen datasets.
        #[arg(long)]
        corpus: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print LCC and SRCC of a two-column CSV.
    Stats {
        /// CSV with two numeric columns; a non-numeric first row is a header.
        file: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::new(e.exit_code() as u8, e)
    }
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Validation { .. } | CorpusError::Dataset { .. } | CorpusError::DimensionMismatch { .. } => 3,
        _ => 1,
    }
}

fn synth(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg: SynthConfig = read_json(config).map_err(|e| Failure::new(2, e))?;
    let (corpus, truth) = generate(&cfg).map_err(|e| match e {
        SynthError::Config { .. } => Failure::new(2, e),
        other => Failure::new(1, other),
    })?;
    fs::create_dir_all(out).map_err(|e| Failure::new(1, format!("{}: {e}", out.display())))?;
    save_corpus(&corpus, out).map_err(|e| Failure::new(corpus_code(&e), e))?;
    truth.write(out.join(TRUTH_FILE)).map_err(|e| Failure::new(1, e))?;
    eprintln!(
        "wrote {} datasets ({} samples) to {}",
        corpus.datasets.len(),
        corpus.datasets.iter().map(|d| d.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_dsc(
    config: &Path,
    resume: bool,
    jobs: Option<u64>,
    no_aligner: bool,
    aligner: bool,
    both: bool,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| Failure::new(2, e))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    let modes = if no_aligner {
        Some(vec![Mode::Conventional])
    } else if aligner {
        Some(vec![Mode::Aligned])
    } else if both {
        Some(vec![Mode::Conventional, Mode::Aligned])
    } else {
        None
    };
    let opts = RunOptions {
        resume,
        modes,
        parallelism: jobs.map(|k| k as usize),
        only: None,
    };
    let out = dsc::experiment::run_experiment(&cfg, &opts)?;
    let failed = out.outcomes.iter().filter(|o| o.is_failed()).count();
    eprintln!(
        "{} jobs ({} failed); report in {}",
        out.outcomes.len(),
        failed,
        cfg.output_dir.display()
    );
    for row in &out.report.rows {
        if let Some(g) = row.gaps {
            println!(
                "{}\t{}\tv={:.4}{}\tc={:.4}{}",
                row.dataset_id,
                row.mode.as_str(),
                g.v,
                if g.v_significant { "*" } else { "" },
                g.c,
                if g.c_significant { "*" } else { "" }
            );
        } else {
            println!("{}\t{}\tincomplete", row.dataset_id, row.mode.as_str());
        }
    }
    Ok(())
}

fn infer(model: &Path, corpus: &Path, out: &Path) -> Result<(), Failure> {
    let model: TrainedModel = read_json(model).map_err(|e| Failure::new(2, e))?;
    let unseen = load_corpus(corpus).map_err(|e| Failure::new(corpus_code(&e), e))?;
    let results = infer_unseen(&model, &unseen).map_err(|e| Failure::from(ExperimentError::from(e)))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::new(1, e);
    w.write_record(["dataset_id", "n", "lcc", "srcc", "error"]).map_err(csv_err)?;
    for r in &results {
        let (l, s, e) = match &r.correlation {
            Ok((l, s)) => (l.to_string(), s.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), e.clone()),
        };
        w.write_record([r.dataset_id.clone(), r.n.to_string(), l, s, e])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::new(1, e))?;
    fs::write(out, bytes).map_err(|e| Failure::new(1, format!("{}: {e}", out.display())))?;
    Ok(())
}

fn stats_cmd(file: &Path) -> Result<(), Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| Failure::new(1, format!("{}: {e}", file.display())))?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::new(1, format!("{}: {e}", file.display())))?;
        if rec.len() != 2 {
            return Err(Failure::new(1, format!("{}, row {}: expected 2 columns", file.display(), i + 1)));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                x.push(a);
                y.push(b);
            }
            _ if i == 0 => continue,
            _ => {
                return Err(Failure::new(
                    1,
                    format!("{}, row {}: non-numeric value", file.display(), i + 1),
                ))
            }
        }
    }
    let code = |e: StatsError| match e {
        StatsError::NonFinite => Failure::new(1, e),
        other => Failure::new(3, other),
    };
    let l = stats::lcc(&x, &y).map_err(code)?;
    let s = stats::srcc(&x, &y).map_err(code)?;
    println!("n={}", x.len());
    println!("lcc={l}");
    println!("srcc={s}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out } => synth(&config, &out),
        Command::Dsc {
            config,
            resume,
            jobs,
            no_aligner,
            aligner,
            both,
            seed,
            output_dir,
        } => run_dsc(&config, resume, jobs, no_aligner, aligner, both, seed, output_dir),
        Command::Infer { model, corpus, out } => infer(&model, &corpus, &out),
        Command::Stats { file } => stats_cmd(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
