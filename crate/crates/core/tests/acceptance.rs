//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use dsc::aligner::{init_aligner, AlignerConfig};
use dsc::corpus::{split_dataset, Dataset, Sample, SplitSpec};
use dsc::experiment::{parse_json, run_experiment, ExperimentConfig, RunOptions};
use dsc::model::{grad_check, init_estimator, Activation, EstimatorArch, GroupedData, TrainConfig};
use dsc::protocol::{
    assemble_report, check_leakage, execute, plan, DscError, ExecuteConfig, Family, Mode,
    Replications, SplitTable, VariantKind, RUNS_FILE,
};
use dsc::stats::{
    aggregate, fisher, inv_fisher, lcc, significant_difference, srcc, CorrelationKind, CorrelationSet,
};
use dsc::synthgen::{generate, Support, SynthConfig, WarpSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------- oracles ----------

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Mid-rank by counting: 1 + #less + (#equal - 1) / 2.
fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    oracle_pearson(&oracle_ranks(x), &oracle_ranks(y))
}

// ---------- criterion 1 ----------

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_l: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(3..120);
        let tied = i % 3 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if tied {
                rng.random_range(1..=5) as f64
            } else {
                rng.random_range(-10.0..10.0)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let slope = rng.random_range(-2.0..2.0);
        let y: Vec<f64> = x.iter().map(|a| slope * a + draw(&mut rng)).collect();
        let (Ok(l), Ok(s)) = (lcc(&x, &y), srcc(&x, &y)) else {
            // degenerate (constant) draw; the oracle is undefined too
            if oracle_pearson(&x, &y).is_finite() {
                return outcome(false, format!("instance {i}: library refused a defined correlation"));
            }
            continue;
        };
        worst_l = worst_l.max((l - oracle_pearson(&x, &y)).abs());
        worst_s = worst_s.max((s - oracle_spearman(&x, &y)).abs());
    }
    let mut worst_f: f64 = 0.0;
    for k in 0..=20000 {
        let r = -0.999999 + 2.0 * 0.999999 * k as f64 / 20000.0;
        worst_f = worst_f.max((inv_fisher(fisher(r)) - r).abs());
    }
    let mut exact = true;
    for &r in &[0.0, 0.3, -0.55, 0.9, 0.999, -0.999999] {
        for n in [1usize, 2, 10] {
            let a = aggregate(&CorrelationSet::new(CorrelationKind::Lcc, vec![r; n]).unwrap());
            exact &= a.r_avg == r && a.z_se == 0.0;
        }
    }
    let pass = worst_l <= 1e-12 && worst_s <= 1e-12 && worst_f < 1e-12 && exact;
    outcome(
        pass,
        format!("max |Δlcc| = {worst_l:.2e}, max |Δsrcc| = {worst_s:.2e}, fisher round trip {worst_f:.2e}, constant sets exact: {exact}"),
    )
}

// ---------- criterion 2 ----------

fn random_dataset(rng: &mut ChaCha8Rng, id: &str, n: usize, dim: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            Sample {
                file_id: format!("{id}_{i}"),
                mos: rng.random_range(1.0..5.0),
                features,
                votes: 1,
                condition_id: None,
            }
        })
        .collect();
    Dataset::new(id, samples)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_plain: f64 = 0.0;
    let mut worst_aligned: f64 = 0.0;
    for _ in 0..50 {
        let dim = rng.random_range(1..=6);
        let depth = rng.random_range(1..=3);
        let arch = EstimatorArch {
            input_dim: dim,
            hidden_layers: (0..depth).map(|_| rng.random_range(1..=8)).collect(),
            activation: Activation::Tanh,
        };
        let mut params = init_estimator(&arch, rng.random());
        // put raw scores on the 1..5 label scale the aligner is built for
        params.layers.last_mut().unwrap().biases[0] = rng.random_range(1.0..5.0);
        let n_sets = rng.random_range(2..=3);
        let datasets: Vec<Dataset> = (0..n_sets)
            .map(|j| {
                let n = rng.random_range(3..=8);
                random_dataset(&mut rng, &format!("d{j}"), n, dim)
            })
            .collect();
        let idx: Vec<Vec<usize>> = datasets.iter().map(|d| (0..d.len()).collect()).collect();
        let parts: Vec<(&Dataset, &[usize])> = datasets.iter().zip(&idx).map(|(d, i)| (d, i.as_slice())).collect();
        let batch = GroupedData::from_parts(&parts);

        let plain = grad_check(&params, None, &batch, 1e-5).expect("grad check");
        worst_plain = worst_plain.max(plain);

        let mut acfg = AlignerConfig::new("d0");
        acfg.hidden_units = rng.random_range(1..=6);
        acfg.init_scale = rng.random_range(0.1..1.0);
        let ids: Vec<String> = datasets.iter().map(|d| d.id.clone()).collect();
        let aligner = init_aligner(&acfg, "d0", &ids, rng.random()).expect("aligner");
        let aligned = grad_check(&params, Some(&aligner), &batch, 1e-5).expect("grad check");
        worst_aligned = worst_aligned.max(aligned);
    }
    outcome(
        worst_plain < 1e-4 && worst_aligned < 1e-4,
        format!("50 tanh configs, worst relative error: estimator {worst_plain:.2e}, with aligner {worst_aligned:.2e}"),
    )
}

// ---------- criterion 3 ----------

fn sample_lcc(rng: &mut ChaCha8Rng, rho: f64, m: usize) -> f64 {
    let mut x = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m);
    for _ in 0..m {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    lcc(&x, &y).expect("defined")
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let pairs = 1000;
    let mut flagged = 0;
    for _ in 0..pairs {
        let rho = 0.8;
        let set = |rng: &mut ChaCha8Rng| {
            let v = (0..10).map(|_| sample_lcc(rng, rho, 40)).collect();
            CorrelationSet::new(CorrelationKind::Lcc, v).unwrap()
        };
        let a = set(&mut rng);
        let b = set(&mut rng);
        if significant_difference(&a, &b).significant {
            flagged += 1;
        }
    }
    let rate = flagged as f64 / pairs as f64;
    outcome(
        (0.02..=0.10).contains(&rate),
        format!("{flagged}/{pairs} same-distribution pairs flagged, rate {rate:.3}"),
    )
}

// ---------- criterion 4 ----------

fn toy_synth(n: usize, samples: usize, seed: u64) -> SynthConfig {
    let warps = [
        WarpSpec::Identity,
        WarpSpec::Affine { a: 1.0, b: 0.6 },
        WarpSpec::SigmoidWarp {
            center: 3.0,
            steepness: 1.5,
        },
        WarpSpec::Affine { a: 0.8, b: -0.3 },
    ];
    SynthConfig {
        n_datasets: n,
        samples_per_dataset: samples,
        feature_dim: 6,
        warps: (0..n).map(|j| warps[j % warps.len()]).collect(),
        vote_count: 8,
        vote_noise_sd: 0.7,
        feature_noise_sd: 0.05,
        condition_shift: None,
        seed,
        dataset_ids: None,
    }
}

fn criterion_4() -> Outcome {
    let (corpus, _) = generate(&toy_synth(3, 300, 44)).expect("synth");
    let reps = Replications {
        individual: 2,
        global: 2,
        concealed: 1,
    };
    let jobs = plan(&corpus, Mode::Conventional, &reps, None, 4).expect("plan");
    let splits = SplitTable::build(&corpus, &SplitSpec::default(), reps.max()).expect("splits");
    let train = TrainConfig {
        max_epochs: 40,
        ..TrainConfig::default()
    };
    let cfg = |parallelism| ExecuteConfig {
        arch: EstimatorArch::toy(corpus.feature_dim),
        train: train.clone(),
        aligner: None,
        parallelism,
    };
    let serial = execute(&jobs, &corpus, &splits, &cfg(1), |_| {}).expect("execute");
    let parallel = execute(&jobs, &corpus, &splits, &cfg(8), |_| {}).expect("execute");

    // leakage: the guard on every concealed job, plus an independent file-id check
    let mut leaks = 0;
    for job in &jobs {
        let parts: Vec<(&Dataset, &[usize])> = job
            .train_ids
            .iter()
            .map(|id| {
                let d = corpus.dataset(id).unwrap();
                (d, splits.get(job.key.replication, id).unwrap().train.as_slice())
            })
            .collect();
        let data = GroupedData::from_parts(&parts);
        if matches!(check_leakage(job, &data, &corpus), Err(DscError::Leakage { .. })) {
            leaks += 1;
        }
        if let VariantKind::Concealed(hidden) = &job.key.variant {
            let hidden_ids: HashSet<&str> = corpus
                .dataset(hidden)
                .unwrap()
                .samples
                .iter()
                .map(|s| s.file_id.as_str())
                .collect();
            leaks += parts
                .iter()
                .flat_map(|(d, idx)| idx.iter().map(|&i| d.samples[i].file_id.as_str()))
                .filter(|f| hidden_ids.contains(f))
                .count();
        }
    }
    let failed = serial.iter().filter(|o| o.is_failed()).count();
    let identical = serial.len() == parallel.len()
        && serial.iter().zip(&parallel).all(|(a, b)| {
            a.results().iter().zip(b.results()).all(|(x, y)| {
                x.lcc.to_bits() == y.lcc.to_bits() && x.srcc.to_bits() == y.srcc.to_bits() && x.history_digest == y.history_digest
            }) && a.results().len() == b.results().len()
        });

    let report = assemble_report(&serial, &corpus.ids());
    let cells = report
        .rows
        .iter()
        .flat_map(|r| Family::ALL.map(|f| r.cell(f).stats().is_some()))
        .filter(|p| *p)
        .count();
    let mut telescoping: f64 = 0.0;
    for row in &report.rows {
        let (Some(g), Some(i), Some(c)) = (row.gaps, row.individual.stats(), row.concealed.stats()) else {
            telescoping = f64::INFINITY;
            continue;
        };
        telescoping = telescoping.max((g.v + g.c - (i.lcc.r_avg.abs() - c.lcc.r_avg.abs())).abs());
    }
    let pass = jobs.len() == 11 && cells == 9 && telescoping <= 1e-12 && leaks == 0 && failed == 0 && identical;
    outcome(
        pass,
        format!(
            "jobs {} (expect 11), cells {cells} (expect 9), telescoping error {telescoping:.1e}, leakage hits {leaks}, failed {failed}, parallelism 1 vs 8 identical: {identical}",
            jobs.len()
        ),
    )
}

// ---------- criterion 5 ----------

fn criterion_5(work: &Path) -> Outcome {
    let synth = SynthConfig {
        n_datasets: 7,
        samples_per_dataset: 2000,
        feature_dim: 8,
        warps: vec![
            WarpSpec::Identity,
            WarpSpec::Affine { a: 1.0, b: 0.8 },
            WarpSpec::Affine { a: 1.0, b: -0.8 },
            WarpSpec::SigmoidWarp {
                center: 2.5,
                steepness: 1.5,
            },
            WarpSpec::SigmoidWarp {
                center: 3.5,
                steepness: 2.0,
            },
            WarpSpec::Affine { a: 0.9, b: 0.3 },
            WarpSpec::Affine { a: 1.0, b: -0.4 },
        ],
        vote_count: 8,
        vote_noise_sd: 0.7,
        feature_noise_sd: 0.05,
        condition_shift: None,
        seed: 11,
        dataset_ids: None,
    };
    let mut aligner = AlignerConfig::new("ds1");
    aligner.fallback_reference_id = Some("ds2".into());
    let cfg = ExperimentConfig {
        corpus: dsc::experiment::CorpusSource::Synthetic(synth),
        unseen: vec!["ds6".into(), "ds7".into()],
        split: SplitSpec::default(),
        arch: None,
        train: TrainConfig::default(),
        aligner: Some(aligner),
        modes: None,
        replications: Replications {
            individual: 1,
            global: 10,
            concealed: 1,
        },
        parallelism: 4,
        seed: 5,
        output_dir: work.join("c5"),
    };
    let opts = RunOptions {
        only: Some(vec![Family::Global]),
        ..RunOptions::default()
    };
    let out = match run_experiment(&cfg, &opts) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let mut better = Vec::new();
    for e in out.report.aligner_effects.iter().filter(|e| e.family == Family::Global) {
        if e.delta > 0.0 && e.significance.significant {
            better.push(e.dataset_id.clone());
        }
    }
    let mean = |mode: Mode| {
        let v: Vec<f64> = out
            .unseen
            .iter()
            .filter(|u| u.mode == mode)
            .filter_map(|u| u.lcc)
            .collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (conv, nc) = mean(Mode::Conventional);
    let (al, na) = mean(Mode::Aligned);
    let pass = better.len() >= 3 && nc == 2 && na == 2 && al > conv;
    outcome(
        pass,
        format!(
            "aligned ρ_G significantly higher on {}/5 datasets {:?}; unseen mean LCC {al:.4} aligned vs {conv:.4} conventional",
            better.len(),
            better
        ),
    )
}

// ---------- criterion 6 ----------

fn criterion_6(work: &Path) -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=10u64 {
        let shared = Support { lo: 3.0, hi: 5.0 };
        let synth = SynthConfig {
            n_datasets: 5,
            samples_per_dataset: 500,
            feature_dim: 16,
            warps: vec![
                WarpSpec::Identity,
                WarpSpec::Affine { a: 1.0, b: 0.3 },
                WarpSpec::Affine { a: 1.0, b: -0.3 },
                WarpSpec::SigmoidWarp {
                    center: 3.0,
                    steepness: 1.5,
                },
                WarpSpec::Identity,
            ],
            vote_count: 8,
            vote_noise_sd: 0.7,
            feature_noise_sd: 0.05,
            condition_shift: Some(vec![shared, shared, shared, shared, Support { lo: 1.0, hi: 2.5 }]),
            seed,
            dataset_ids: None,
        };
        let cfg = ExperimentConfig {
            corpus: dsc::experiment::CorpusSource::Synthetic(synth),
            unseen: vec![],
            split: SplitSpec::default(),
            arch: None,
            train: TrainConfig::default(),
            aligner: None,
            modes: None,
            replications: Replications {
                individual: 1,
                global: 2,
                concealed: 2,
            },
            parallelism: 4,
            seed,
            output_dir: work.join(format!("c6_{seed}")),
        };
        let out = match run_experiment(&cfg, &RunOptions::default()) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("seed {seed}: run failed: {e}")),
        };
        let top = out
            .report
            .rows
            .iter()
            .filter_map(|r| r.gaps.map(|g| (g.c, r.dataset_id.clone())))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((c, id)) = top {
            if id == "ds5" {
                wins += 1;
            }
            lines.push(format!("{seed}:{id}({c:.3})"));
        }
    }
    outcome(
        wins >= 8,
        format!("disjoint-support dataset has the largest c in {wins}/10 runs [{}]", lines.join(" ")),
    )
}

// ---------- criterion 7 ----------

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_7(work: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // reference identity, bit for bit
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let ids: Vec<String> = (0..4).map(|j| format!("d{j}")).collect();
    let mut acfg = AlignerConfig::new("d2");
    acfg.init_scale = 0.7;
    let aligner = init_aligner(&acfg, "d2", &ids, 9).unwrap();
    let mut probes: Vec<f64> = (0..10000).map(|_| rng.random_range(-1e6..1e6)).collect();
    probes.extend([0.0, -0.0, 1.0, 5.0, f64::MIN_POSITIVE, f64::MAX, f64::MIN, 1e-300]);
    let identity = probes
        .iter()
        .all(|&s| aligner.apply(s, "d2").map(f64::to_bits) == Ok(s.to_bits()));
    pass &= identity;
    notes.push(format!("reference identity exact: {identity}"));

    // split partition over 100 random datasets
    let mut partition = true;
    for k in 0..100 {
        let n = rng.random_range(10..400);
        let mut d = random_dataset(&mut rng, &format!("p{k}"), n, 1);
        let a = rng.random_range(0.5..0.9);
        let b = rng.random_range(0.02..(1.0 - a) * 0.9);
        let spec = SplitSpec {
            fractions: (a, b, 1.0 - a - b),
            seed: rng.random(),
            honor_curated: true,
        };
        let s = split_dataset(&d, &spec).unwrap();
        let all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        let sizes_ok = [(s.train.len(), a), (s.val.len(), b), (s.test.len(), 1.0 - a - b)]
            .iter()
            .all(|&(m, f)| (m as f64 - f * n as f64).abs() <= 1.0);
        let names = |idx: &[usize], d: &Dataset| -> BTreeSet<String> {
            idx.iter().map(|&i| d.samples[i].file_id.clone()).collect()
        };
        let before = [names(&s.train, &d), names(&s.val, &d), names(&s.test, &d)];
        d.samples.shuffle(&mut rng);
        let t = split_dataset(&d, &spec).unwrap();
        let after = [names(&t.train, &d), names(&t.val, &d), names(&t.test, &d)];
        partition &= all.len() == n && unique.len() == n && sizes_ok && before == after;
    }
    pass &= partition;
    notes.push(format!("split partition on 100 datasets: {partition}"));

    // golden run and resume
    let config_text = r#"{
        "corpus": {"synthetic": {
            "n_datasets": 3, "samples_per_dataset": 200, "feature_dim": 5,
            "warps": [{"kind": "identity"}, {"kind": "affine", "params": [1.0, 0.5]},
                      {"kind": "sigmoid-warp", "params": [3.0, 1.2]}],
            "vote_count": 6, "vote_noise_sd": 0.7, "feature_noise_sd": 0.05, "seed": 77}},
        "aligner": {"reference_id": "ds1", "fallback_reference_id": "ds2"},
        "replications": {"individual": 2, "global": 2, "concealed": 2},
        "train": {"max_epochs": 25},
        "parallelism": 3,
        "seed": 2024,
        "output_dir": "unused"
    }"#;
    let mut cfg: ExperimentConfig = parse_json(config_text).unwrap();
    let dir = work.join("golden");
    cfg.output_dir = dir.clone();
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let first = read_dir_bytes(&dir);
    fs::remove_dir_all(&dir).unwrap();
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let second = read_dir_bytes(&dir);
    let golden = first == second && first.contains_key("manifest.json");
    pass &= golden;
    notes.push(format!("golden run identical ({} files): {golden}", first.len()));

    // interrupt: keep a prefix of runs.jsonl plus a torn line, drop outputs
    let runs = dir.join(RUNS_FILE);
    let text = fs::read_to_string(&runs).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() / 3;
    let mut partial: String = lines[..keep].iter().map(|l| format!("{l}\n")).collect();
    partial.push_str(&lines[keep][..lines[keep].len() / 2]);
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            fs::remove_file(&p).unwrap();
        }
    }
    fs::remove_file(dir.join("models/global_aligned_rep1.json")).ok();
    fs::write(&runs, partial).unwrap();
    let resumed = run_experiment(
        &cfg,
        &RunOptions {
            resume: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let after = read_dir_bytes(&dir);
    let resume_ok = after == first;
    pass &= resume_ok;
    notes.push(format!(
        "resume after interrupt ({keep}/{} records kept) identical: {resume_ok}",
        lines.len()
    ));
    let _ = resumed;
    outcome(pass, notes.join("; "))
}

fn main() {
    let work = tempfile::tempdir().expect("tempdir");
    type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 statistical core exactness", Duration::from_secs(5), Box::new(criterion_1)),
        ("2 gradient correctness", Duration::from_secs(30), Box::new(criterion_2)),
        ("3 null calibration", Duration::from_secs(60), Box::new(criterion_3)),
        ("4 DSC structural identities", Duration::from_secs(180), Box::new(criterion_4)),
        ("5 aligner benefit", Duration::from_secs(900), Box::new(|| criterion_5(work.path()))),
        ("6 concealment-gap interpretability", Duration::from_secs(900), Box::new(|| criterion_6(work.path()))),
        ("7 identity and determinism", Duration::from_secs(300), Box::new(|| criterion_7(work.path()))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, budget, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {name}: {} ({:.1}s, budget {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            result.detail
        );
    }
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
