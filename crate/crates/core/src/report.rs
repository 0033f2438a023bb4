//! Machine-readable DSC report files.
//!
//! `emit` writes `summary.csv`, `gaps.csv`, `aligner_effects.csv`,
//! `figure_dsc.json`, `report.json` and a `manifest.json` holding SHA-256
//! digests of the others. Numbers are rounded to 12 significant digits and
//! JSON keys are sorted, so identical reports give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::{Cell, DscReport, Family, Mode};
use crate::stats::{GapResult, Significance};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const GAPS_FILE: &str = "gaps.csv";
pub const EFFECTS_FILE: &str = "aligner_effects.csv";
pub const FIGURE_FILE: &str = "figure_dsc.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{}", round12(x))
    }
}

/// Replaces every float in a JSON tree by its 12-digit rounding; non-finite
/// values become null.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round12(x)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// One bar of the DSC figure: the conventional value, with the aligned
/// value drawn as an extension when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureDatum {
    pub dataset_id: String,
    pub variant: Family,
    pub bar: Option<f64>,
    pub extension: Option<f64>,
    /// Aligned vs conventional significance, when both exist.
    pub aligner_significant: Option<bool>,
    /// Gap significance for this bar: v for Global, c for Concealed.
    pub gap_significant: Option<bool>,
}

pub fn figure_data(report: &DscReport) -> Vec<FigureDatum> {
    let value = |id: &str, mode: Mode, f: Family| {
        report
            .row(id, mode)
            .and_then(|r| r.cell(f).stats())
            .map(|s| s.lcc.r_avg)
    };
    let mut out = Vec::new();
    for id in &report.datasets {
        for family in Family::ALL {
            let primary_mode = if report.modes.contains(&Mode::Conventional) {
                Mode::Conventional
            } else {
                Mode::Aligned
            };
            let bar = value(id, primary_mode, family);
            let extension = if primary_mode == Mode::Conventional {
                value(id, Mode::Aligned, family)
            } else {
                None
            };
            let aligner_significant = report
                .aligner_effects
                .iter()
                .find(|e| e.dataset_id == *id && e.family == family)
                .map(|e| e.significance.significant);
            let gap_significant = report.row(id, primary_mode).and_then(|r| r.gaps).and_then(|g| match family {
                Family::Individual => None,
                Family::Global => Some(g.v_significant),
                Family::Concealed => Some(g.c_significant),
            });
            out.push(FigureDatum {
                dataset_id: id.clone(),
                variant: family,
                bar,
                extension,
                aligner_significant,
                gap_significant,
            });
        }
    }
    out
}

fn summary_csv(report: &DscReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset_id",
        "variant",
        "mode",
        "n",
        "lcc_r_avg",
        "lcc_z_mean",
        "lcc_z_se",
        "srcc_r_avg",
        "srcc_z_mean",
        "srcc_z_se",
        "missing",
    ])?;
    for row in &report.rows {
        for family in Family::ALL {
            let mut rec = vec![row.dataset_id.clone(), family.as_str().into(), row.mode.as_str().into()];
            match row.cell(family) {
                Cell::Present(s) => {
                    rec.push(s.lcc.n.to_string());
                    for a in [&s.lcc, &s.srcc] {
                        rec.extend([num(a.r_avg), num(a.z_mean), num(a.z_se)]);
                    }
                    rec.push(String::new());
                }
                Cell::Missing { reason } => {
                    rec.extend(std::iter::repeat_n(String::new(), 7));
                    rec.push(reason.clone());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn sig_fields(g: Option<&GapResult>, v: bool) -> [String; 4] {
    match g {
        None => Default::default(),
        Some(g) => {
            let (val, sig, ci) = if v {
                (g.v, g.v_significant, g.ci_v)
            } else {
                (g.c, g.c_significant, g.ci_c)
            };
            [num(val), sig.to_string(), num(ci.lo), num(ci.hi)]
        }
    }
}

fn gaps_csv(report: &DscReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset_id", "mode", "v", "v_significant", "v_ci_lo", "v_ci_hi", "c", "c_significant", "c_ci_lo",
        "c_ci_hi",
    ])?;
    for row in &report.rows {
        let mut rec = vec![row.dataset_id.clone(), row.mode.as_str().to_string()];
        rec.extend(sig_fields(row.gaps.as_ref(), true));
        rec.extend(sig_fields(row.gaps.as_ref(), false));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn effects_csv(report: &DscReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset_id",
        "variant",
        "conventional",
        "aligned",
        "delta",
        "significant",
        "ci_lo",
        "ci_hi",
    ])?;
    for e in &report.aligner_effects {
        let Significance { significant, ci, .. } = e.significance;
        w.write_record([
            e.dataset_id.clone(),
            e.family.as_str().into(),
            num(e.conventional),
            num(e.aligned),
            num(e.delta),
            significant.to_string(),
            num(ci.lo),
            num(ci.hi),
        ])?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ReportError> {
    // serde_json::Value keeps object keys sorted
    let v = round_json(serde_json::to_value(value)?);
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

/// Renders every report file in memory, keyed by file name. `extra_files`
/// are written alongside and listed in the manifest.
pub fn render(
    report: &DscReport,
    metadata: &BTreeMap<String, Value>,
    extra_files: &BTreeMap<String, Vec<u8>>,
) -> Result<BTreeMap<String, Vec<u8>>, ReportError> {
    let mut files = extra_files.clone();
    files.insert(SUMMARY_FILE.to_string(), summary_csv(report)?);
    files.insert(GAPS_FILE.to_string(), gaps_csv(report)?);
    files.insert(EFFECTS_FILE.to_string(), effects_csv(report)?);
    files.insert(FIGURE_FILE.to_string(), json_bytes(&figure_data(report))?);
    files.insert(REPORT_FILE.to_string(), json_bytes(report)?);
    let digests: BTreeMap<&String, String> = files.iter().map(|(k, v)| (k, sha256_hex(v))).collect();
    let manifest = serde_json::json!({ "files": digests, "metadata": metadata });
    files.insert(MANIFEST_FILE.to_string(), json_bytes(&manifest)?);
    Ok(files)
}

/// Writes the report files into `out_dir`, creating it if needed.
pub fn emit(
    report: &DscReport,
    out_dir: &Path,
    metadata: &BTreeMap<String, Value>,
    extra_files: &BTreeMap<String, Vec<u8>>,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    render(report, metadata, extra_files)?
        .iter()
        .map(|(name, bytes)| write(out_dir, name, bytes))
        .collect()
}

/// Reads `report.json` back.
pub fn load_report(dir: &Path) -> Result<DscReport, ReportError> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
