//! Correlation metrics, Fisher z aggregation and gap significance.
//!
//! Replicated correlations are never averaged on the r scale. Each value is
//! mapped through `atanh`, averaged, and mapped back; standard errors and
//! confidence intervals live on the z scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Correlations are clamped to `±(1 - FISHER_CLAMP)` before `atanh`.
pub const FISHER_CLAMP: f64 = 1e-7;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired observations, got {0}")]
    TooFew(usize),
    #[error("undefined correlation: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("non-finite input value")]
    NonFinite,
    #[error("empty correlation set")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Lcc,
    Srcc,
}

/// Per-replication correlations of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSet {
    pub kind: CorrelationKind,
    pub values: Vec<f64>,
}

impl CorrelationSet {
    pub fn new(kind: CorrelationKind, values: Vec<f64>) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { kind, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same set with every value replaced by its magnitude.
    pub fn abs(&self) -> Self {
        Self {
            kind: self.kind,
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }
}

/// How the standard error of the mean z is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeMethod {
    /// Sample standard deviation of the per-replication z values over √n.
    #[default]
    Sample,
    /// `1/√(m-3)` per replication (m = paired observations behind each
    /// correlation), divided by √n.
    Analytic { sample_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCorrelation {
    pub r_avg: f64,
    pub z_mean: f64,
    pub z_se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(deserialize_with = "lo_or_neg_inf")]
    pub lo: f64,
    #[serde(deserialize_with = "hi_or_inf")]
    pub hi: f64,
}

// JSON has no infinities; unbounded ends are written as null.
fn lo_or_neg_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

fn hi_or_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo.is_infinite() || self.hi.is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub significant: bool,
    /// Confidence interval of the difference of mean z values.
    pub ci: Interval,
    /// Set when either side has a single replication; the interval is then
    /// `(-inf, inf)` and the difference is never significant.
    pub infinite_width: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    /// Versatility gap `|ρ_I| - |ρ_G|`.
    pub v: f64,
    /// Concealment gap `|ρ_G| - |ρ_C|`.
    pub c: f64,
    pub v_significant: bool,
    pub c_significant: bool,
    pub ci_v: Interval,
    pub ci_c: Interval,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn lcc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// Fractional (1-based) ranks; tied values share the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation coefficient with average ranks for ties.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

pub fn fisher(r: f64) -> f64 {
    let bound = 1.0 - FISHER_CLAMP;
    r.clamp(-bound, bound).atanh()
}

pub fn inv_fisher(z: f64) -> f64 {
    z.tanh()
}

pub fn aggregate(cs: &CorrelationSet) -> AggregateCorrelation {
    aggregate_with(cs, SeMethod::Sample)
}

pub fn aggregate_with(cs: &CorrelationSet, method: SeMethod) -> AggregateCorrelation {
    let n = cs.values.len();
    assert!(n > 0, "aggregate of an empty correlation set");
    let zs: Vec<f64> = cs.values.iter().map(|&r| fisher(r)).collect();
    let first = cs.values[0];
    let constant = cs.values.iter().all(|&r| r == first);
    let (z_mean, r_avg) = if constant {
        // exact pass-through unless the clamp kicked in
        let r = if first.abs() <= 1.0 - FISHER_CLAMP {
            first
        } else {
            inv_fisher(zs[0])
        };
        (zs[0], r)
    } else {
        let z_mean = zs.iter().sum::<f64>() / n as f64;
        (z_mean, inv_fisher(z_mean))
    };
    let z_se = match method {
        SeMethod::Sample if n == 1 || constant => 0.0,
        SeMethod::Sample => {
            let var = zs.iter().map(|z| (z - z_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        }
        SeMethod::Analytic { sample_size } => analytic_se(sample_size, n),
    };
    AggregateCorrelation {
        r_avg,
        z_mean,
        z_se,
        n,
    }
}

fn analytic_se(sample_size: usize, reps: usize) -> f64 {
    if sample_size <= 3 {
        return f64::INFINITY;
    }
    (1.0 / (sample_size as f64 - 3.0)).sqrt() / (reps as f64).sqrt()
}

/// Two-sided test on the difference of Fisher-averaged correlations at
/// `alpha = 0.05`.
pub fn significant_difference(a: &CorrelationSet, b: &CorrelationSet) -> Significance {
    significant_difference_with(a, b, SeMethod::Sample)
}

pub fn significant_difference_with(
    a: &CorrelationSet,
    b: &CorrelationSet,
    method: SeMethod,
) -> Significance {
    let aa = aggregate_with(a, method);
    let ab = aggregate_with(b, method);
    let d = aa.z_mean - ab.z_mean;
    if matches!(method, SeMethod::Sample) && (aa.n < 2 || ab.n < 2) {
        return Significance {
            significant: false,
            ci: Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
            infinite_width: true,
        };
    }
    let se = (aa.z_se.powi(2) + ab.z_se.powi(2)).sqrt();
    let ci = Interval {
        lo: d - Z_95 * se,
        hi: d + Z_95 * se,
    };
    Significance {
        significant: !ci.contains(0.0),
        ci,
        infinite_width: ci.is_unbounded(),
    }
}

/// Versatility and concealment gaps for one dataset, with significance
/// computed on magnitude-corrected sets.
pub fn gaps(
    rho_i: &AggregateCorrelation,
    rho_g: &AggregateCorrelation,
    rho_c: &AggregateCorrelation,
    sets_i: &CorrelationSet,
    sets_g: &CorrelationSet,
    sets_c: &CorrelationSet,
) -> GapResult {
    let (i, g, c) = (rho_i.r_avg.abs(), rho_g.r_avg.abs(), rho_c.r_avg.abs());
    let sv = significant_difference(&sets_i.abs(), &sets_g.abs());
    let sc = significant_difference(&sets_g.abs(), &sets_c.abs());
    GapResult {
        v: i - g,
        c: g - c,
        v_significant: sv.significant,
        c_significant: sc.significant,
        ci_v: sv.ci,
        ci_c: sc.ci,
    }
}
