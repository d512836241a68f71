//! Accuracy metrics: received-power error, spectral efficiency of a MIMO
//! channel under equal power split, capacity error, empirical CDFs and
//! cluster-identification scores. Also a small ledger for trace counts and
//! wall-times.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::geometry::{PathRecord, PathSet, Vec3};
use crate::interpolation::InterpolationResult;
use crate::mimo::ChannelMatrix;
use crate::pathdata::{DataError, RunConfig};
use crate::reflection::recover_transform_from_route;

/// Per-stream efficiency scaling.
pub const SE_ALPHA: f64 = 0.6;
/// Per-stream efficiency ceiling in bps/Hz.
pub const SE_RHO_MAX: f64 = 4.8;
/// Thermal noise density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// Singular values below this fraction of the largest one do not count
/// towards the rank.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub bandwidth: f64,
}

impl LinkBudget {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            tx_power_dbm: cfg.tx_power_dbm,
            noise_figure_db: cfg.noise_figure_db,
            bandwidth: cfg.bandwidth,
        }
    }

    pub fn noise_psd_dbm_hz(&self) -> f64 {
        THERMAL_NOISE_DBM_HZ + self.noise_figure_db
    }

    /// Noise power over the whole band, mW.
    pub fn noise_power_mw(&self) -> f64 {
        db_to_linear(self.noise_psd_dbm_hz() + 10.0 * self.bandwidth.log10())
    }

    pub fn tx_power_mw(&self) -> f64 {
        db_to_linear(self.tx_power_dbm)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Capped, scaled Shannon rate of one stream.
pub fn stream_efficiency(snr: f64) -> f64 {
    (SE_ALPHA * (1.0 + snr).log2()).min(SE_RHO_MAX)
}

/// Singular values in descending order.
pub fn singular_values(h: &DMatrix<Complex64>) -> Vec<f64> {
    if h.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = h.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Best equal-power multiplexing rate over the number of streams.
pub fn spectral_efficiency(h: &ChannelMatrix, budget: &LinkBudget) -> f64 {
    let s = singular_values(&h.entries);
    spectral_efficiency_from_singular_values(&s, budget)
}

pub fn spectral_efficiency_from_singular_values(s: &[f64], budget: &LinkBudget) -> f64 {
    let Some(&s1) = s.first() else { return 0.0 };
    if !(s1 > 0.0) {
        return 0.0;
    }
    let rank = s.iter().take_while(|&&v| v >= RANK_TOLERANCE * s1).count();
    let p_over_n = budget.tx_power_mw() / budget.noise_power_mw();
    (1..=rank)
        .map(|k| {
            s[..k]
                .iter()
                .map(|si| stream_efficiency(si * si * p_over_n / k as f64))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `|SE_est − SE_true| / SE_true`; `None` when the true channel carries no
/// rate.
pub fn capacity_error(est: &ChannelMatrix, truth: &ChannelMatrix, budget: &LinkBudget) -> Option<f64> {
    relative_se_error(spectral_efficiency(est, budget), spectral_efficiency(truth, budget))
}

pub fn relative_se_error(se_est: f64, se_true: f64) -> Option<f64> {
    (se_true > 0.0).then(|| (se_est - se_true).abs() / se_true)
}

pub fn total_power_db(paths: &[PathRecord]) -> f64 {
    10.0 * paths.iter().map(|p| p.gain.norm_sqr()).sum::<f64>().log10()
}

/// Absolute dB difference of total path power. One empty side yields
/// `+∞` (an outage miss); two empty sides agree exactly.
pub fn received_power_error(true_paths: &[PathRecord], est_paths: &[PathRecord]) -> f64 {
    match (true_paths.is_empty(), est_paths.is_empty()) {
        (true, true) => 0.0,
        (false, false) => (total_power_db(true_paths) - total_power_db(est_paths)).abs(),
        _ => f64::INFINITY,
    }
}

/// Empirical CDF of the finite samples. Infinite samples are counted as
/// outages and NaN samples as undefined; neither enters the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfCurve {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
    pub finite: usize,
    pub outages: usize,
    pub undefined: usize,
}

impl CdfCurve {
    pub fn total(&self) -> usize {
        self.finite + self.outages + self.undefined
    }

    pub fn outage_fraction(&self) -> f64 {
        let n = self.finite + self.outages;
        if n == 0 {
            0.0
        } else {
            self.outages as f64 / n as f64
        }
    }

    /// Smallest sample value whose cumulative fraction reaches `p`.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        let i = self.fractions.iter().position(|&f| f >= p - 1e-12)?;
        Some(self.values[i])
    }

    pub fn median(&self) -> Option<f64> {
        self.quantile(0.5)
    }

    pub fn write_csv<W: Write>(&self, dest: W) -> Result<(), DataError> {
        crate::pathdata::write_two_column_csv(
            dest,
            ("value", "cdf"),
            self.values.iter().copied().zip(self.fractions.iter().copied()),
        )
    }
}

pub fn empirical_cdf(samples: &[f64]) -> CdfCurve {
    let mut finite: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    let outages = samples.iter().filter(|v| v.is_infinite()).count();
    let undefined = samples.iter().filter(|v| v.is_nan()).count();
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    let mut values = Vec::new();
    let mut fractions = Vec::new();
    for (i, v) in finite.iter().enumerate() {
        if i + 1 < n && finite[i + 1] == *v {
            continue;
        }
        values.push(*v);
        fractions.push((i + 1) as f64 / n as f64);
    }
    CdfCurve {
        values,
        fractions,
        finite: n,
        outages,
        undefined,
    }
}

/// Median of the finite samples (mean of the middle pair for even counts).
pub fn median(samples: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median over all samples with outages ranked above every finite value;
/// `+∞` when outages reach the middle. NaN samples are ignored.
pub fn median_with_outages(samples: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub median: Option<f64>,
    pub p90: Option<f64>,
    pub outage_fraction: f64,
}

pub fn summarize(samples: &[f64]) -> Summary {
    let cdf = empirical_cdf(samples);
    Summary {
        count: samples.len(),
        median: median(samples),
        p90: cdf.quantile(0.9),
        outage_fraction: cdf.outage_fraction(),
    }
}

/// Matches kept clusters to true paths by image point within `epsilon`
/// (one-to-one, closest pairs first). Returns `(precision, recall)`; an empty
/// estimate has precision 1 and an empty truth has recall 1.
pub fn cluster_diagnostics(result: &InterpolationResult, truth: &PathSet, epsilon: f64) -> (f64, f64) {
    let est: Vec<Vec3> = result.paths.iter().map(|p| p.image_point).collect();
    precision_recall(&est, &image_points(truth), truth.paths.len(), epsilon)
}

/// [`cluster_diagnostics`] for an estimate that is only available as a path
/// set; image points come from the bounce routes.
pub fn path_set_diagnostics(estimate: &PathSet, truth: &PathSet, epsilon: f64) -> (f64, f64) {
    let est = image_points(estimate);
    let (precision, recall) = precision_recall(&est, &image_points(truth), truth.paths.len(), epsilon);
    // routes that fail to invert count as unmatched estimates
    let kept = estimate.paths.len();
    if kept > est.len() {
        let matched = precision * est.len() as f64;
        return (matched / kept as f64, recall);
    }
    (precision, recall)
}

fn image_points(set: &PathSet) -> Vec<Vec3> {
    set.paths
        .iter()
        .filter_map(|p| recover_transform_from_route(&p.reflection_points, &set.tx, &set.rx).ok())
        .map(|t| t.apply(&set.tx))
        .collect()
}

fn precision_recall(est: &[Vec3], tru: &[Vec3], true_count: usize, epsilon: f64) -> (f64, f64) {
    let matched = match_points(est, tru, epsilon);
    let precision = if est.is_empty() {
        1.0
    } else {
        matched as f64 / est.len() as f64
    };
    let recall = if true_count == 0 {
        1.0
    } else {
        matched as f64 / true_count as f64
    };
    (precision, recall)
}

fn match_points(a: &[Vec3], b: &[Vec3], epsilon: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = (p - q).norm();
            if d <= epsilon {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched += 1;
        }
    }
    matched
}

/// One measured stage of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub stage: String,
    pub links: u64,
    pub trace_calls: u64,
    pub seconds: f64,
}

/// Trace-call counts and wall-times per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuntimeLedger {
    pub entries: Vec<LedgerEntry>,
}

impl RuntimeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: impl Into<String>, links: u64, trace_calls: u64, seconds: f64) {
        self.entries.push(LedgerEntry {
            stage: stage.into(),
            links,
            trace_calls,
            seconds,
        });
    }

    /// Times `f`, which reports `(links, trace_calls)` for the work it did.
    pub fn measure<T>(&mut self, stage: &str, f: impl FnOnce() -> (T, u64, u64)) -> T {
        let start = Instant::now();
        let (out, links, calls) = f();
        self.record(stage, links, calls, start.elapsed().as_secs_f64());
        out
    }

    pub fn stage(&self, stage: &str) -> impl Iterator<Item = &LedgerEntry> {
        let stage = stage.to_owned();
        self.entries.iter().filter(move |e| e.stage == stage)
    }

    pub fn write_csv<W: Write>(&self, mut dest: W) -> Result<(), DataError> {
        let mut out = String::from("stage,links,trace_calls,seconds\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{:.9e}\n",
                e.stage, e.links, e.trace_calls, e.seconds
            ));
        }
        dest.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`, returning
/// `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
