//! Error rates, convergence series and the statistical and geometric harnesses.

mod chebyshev;
mod nonconvex;

pub use chebyshev::{chebyshev_trial, loglog_slope, ChebyshevConfig, ChebyshevRow};
pub use nonconvex::{nonconvexity_certificate, Certificate, ParamGrid};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoding::ParameterMap;
use crate::error::{QmriError, Result};
use crate::solver::SolveReport;

/// Pointwise absolute errors on the full grid; zero outside Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMaps {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Relative errors `‖x − x_gt‖ / ‖x_gt‖` over Ω. `None` marks a channel whose
/// reference norm vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub rho: Option<f64>,
    pub maps: ErrorMaps,
    pub wall_time: Option<f64>,
}

impl ErrorReport {
    pub fn with_wall_time(mut self, seconds: f64) -> Self {
        self.wall_time = Some(seconds);
        self
    }

    /// `(T1, T2, ρ)` with undefined channels as NaN.
    pub fn channels(&self) -> [f64; 3] {
        [self.t1, self.t2, self.rho].map(|v| v.unwrap_or(f64::NAN))
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num.sqrt() / den.sqrt())
}

/// Channel-wise relative errors over the Ω of `truth`.
pub fn error_rate(computed: &ParameterMap, truth: &ParameterMap) -> Result<ErrorReport> {
    computed.same_grid(truth)?;
    let n2 = truth.n() * truth.n();
    let mut maps = ErrorMaps { t1: vec![0.0; n2], t2: vec![0.0; n2], rho: vec![0.0; n2] };
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    for k in truth.domain_indices() {
        maps.t1[k] = (computed.t1[k] - truth.t1[k]).abs();
        maps.t2[k] = (computed.t2[k] - truth.t2[k]).abs();
        maps.rho[k] = (computed.rho[k] - truth.rho[k]).norm();
        num[0] += maps.t1[k].powi(2);
        num[1] += maps.t2[k].powi(2);
        num[2] += maps.rho[k].powi(2);
        den[0] += truth.t1[k].powi(2);
        den[1] += truth.t2[k].powi(2);
        den[2] += truth.rho[k].norm_sqr();
    }
    Ok(ErrorReport {
        t1: ratio(num[0], den[0]),
        t2: ratio(num[1], den[1]),
        rho: ratio(num[2], den[2]),
        maps,
        wall_time: None,
    })
}

/// `‖x_{n+1} − x_n‖ / ‖x_n − x_{n−1}‖` per channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateRatios {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub rho: Vec<f64>,
}

fn series(steps: &[f64], floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for w in steps.windows(2) {
        if w[0] <= floor || w[1] <= floor {
            break;
        }
        out.push(w[1] / w[0]);
    }
    out
}

/// Step ratios; each channel stops at its first zero step.
pub fn iterate_ratios(report: &SolveReport) -> IterateRatios {
    iterate_ratios_above(report, 0.0)
}

/// Like [`iterate_ratios`], but steps at or below `floor` times the largest
/// step of the channel count as converged, which removes round-off tails.
pub fn iterate_ratios_above(report: &SolveReport, floor: f64) -> IterateRatios {
    let pick = |f: fn(&crate::solver::ChannelSteps) -> f64| {
        let steps: Vec<f64> = report.steps.iter().map(f).collect();
        let largest = steps.iter().copied().fold(0.0, f64::max);
        series(&steps, floor * largest)
    };
    IterateRatios { t1: pick(|s| s.t1), t2: pick(|s| s.t2), rho: pick(|s| s.rho) }
}

impl IterateRatios {
    /// `iteration,T1,T2,rho` rows; missing entries are left blank.
    pub fn to_csv(&self) -> String {
        let len = self.t1.len().max(self.t2.len()).max(self.rho.len());
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| format!("{x:.17e}")).unwrap_or_default();
        let mut s = String::from("iteration,T1,T2,rho\n");
        for i in 0..len {
            let _ = writeln!(s, "{},{},{},{}", i + 1, cell(&self.t1, i), cell(&self.t2, i), cell(&self.rho, i));
        }
        s
    }
}

/// `label,time_s,err_T1,err_T2,err_rho` rows.
pub fn error_table_csv(label: &str, rows: &[(String, ErrorReport)]) -> Result<String> {
    if label.contains(',') {
        return Err(QmriError::Format("column label must not contain commas".into()));
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "undefined".into());
    let mut s = format!("{label},time_s,err_T1,err_T2,err_rho\n");
    for (name, r) in rows {
        let time = r.wall_time.map(|t| format!("{t:.3}")).unwrap_or_default();
        let _ = writeln!(s, "{name},{time},{},{},{}", fmt(r.t1), fmt(r.t2), fmt(r.rho));
    }
    Ok(s)
}

/// A full-grid map as CSV, one image row per line.
pub fn grid_csv(n: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for row in values.chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
