//! Projected Gauss-Newton and Levenberg-Marquardt iterations for `Q(x) = D`.

mod block;
mod cg;
mod lm;

pub use block::{BlockSolveStats, BlockStructure};
pub use cg::{conjugate_gradient, CgConfig, CgSummary};
pub use lm::{lm_step, solve_gauss_newton, solve_lm};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoding::{FeasibleBox, ParameterMap, RhoMode};
use crate::error::{QmriError, Result};

/// Clamps every Ω pixel into the box, channel by channel.
pub fn project_box(x: &ParameterMap, bx: &FeasibleBox) -> ParameterMap {
    let mut out = x.clone();
    for k in x.domain_indices() {
        out.t1[k] = bx.t1.clamp(x.t1[k]);
        out.t2[k] = bx.t2.clamp(x.t2[k]);
        out.rho[k] = bx.clamp_rho(x.rho[k]);
    }
    out
}

/// Stop once `‖Q(x_n) − D‖ ≤ ϱ δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub varrho: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Exact block solve when the mask decouples into small pixel groups,
    /// conjugate gradients otherwise.
    #[default]
    Auto,
    Cg,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda0: f64,
    pub beta: f64,
    /// `μ_n = ε ‖Q(x_n) − D‖`.
    pub epsilon: f64,
    pub max_iters: usize,
    pub discrepancy: Option<Discrepancy>,
    pub cg: CgConfig,
    pub bounds: FeasibleBox,
    pub rho_mode: RhoMode,
    /// Apply the box projection after each step.
    pub project: bool,
    pub linear_solver: LinearSolver,
    /// Keep every iterate in the report.
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            beta: 0.01,
            epsilon: 0.0,
            max_iters: 25,
            discrepancy: None,
            cg: CgConfig::default(),
            bounds: FeasibleBox::default(),
            rho_mode: RhoMode::Real,
            project: true,
            linear_solver: LinearSolver::Auto,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    /// Defaults with `λ0 = s²` for sub-sampling factor `s`.
    pub fn for_factor(s: usize) -> Self {
        Self { lambda0: (s * s) as f64, ..Self::default() }
    }

    /// Converts a damping parameter stated for an unnormalized `n × n` DFT,
    /// whose Gram matrix is `n²` times the unitary one.
    pub fn unitary_lambda(lambda: f64, n: usize) -> f64 {
        lambda / (n * n) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(QmriError::Config(format!("lambda0 must be non-negative, got {}", self.lambda0)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(QmriError::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(QmriError::Config(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if let Some(d) = self.discrepancy {
            if !(d.varrho > 0.0) || !(d.delta >= 0.0) {
                return Err(QmriError::Config("discrepancy needs varrho > 0 and delta >= 0".into()));
            }
        }
        if !(self.cg.tol > 0.0) || self.cg.max_iters == 0 {
            return Err(QmriError::Config("CG needs a positive tolerance and iteration cap".into()));
        }
        self.bounds.validate()
    }

    /// `λ_n = max(λ0 βⁿ, ε r_n)`.
    pub fn lambda(&self, n: usize, residual: f64) -> f64 {
        let n = i32::try_from(n).unwrap_or(i32::MAX);
        (self.lambda0 * self.beta.powi(n)).max(self.epsilon * residual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    Discrepancy,
    ZeroResidual,
    ZeroStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSteps {
    pub t1: f64,
    pub t2: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LinearSummary {
    Cg(CgSummary),
    Direct { frozen: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `‖Q(x_n) − D‖` for `n = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `‖x_{n+1} − x_n‖` per channel over Ω.
    pub steps: Vec<ChannelSteps>,
    pub linear: Vec<LinearSummary>,
    pub termination: Termination,
    pub iterates: Vec<ParameterMap>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Rows `iteration,residual,lambda,step_T1,step_T2,step_rho`; the last row
    /// has no step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual,lambda,step_T1,step_T2,step_rho\n");
        for (n, r) in self.residuals.iter().enumerate() {
            match (self.lambdas.get(n), self.steps.get(n)) {
                (Some(l), Some(st)) => {
                    let _ = writeln!(s, "{n},{r:.17e},{l:.17e},{:.17e},{:.17e},{:.17e}", st.t1, st.t2, st.rho);
                }
                _ => {
                    let _ = writeln!(s, "{n},{r:.17e},,,,");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn box_clamps_and_is_idempotent() {
        let mut x = ParameterMap::zeros(2);
        x.set_domain(vec![true, true, false, true]).unwrap();
        x.t1 = vec![7000.0, 1000.0, 0.0, -3.0];
        x.t2 = vec![100.0, 600.0, 0.0, 50.0];
        x.rho = vec![Complex64::new(120.0, -1.0), Complex64::new(50.0, 5.0), Complex64::default(), Complex64::new(-2.0, 0.0)];
        let bx = FeasibleBox::default();
        let p = project_box(&x, &bx);
        assert_eq!(p.t1, vec![5500.0, 1000.0, 0.0, 0.0]);
        assert_eq!(p.t2, vec![100.0, 550.0, 0.0, 50.0]);
        assert_eq!(p.rho[0], Complex64::new(100.0, 0.0));
        assert_eq!(p.rho[3], Complex64::new(0.0, 0.0));
        assert_eq!(project_box(&p, &bx), p);
        assert!(p.is_feasible(&bx));
    }

    #[test]
    fn lambda_schedule() {
        let cfg = SolverConfig { lambda0: 64.0, beta: 0.01, epsilon: 0.0, ..Default::default() };
        assert_eq!(cfg.lambda(0, 5.0), 64.0);
        assert!((cfg.lambda(2, 5.0) - 64e-4).abs() < 1e-18);
        let cfg = SolverConfig { lambda0: 1.0, beta: 0.0, epsilon: 1e-8, ..Default::default() };
        assert_eq!(cfg.lambda(0, 3.0), 1.0);
        assert!((cfg.lambda(1, 3.0) - 3e-8).abs() < 1e-22);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { beta: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { lambda0: -1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { epsilon: 1.5, ..Default::default() }.validate().is_err());
        let d = Some(Discrepancy { varrho: 0.0, delta: 1.0 });
        assert!(SolverConfig { discrepancy: d, ..Default::default() }.validate().is_err());
    }
}
