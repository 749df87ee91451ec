use num_complex::Complex64;

use super::{
    conjugate_gradient, project_box, BlockStructure, ChannelSteps, LinearSolver, LinearSummary, SolveReport,
    SolverConfig, Termination,
};
use crate::bloch::PulseSequence;
use crate::encoding::{Encoder, JacobianCache, KSpaceData, ParameterMap, Perturbation, RhoMode};
use crate::error::{QmriError, Result};

/// Largest pixel group handled by the exact block solver.
const MAX_BLOCK: usize = 64;

fn blocks_for(encoder: &Encoder, choice: LinearSolver) -> Result<Option<BlockStructure>> {
    match choice {
        LinearSolver::Cg => Ok(None),
        LinearSolver::Auto => Ok(BlockStructure::detect(encoder.mask(), MAX_BLOCK)),
        LinearSolver::Direct => BlockStructure::detect(encoder.mask(), MAX_BLOCK)
            .map(Some)
            .ok_or_else(|| QmriError::Config("the sampling mask does not admit a direct block solve".into())),
    }
}

fn solve_normal(
    cache: &JacobianCache,
    encoder: &Encoder,
    residual: &KSpaceData,
    lambda: f64,
    cfg: &SolverConfig,
    blocks: Option<&BlockStructure>,
) -> (Perturbation, LinearSummary) {
    let mode = cfg.rho_mode;
    let rhs = cache.adjoint_images(&encoder.adjoint(residual), mode);
    if let Some(blocks) = blocks {
        let (h, stats) = blocks.solve(cache, &rhs, lambda, mode);
        return (h, LinearSummary::Direct { frozen: stats.frozen });
    }
    let b = rhs.to_flat(mode);
    let op = |v: &[f64]| {
        let p = Perturbation::from_flat(v, mode);
        let mut images = cache.apply_images(&p);
        encoder.normal_in_place(&mut images);
        let mut out = cache.adjoint_images(&images, mode).to_flat(mode);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += lambda * vi;
        }
        out
    };
    let (h, summary) = conjugate_gradient(op, &b, &cfg.cg);
    (Perturbation::from_flat(&h, mode), LinearSummary::Cg(summary))
}

/// Minimizer of `‖A h − (D − Q(x))‖² + λ‖h‖²` with `A` the Jacobian at `x`.
pub fn lm_step(
    x: &ParameterMap,
    data: &KSpaceData,
    lambda: f64,
    cache: &JacobianCache,
    encoder: &Encoder,
    cfg: &SolverConfig,
) -> Result<(Perturbation, LinearSummary)> {
    cache.check(x)?;
    if !(lambda >= 0.0) {
        return Err(QmriError::Config(format!("damping must be non-negative, got {lambda}")));
    }
    let residual = data.sub(&encoder.encode(&cache.signal_images()))?;
    let blocks = blocks_for(encoder, cfg.linear_solver)?;
    Ok(solve_normal(cache, encoder, &residual, lambda, cfg, blocks.as_ref()))
}

fn check_inputs(x0: &ParameterMap, data: &KSpaceData, seq: &PulseSequence) -> Result<()> {
    if x0.n() != data.n() {
        return Err(QmriError::Shape(format!("initial map is {}x{}, data is {}x{}", x0.n(), x0.n(), data.n(), data.n())));
    }
    if seq.len() != data.len() {
        return Err(QmriError::Shape(format!("sequence has {} pulses, data has {} frames", seq.len(), data.len())));
    }
    seq.validate()
}

fn apply_step(x: &ParameterMap, cache: &JacobianCache, h: &Perturbation, cfg: &SolverConfig) -> ParameterMap {
    let mut next = x.clone();
    for (k, &p) in cache.pixels().iter().enumerate() {
        next.t1[p] += h.t1[k];
        next.t2[p] += h.t2[k];
        next.rho[p] += h.rho[k];
        if cfg.rho_mode == RhoMode::Real {
            next.rho[p].im = 0.0;
        }
    }
    if cfg.project {
        project_box(&next, &cfg.bounds)
    } else {
        next
    }
}

fn channel_steps(a: &ParameterMap, b: &ParameterMap, pixels: &[usize]) -> ChannelSteps {
    let mut s = [0.0; 3];
    for &p in pixels {
        s[0] += (a.t1[p] - b.t1[p]).powi(2);
        s[1] += (a.t2[p] - b.t2[p]).powi(2);
        s[2] += (a.rho[p] - b.rho[p]).norm_sqr();
    }
    ChannelSteps { t1: s[0].sqrt(), t2: s[1].sqrt(), rho: s[2].sqrt() }
}

/// Projected Levenberg-Marquardt: `x_{n+1} = P(x_n + h_n)` with damping
/// `λ_n = max(λ0 βⁿ, ε‖Q(x_n) − D‖)`.
pub fn solve_lm(
    x0: &ParameterMap,
    data: &KSpaceData,
    seq: &PulseSequence,
    cfg: &SolverConfig,
) -> Result<(ParameterMap, SolveReport)> {
    cfg.validate()?;
    check_inputs(x0, data, seq)?;
    let encoder = Encoder::new(data.mask())?;
    let blocks = blocks_for(&encoder, cfg.linear_solver)?;
    let mut x = if cfg.project { project_box(x0, &cfg.bounds) } else { x0.clone() };
    if cfg.rho_mode == RhoMode::Real {
        for r in &mut x.rho {
            *r = Complex64::new(r.re, 0.0);
        }
    }
    let mut report = SolveReport {
        residuals: Vec::new(),
        lambdas: Vec::new(),
        steps: Vec::new(),
        linear: Vec::new(),
        termination: Termination::MaxIterations,
        iterates: Vec::new(),
    };
    let mut n = 0;
    loop {
        let cache = JacobianCache::build(&x, seq);
        let residual = data.sub(&encoder.encode(&cache.signal_images()))?;
        let rnorm = residual.norm();
        report.residuals.push(rnorm);
        if cfg.keep_iterates {
            report.iterates.push(x.clone());
        }
        if n == cfg.max_iters {
            report.termination = Termination::MaxIterations;
            break;
        }
        if rnorm == 0.0 {
            report.termination = Termination::ZeroResidual;
            break;
        }
        if let Some(d) = cfg.discrepancy {
            if rnorm <= d.varrho * d.delta {
                report.termination = Termination::Discrepancy;
                break;
            }
        }
        let lambda = cfg.lambda(n, rnorm);
        let (h, summary) = solve_normal(&cache, &encoder, &residual, lambda, cfg, blocks.as_ref());
        let next = apply_step(&x, &cache, &h, cfg);
        let steps = channel_steps(&next, &x, cache.pixels());
        report.lambdas.push(lambda);
        report.linear.push(summary);
        report.steps.push(steps);
        n += 1;
        if steps.t1 == 0.0 && steps.t2 == 0.0 && steps.rho == 0.0 {
            report.residuals.push(rnorm);
            if cfg.keep_iterates {
                report.iterates.push(next.clone());
            }
            x = next;
            report.termination = Termination::ZeroStep;
            break;
        }
        x = next;
    }
    Ok((x, report))
}

/// Projected Gauss-Newton: [`solve_lm`] with `λ_n ≡ 0`.
pub fn solve_gauss_newton(
    x0: &ParameterMap,
    data: &KSpaceData,
    seq: &PulseSequence,
    cfg: &SolverConfig,
) -> Result<(ParameterMap, SolveReport)> {
    let cfg = SolverConfig { lambda0: 0.0, epsilon: 0.0, ..cfg.clone() };
    solve_lm(x0, data, seq, &cfg)
}
