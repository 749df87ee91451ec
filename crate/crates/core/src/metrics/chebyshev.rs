//! Monte Carlo check of the Chebyshev bound for stacked least squares.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmriError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevConfig {
    /// Unknowns per problem.
    pub p: usize,
    /// Rows of each block `A_ℓ`.
    pub d: usize,
    pub l_values: Vec<usize>,
    pub sigma: f64,
    pub trials: usize,
    pub epsilons: Vec<f64>,
    /// Squared singular values of every block lie in `[c, C]`.
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for ChebyshevConfig {
    fn default() -> Self {
        Self {
            p: 4,
            d: 8,
            l_values: vec![4, 16, 64],
            sigma: 1.0,
            trials: 10_000,
            epsilons: vec![0.1, 0.2, 0.3, 0.5, 1.0],
            band: (0.5, 2.0),
            seed: 7,
        }
    }
}

impl ChebyshevConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, cc) = self.band;
        if self.p == 0 || self.d < self.p {
            return Err(QmriError::Config(format!("need 0 < p <= d, got p={} d={}", self.p, self.d)));
        }
        if !(c > 0.0 && cc >= c && cc.is_finite()) {
            return Err(QmriError::Config(format!("singular value band must satisfy 0 < c <= C, got ({c}, {cc})")));
        }
        if self.l_values.iter().any(|&l| l == 0) || self.trials == 0 {
            return Err(QmriError::Config("block counts and trial count must be positive".into()));
        }
        if !(self.sigma >= 0.0) || self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(QmriError::Config("sigma must be non-negative and every epsilon positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevRow {
    pub l: usize,
    pub epsilon: f64,
    /// Fraction of trials with `‖ζ_ls − ζ*‖ > ε`.
    pub empirical: f64,
    /// `σ² Tr((AᵀA)⁻¹) / ε²`.
    pub bound: f64,
    pub trace: f64,
}

impl ChebyshevRow {
    pub fn csv_header() -> &'static str {
        "L,epsilon,empirical,bound,trace"
    }

    pub fn to_csv(&self) -> String {
        format!("{},{},{:.6e},{:.6e},{:.6e}", self.l, self.epsilon, self.empirical, self.bound, self.trace)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `U diag(s) Vᵀ` with orthonormal `U` (d×p), orthogonal `V` and `s²` uniform in the band.
fn banded_block(rng: &mut ChaCha8Rng, p: usize, d: usize, band: (f64, f64)) -> DMatrix<f64> {
    let u = gaussian(rng, d, p).qr().q();
    let v = gaussian(rng, p, p).qr().q();
    let s = DVector::from_fn(p, |_, _| rng.random_range(band.0..=band.1).sqrt());
    u * DMatrix::from_diagonal(&s) * v.transpose()
}

/// Empirical exceedance probabilities against the Chebyshev bound for each
/// `(L, ε)`.
pub fn chebyshev_trial(cfg: &ChebyshevConfig) -> Result<Vec<ChebyshevRow>> {
    cfg.validate()?;
    let (p, d) = (cfg.p, cfg.d);
    let mut rows = Vec::new();
    for &l in &cfg.l_values {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(l as u64);
        let mut a = DMatrix::zeros(l * d, p);
        for b in 0..l {
            a.rows_mut(b * d, d).copy_from(&banded_block(&mut rng, p, d, cfg.band));
        }
        let gram = a.transpose() * &a;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| QmriError::Domain(format!("stacked matrix for L={l} is rank deficient")))?;
        let inv = chol.inverse();
        let trace = inv.trace();
        let zeta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let clean = &a * &zeta;

        const CHUNK: usize = 1000;
        let chunks = cfg.trials.div_ceil(CHUNK);
        let counts: Vec<Vec<usize>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
                rng.set_stream(((l as u64) << 32) | c as u64);
                let mut hits = vec![0usize; cfg.epsilons.len()];
                let count = CHUNK.min(cfg.trials - c * CHUNK);
                for _ in 0..count {
                    let y = DVector::from_fn(l * d, |i, _| clean[i] + cfg.sigma * rng.sample::<f64, _>(StandardNormal));
                    let est = chol.solve(&(a.transpose() * y));
                    let err = (est - &zeta).norm();
                    for (h, &eps) in hits.iter_mut().zip(&cfg.epsilons) {
                        if err > eps {
                            *h += 1;
                        }
                    }
                }
                hits
            })
            .collect();
        for (i, &eps) in cfg.epsilons.iter().enumerate() {
            let hits: usize = counts.iter().map(|c| c[i]).sum();
            rows.push(ChebyshevRow {
                l,
                epsilon: eps,
                empirical: hits as f64 / cfg.trials as f64,
                bound: cfg.sigma * cfg.sigma * trace / (eps * eps),
                trace,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(QmriError::Shape("slope needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(QmriError::Domain("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(QmriError::Domain("slope needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_respect_the_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = banded_block(&mut rng, 4, 8, (0.5, 2.0));
            let sv = a.singular_values();
            assert!(sv.iter().all(|&s| s * s >= 0.5 - 1e-12 && s * s <= 2.0 + 1e-12));
        }
    }

    #[test]
    fn noiseless_trials_never_exceed() {
        let cfg = ChebyshevConfig { sigma: 0.0, trials: 50, l_values: vec![2], ..Default::default() };
        let rows = chebyshev_trial(&cfg).unwrap();
        assert!(rows.iter().all(|r| r.empirical == 0.0 && r.bound == 0.0));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 / x).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ChebyshevConfig { d: 2, ..Default::default() }.validate().is_err());
        assert!(ChebyshevConfig { band: (0.0, 1.0), ..Default::default() }.validate().is_err());
        assert!(ChebyshevConfig { epsilons: vec![0.0], ..Default::default() }.validate().is_err());
    }
}
