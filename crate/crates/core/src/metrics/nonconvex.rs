//! Numerical certificate that the Bloch image is not convex.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{simulate_into, PulseSequence, TissueParams, Vec3};
use crate::dictionary::colon;
use crate::error::{QmriError, Result};

/// Regular `(T1, T2)` scan; ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub t1: (f64, f64, f64),
    pub t2: (f64, f64, f64),
    /// Grid points refined by local search.
    pub refine: usize,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self { t1: (10.0, 10.0, 5500.0), t2: (1.0, 1.0, 550.0), refine: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `½ M(θᵃ) + ½ M(θᵇ)`.
    pub midpoint: Vec<Vec3>,
    /// Smallest `‖M(θ) − y‖` over the grid.
    pub grid_min: f64,
    /// Smallest distance after refinement; the reported margin.
    pub margin: f64,
    pub argmin: TissueParams,
    /// Grid steps in T1 and T2. The margin is only as reliable as this
    /// resolution and the local search allow.
    pub resolution: (f64, f64),
}

impl Certificate {
    pub fn is_valid(&self) -> bool {
        self.margin > 0.0
    }
}

struct Probe<'a> {
    seq: &'a PulseSequence,
    y: &'a [Vec3],
}

impl Probe<'_> {
    fn distance(&self, t1: f64, t2: f64, frames: &mut [Vec3]) -> f64 {
        simulate_into(t1, t2, self.seq, frames, None);
        frames.iter().zip(self.y).map(|(m, y)| (m - y).norm_squared()).sum::<f64>().sqrt()
    }

    /// Levenberg-Marquardt with Marquardt scaling inside the grid box.
    fn refine(&self, start: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> (f64, (f64, f64)) {
        let len = self.seq.len();
        let mut frames = vec![Vec3::zeros(); len];
        let mut derivs = vec![[Vec3::zeros(); 2]; len];
        let mut x = Vector2::new(start.0, start.1);
        let mut best = self.distance(x[0], x[1], &mut frames);
        let mut mu: f64 = 1e-3;
        for _ in 0..200 {
            simulate_into(x[0], x[1], self.seq, &mut frames, Some(&mut derivs));
            let mut jtj = Matrix2::<f64>::zeros();
            let mut jtr = Vector2::<f64>::zeros();
            for ((m, y), d) in frames.iter().zip(self.y).zip(&derivs) {
                let r = m - y;
                for a in 0..2 {
                    jtr[a] += d[a].dot(&r);
                    for b in 0..2 {
                        jtj[(a, b)] += d[a].dot(&d[b]);
                    }
                }
            }
            let mut improved = false;
            while mu < 1e12 {
                let mut lhs = jtj;
                for a in 0..2 {
                    lhs[(a, a)] += mu * jtj[(a, a)].max(1e-300);
                }
                let Some(h) = lhs.try_inverse().map(|inv| -(inv * jtr)) else {
                    mu *= 10.0;
                    continue;
                };
                let cand = Vector2::new((x[0] + h[0]).clamp(lo.0, hi.0), (x[1] + h[1]).clamp(lo.1, hi.1));
                let d = self.distance(cand[0], cand[1], &mut frames);
                if d < best {
                    let gain = best - d;
                    best = d;
                    x = cand;
                    mu = (mu / 10.0).max(1e-12);
                    improved = gain > 1e-15 * best.max(1e-300);
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (best, (x[0], x[1]))
    }
}

/// Distance from the midpoint of two Bloch trajectories to the sampled Bloch
/// image, minimized over a grid and refined locally.
pub fn nonconvexity_certificate(
    theta_a: TissueParams,
    theta_b: TissueParams,
    seq: &PulseSequence,
    grid: &ParamGrid,
) -> Result<Certificate> {
    theta_a.validate()?;
    theta_b.validate()?;
    if seq.len() < 2 {
        return Err(QmriError::Domain("the certificate needs at least two frames".into()));
    }
    let t1s = colon(grid.t1.0, grid.t1.1, grid.t1.2);
    let t2s = colon(grid.t2.0, grid.t2.1, grid.t2.2);
    if t1s.is_empty() || t2s.is_empty() || t1s[0] <= 0.0 || t2s[0] <= 0.0 {
        return Err(QmriError::Config("the certificate grid must be non-empty and positive".into()));
    }
    let len = seq.len();
    let mut fa = vec![Vec3::zeros(); len];
    let mut fb = vec![Vec3::zeros(); len];
    simulate_into(theta_a.t1, theta_a.t2, seq, &mut fa, None);
    simulate_into(theta_b.t1, theta_b.t2, seq, &mut fb, None);
    let midpoint: Vec<Vec3> = fa.iter().zip(&fb).map(|(a, b)| 0.5 * (a + b)).collect();
    let probe = Probe { seq, y: &midpoint };

    let mut scores: Vec<(f64, usize)> = (0..t1s.len() * t2s.len())
        .into_par_iter()
        .map_init(
            || vec![Vec3::zeros(); len],
            |frames, idx| (probe.distance(t1s[idx / t2s.len()], t2s[idx % t2s.len()], frames), idx),
        )
        .collect();
    scores.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let grid_min = scores[0].0;
    let lo = (t1s[0], t2s[0]);
    let hi = (*t1s.last().expect("non-empty"), *t2s.last().expect("non-empty"));
    let refined = scores
        .iter()
        .take(grid.refine.max(1))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(_, idx)| probe.refine((t1s[idx / t2s.len()], t2s[idx % t2s.len()]), lo, hi))
        .collect::<Vec<_>>();
    let (margin, arg) = refined
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one refinement");
    Ok(Certificate {
        midpoint,
        grid_min,
        margin,
        argmin: TissueParams { t1: arg.0, t2: arg.1 },
        resolution: (grid.t1.1, grid.t2.1),
    })
}
