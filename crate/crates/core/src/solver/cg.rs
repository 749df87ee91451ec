use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Stop once `‖b − A x‖ ≤ tol ‖b‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSummary {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients from `x = 0` for a symmetric positive semi-definite
/// operator. Returns the iterate with the smallest residual seen.
pub fn conjugate_gradient<F>(mut op: F, b: &[f64], cfg: &CgConfig) -> (Vec<f64>, CgSummary)
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if bnorm == 0.0 {
        return (x, CgSummary { iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (x.clone(), 1.0);
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let ap = op(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let a = rr / pap;
        for i in 0..x.len() {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        iterations += 1;
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= cfg.tol {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    let (x, rel) = best;
    (x, CgSummary { iterations, relative_residual: rel, converged: rel <= cfg.tol })
}
