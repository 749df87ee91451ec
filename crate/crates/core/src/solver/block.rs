//! Exact normal-equation solves when `F⁻¹PᵀPF` couples only small pixel groups.
//!
//! Every mask frame acts in image space as a circular convolution. When the
//! union of kernel supports is a small subgroup of the grid, the Gram matrix
//! `AᵀA` splits into dense blocks over its cosets: single pixels for full
//! sampling, alias columns of `s` pixels for Cartesian sub-sampling.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::encoding::{Fft2, JacobianCache, Perturbation, RhoMode, SamplingMask};

const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BlockStructure {
    n: usize,
    /// Impulse response of each mask pattern, restricted to `support`.
    kernels: Vec<Vec<Complex64>>,
    support: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockSolveStats {
    /// Pixels whose update was skipped because their block was singular.
    pub frozen: usize,
}

fn add(n: usize, a: usize, b: usize) -> usize {
    let (ar, ac) = (a / n, a % n);
    let (br, bc) = (b / n, b % n);
    ((ar + br) % n) * n + (ac + bc) % n
}

fn sub(n: usize, a: usize, b: usize) -> usize {
    let (ar, ac) = (a / n, a % n);
    let (br, bc) = (b / n, b % n);
    ((ar + n - br) % n) * n + (ac + n - bc) % n
}

impl BlockStructure {
    /// `None` when the coupling is not confined to a subgroup of at most
    /// `max_group` pixels.
    pub fn detect(mask: &SamplingMask, max_group: usize) -> Option<Self> {
        let n = mask.n();
        let fft = Fft2::new(n).ok()?;
        let period = mask.period().min(mask.len());
        let responses: Vec<Vec<Complex64>> = (0..period)
            .map(|l| {
                let mut img = vec![Complex64::default(); n * n];
                img[0] = Complex64::new(1.0, 0.0);
                fft.forward(&mut img);
                for (v, &m) in img.iter_mut().zip(mask.frame(l)) {
                    if !m {
                        *v = Complex64::default();
                    }
                }
                fft.inverse(&mut img);
                img
            })
            .collect();
        let support: Vec<usize> = (0..n * n)
            .filter(|&k| k == 0 || responses.iter().any(|r| r[k].norm() > SUPPORT_TOL))
            .collect();
        if support.len() > max_group {
            return None;
        }
        let set: HashSet<usize> = support.iter().copied().collect();
        if !support.iter().all(|&a| support.iter().all(|&b| set.contains(&add(n, a, b)))) {
            return None;
        }
        let kernels = responses.iter().map(|r| support.iter().map(|&k| r[k]).collect()).collect();
        Some(Self { n, kernels, support })
    }

    pub fn group_size(&self) -> usize {
        self.support.len()
    }

    fn kernel(&self, l: usize, offset: usize) -> Complex64 {
        let idx = self.support.iter().position(|&s| s == offset).expect("offset lies in the subgroup");
        self.kernels[l % self.kernels.len()][idx]
    }

    /// Solves `(AᵀA + λI) h = rhs` exactly, group by group.
    pub fn solve(
        &self,
        cache: &JacobianCache,
        rhs: &Perturbation,
        lambda: f64,
        mode: RhoMode,
    ) -> (Perturbation, BlockSolveStats) {
        let n = self.n;
        let channels = if mode == RhoMode::Complex { 4 } else { 3 };
        let mut slot = vec![usize::MAX; n * n];
        for (k, &p) in cache.pixels().iter().enumerate() {
            slot[p] = k;
        }
        let mut seen = vec![false; n * n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &p in cache.pixels() {
            if seen[p] {
                continue;
            }
            let members: Vec<usize> = self
                .support
                .iter()
                .map(|&s| add(n, p, s))
                .filter(|&q| slot[q] != usize::MAX)
                .collect();
            for &q in &members {
                seen[q] = true;
            }
            groups.push(members);
        }
        let solved: Vec<(Vec<usize>, Option<Vec<f64>>)> = groups
            .par_iter()
            .map(|members| {
                let ks: Vec<usize> = members.iter().map(|&q| slot[q]).collect();
                let h = self.solve_group(cache, members, &ks, rhs, lambda, channels);
                (ks, h)
            })
            .collect();

        let mut out = Perturbation::zeros(cache.num_pixels());
        let mut stats = BlockSolveStats::default();
        for (ks, h) in solved {
            match h {
                Some(h) => {
                    for (i, &k) in ks.iter().enumerate() {
                        let v = &h[i * channels..(i + 1) * channels];
                        out.t1[k] = v[0];
                        out.t2[k] = v[1];
                        out.rho[k] = Complex64::new(v[2], if channels == 4 { v[3] } else { 0.0 });
                    }
                }
                None => stats.frozen += ks.len(),
            }
        }
        (out, stats)
    }

    fn solve_group(
        &self,
        cache: &JacobianCache,
        members: &[usize],
        ks: &[usize],
        rhs: &Perturbation,
        lambda: f64,
        channels: usize,
    ) -> Option<Vec<f64>> {
        let q = members.len();
        let dim = q * channels;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut cols = vec![Complex64::default(); dim];
        let kernel_index: Vec<Vec<Complex64>> = (0..self.kernels.len())
            .map(|l| {
                let mut row = Vec::with_capacity(q * q);
                for &u in members {
                    for &v in members {
                        row.push(self.kernel(l, sub(self.n, u, v)));
                    }
                }
                row
            })
            .collect();
        for l in 0..cache.len() {
            for (i, &k) in ks.iter().enumerate() {
                let (g, g1, g2) = cache.signal(l, k);
                let rho = cache.rho()[k];
                let c = &mut cols[i * channels..(i + 1) * channels];
                c[0] = rho * g1;
                c[1] = rho * g2;
                c[2] = g;
                if channels == 4 {
                    c[3] = Complex64::new(0.0, 1.0) * g;
                }
            }
            let kern = &kernel_index[l % kernel_index.len()];
            for u in 0..q {
                for v in 0..q {
                    let kv = kern[u * q + v];
                    if kv == Complex64::default() {
                        continue;
                    }
                    for a in 0..channels {
                        let ca = cols[u * channels + a].conj() * kv;
                        for b in 0..channels {
                            gram[(u * channels + a, v * channels + b)] += (ca * cols[v * channels + b]).re;
                        }
                    }
                }
            }
        }
        let mut b = DVector::<f64>::zeros(dim);
        for (i, &k) in ks.iter().enumerate() {
            b[i * channels] = rhs.t1[k];
            b[i * channels + 1] = rhs.t2[k];
            b[i * channels + 2] = rhs.rho[k].re;
            if channels == 4 {
                b[i * channels + 3] = rhs.rho[k].im;
            }
        }
        for i in 0..dim {
            gram[(i, i)] += lambda;
        }
        solve_spd(gram, b).map(|h| h.iter().copied().collect())
    }
}

/// Jacobi-scaled Cholesky; variables with a zero diagonal are held at zero.
/// Returns `None` when the remaining system is numerically singular.
fn solve_spd(gram: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let dim = b.len();
    let active: Vec<usize> = (0..dim).filter(|&i| gram[(i, i)] > 0.0).collect();
    let m = active.len();
    let mut out = DVector::zeros(dim);
    if m == 0 {
        return Some(out);
    }
    let scale: Vec<f64> = active.iter().map(|&i| 1.0 / gram[(i, i)].sqrt()).collect();
    let a = DMatrix::from_fn(m, m, |i, j| gram[(active[i], active[j])] * scale[i] * scale[j]);
    let rhs = DVector::from_fn(m, |i, _| b[active[i]] * scale[i]);
    let eig = a.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(lo > hi * 1e-14) {
        return None;
    }
    let y = a.cholesky()?.solve(&rhs);
    for (i, &k) in active.iter().enumerate() {
        out[k] = y[i] * scale[i];
    }
    Some(out)
}
