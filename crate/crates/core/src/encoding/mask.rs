use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{QmriError, Result};

/// Generator of a sampling pattern; the full mask is reproducible from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskDescriptor {
    Full,
    /// Every `s`-th row, shifted by one row per frame.
    Cartesian { s: usize },
    /// `s` lines per frame out of `p` equispaced angles.
    Radial { p: usize, s: usize },
}

impl MaskDescriptor {
    /// Nominal under-sampling factor, used for default step sizes.
    pub fn factor(&self) -> usize {
        match *self {
            Self::Full => 1,
            Self::Cartesian { s } => s,
            Self::Radial { p, s } => (p / s).max(1),
        }
    }
}

/// Periodic per-frame k-space sampling pattern in FFT order (DC at index 0).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    n: usize,
    len: usize,
    descriptor: MaskDescriptor,
    patterns: Vec<Vec<bool>>,
}

impl SamplingMask {
    pub fn new(n: usize, len: usize, descriptor: MaskDescriptor) -> Result<Self> {
        if n == 0 || len == 0 {
            return Err(QmriError::Shape("mask needs a non-empty grid and sequence".into()));
        }
        let patterns = match descriptor {
            MaskDescriptor::Full => vec![vec![true; n * n]],
            MaskDescriptor::Cartesian { s } => {
                let _ = cartesian_rows(n, s, 1)?;
                (1..=s)
                    .map(|ell| {
                        let rows = cartesian_rows(n, s, ell).expect("validated above");
                        let mut grid = vec![false; n * n];
                        for i in rows {
                            grid[(i - 1) * n..i * n].fill(true);
                        }
                        grid
                    })
                    .collect()
            }
            MaskDescriptor::Radial { p, s } => {
                if s == 0 || p < s {
                    return Err(QmriError::Config(format!("radial mask needs p >= s >= 1, got p={p}, s={s}")));
                }
                let period = if p % s == 0 { p / s } else { p };
                (1..=period).map(|ell| radial_mask(n, p, s, ell)).collect()
            }
        };
        Ok(Self { n, len, descriptor, patterns })
    }

    pub fn full(n: usize, len: usize) -> Self {
        Self::new(n, len, MaskDescriptor::Full).expect("full mask is always valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn descriptor(&self) -> MaskDescriptor {
        self.descriptor
    }

    pub fn is_full(&self) -> bool {
        matches!(self.descriptor, MaskDescriptor::Full)
    }

    pub fn period(&self) -> usize {
        self.patterns.len()
    }

    /// Pattern of frame `l` (0-based).
    pub fn frame(&self, l: usize) -> &[bool] {
        &self.patterns[l % self.patterns.len()]
    }

    /// Same pattern for a different sequence length.
    pub fn with_len(&self, len: usize) -> Self {
        Self { len, ..self.clone() }
    }

    /// Fraction of the grid sampled by at least one frame.
    pub fn coverage(&self) -> f64 {
        let frames = self.len.min(self.period());
        let hit = (0..self.n * self.n)
            .filter(|&k| (0..frames).any(|l| self.frame(l)[k]))
            .count();
        hit as f64 / (self.n * self.n) as f64
    }
}

/// 1-based rows `i` with `i mod s == ell mod s`.
pub fn cartesian_mask(n: usize, s: usize, ell: usize) -> Result<BTreeSet<usize>> {
    cartesian_rows(n, s, ell).map(|rows| rows.collect())
}

fn cartesian_rows(n: usize, s: usize, ell: usize) -> Result<impl Iterator<Item = usize>> {
    if s == 0 || n % s != 0 {
        return Err(QmriError::Config(format!("sub-sampling factor {s} does not divide {n}")));
    }
    let xi = ell % s;
    Ok((1..=n).filter(move |i| i % s == xi))
}

/// Frame `ell` (1-based) of the radial pattern: `s` digital lines through the
/// k-space centre at angles `((k p / s + ell - 1) mod p) π / p`.
pub fn radial_mask(n: usize, p: usize, s: usize, ell: usize) -> Vec<bool> {
    let mut grid = vec![false; n * n];
    let half = (n / 2) as i64;
    let wrap = |c: i64| c.rem_euclid(n as i64) as usize;
    for k in 0..s {
        let index = (k * p / s + ell + p - 1) % p;
        let angle = index as f64 * std::f64::consts::PI / p as f64;
        let (sin, cos) = angle.sin_cos();
        if cos.abs() >= sin.abs() {
            let slope = sin / cos;
            for x in -half..half {
                let y = (x as f64 * slope + 0.5).floor() as i64;
                if (-half..half).contains(&y) {
                    grid[wrap(y) * n + wrap(x)] = true;
                }
            }
        } else {
            let slope = cos / sin;
            for y in -half..half {
                let x = (y as f64 * slope + 0.5).floor() as i64;
                if (-half..half).contains(&x) {
                    grid[wrap(y) * n + wrap(x)] = true;
                }
            }
        }
    }
    grid
}
