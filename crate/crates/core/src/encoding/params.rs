use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QmriError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Per-channel box constraints for `(T1, T2, Re ρ, Im ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBox {
    pub t1: Bounds,
    pub t2: Bounds,
    pub rho_re: Bounds,
    pub rho_im: Bounds,
}

impl Default for FeasibleBox {
    fn default() -> Self {
        Self {
            t1: Bounds::new(0.0, 5500.0),
            t2: Bounds::new(0.0, 550.0),
            rho_re: Bounds::new(0.0, 100.0),
            rho_im: Bounds::new(0.0, 100.0),
        }
    }
}

impl FeasibleBox {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("T1", self.t1), ("T2", self.t2), ("rho_re", self.rho_re), ("rho_im", self.rho_im)] {
            if !(b.lower < b.upper) {
                return Err(QmriError::Config(format!(
                    "{name} bounds must satisfy lower < upper, got [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        Ok(())
    }

    pub fn clamp_rho(&self, rho: Complex64) -> Complex64 {
        Complex64::new(self.rho_re.clamp(rho.re), self.rho_im.clamp(rho.im))
    }
}

/// Whether the density is a real scalar or a complex one absorbing phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    #[default]
    Real,
    Complex,
}

/// Per-pixel `(T1, T2, ρ)` on an `n × n` grid with effective domain Ω.
///
/// Values outside Ω are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    n: usize,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub rho: Vec<Complex64>,
    domain: Vec<bool>,
}

impl ParameterMap {
    pub fn new(n: usize, t1: Vec<f64>, t2: Vec<f64>, rho: Vec<Complex64>, domain: Vec<bool>) -> Result<Self> {
        let size = n * n;
        if [t1.len(), t2.len(), rho.len(), domain.len()].iter().any(|&l| l != size) {
            return Err(QmriError::Shape(format!("parameter channels must all hold {n}x{n} values")));
        }
        let mut map = Self { n, t1, t2, rho, domain };
        map.clear_background();
        Ok(map)
    }

    pub fn zeros(n: usize) -> Self {
        let size = n * n;
        Self {
            n,
            t1: vec![0.0; size],
            t2: vec![0.0; size],
            rho: vec![Complex64::default(); size],
            domain: vec![false; size],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> &[bool] {
        &self.domain
    }

    /// Row-major indices of Ω.
    pub fn domain_indices(&self) -> Vec<usize> {
        (0..self.domain.len()).filter(|&k| self.domain[k]).collect()
    }

    /// Replaces Ω and zeroes everything outside it.
    pub fn set_domain(&mut self, domain: Vec<bool>) -> Result<()> {
        if domain.len() != self.n * self.n {
            return Err(QmriError::Shape("domain mask has the wrong size".into()));
        }
        self.domain = domain;
        self.clear_background();
        Ok(())
    }

    /// Ω estimated as the pixels with non-zero density.
    pub fn support(&self) -> Vec<bool> {
        self.rho.iter().map(|r| r.norm() > 0.0).collect()
    }

    pub fn rho_re(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.re).collect()
    }

    pub fn rho_im(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.im).collect()
    }

    pub fn rho_abs(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.norm()).collect()
    }

    fn clear_background(&mut self) {
        for k in 0..self.domain.len() {
            if !self.domain[k] {
                self.t1[k] = 0.0;
                self.t2[k] = 0.0;
                self.rho[k] = Complex64::default();
            }
        }
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(QmriError::Shape(format!("grid {} vs {}", self.n, other.n)));
        }
        Ok(())
    }

    /// Whether every Ω pixel lies inside the box.
    pub fn is_feasible(&self, bx: &FeasibleBox) -> bool {
        self.domain_indices().into_iter().all(|k| {
            bx.t1.contains(self.t1[k])
                && bx.t2.contains(self.t2[k])
                && bx.rho_re.contains(self.rho[k].re)
                && bx.rho_im.contains(self.rho[k].im)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_zeroed() {
        let map = ParameterMap::new(
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![Complex64::new(1.0, 1.0); 4],
            vec![true, false, true, false],
        )
        .unwrap();
        assert_eq!(map.t1, vec![1.0, 0.0, 3.0, 0.0]);
        assert_eq!(map.rho[1], Complex64::default());
        assert_eq!(map.domain_indices(), vec![0, 2]);
    }

    #[test]
    fn shape_checked() {
        assert!(ParameterMap::new(2, vec![0.0; 3], vec![0.0; 4], vec![Complex64::default(); 4], vec![true; 4]).is_err());
    }

    #[test]
    fn default_box() {
        let b = FeasibleBox::default();
        b.validate().unwrap();
        assert_eq!(b.t1.clamp(7000.0), 5500.0);
        assert_eq!(b.t2.clamp(-1.0), 0.0);
        let bad = FeasibleBox { t2: Bounds::new(5.0, 5.0), ..b };
        assert!(bad.validate().is_err());
    }
}
