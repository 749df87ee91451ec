//! Fourier-space data model: unitary DFT, sampling masks, the nonlinear
//! operator `Q(x) = P F (ρ ⊙ T_xy M(θ))` and its Jacobian.

mod fft;
mod io;
mod mask;
mod operator;
mod params;

pub use fft::{dft2, idft2, Fft2};
pub use io::{read_kspace, write_kspace, KSpaceSidecar};
pub use mask::{cartesian_mask, radial_mask, MaskDescriptor, SamplingMask};
pub use operator::{
    forward_q, jacobian_adjoint_apply, jacobian_apply, signal_images, Encoder, JacobianCache, Perturbation,
};
pub use params::{Bounds, FeasibleBox, ParameterMap, RhoMode};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QmriError, Result};

/// Provenance of synthetic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub sigma: f64,
    pub seed: u64,
}

/// Masked k-space frames, stored frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    values: Vec<Complex64>,
    mask: SamplingMask,
    pub noise: Option<NoiseInfo>,
}

impl KSpaceData {
    /// Fails if any value outside the mask is non-zero.
    pub fn new(mask: SamplingMask, values: Vec<Complex64>, noise: Option<NoiseInfo>) -> Result<Self> {
        let size = mask.n() * mask.n();
        if values.len() != size * mask.len() {
            return Err(QmriError::Shape(format!(
                "expected {} frames of {}x{} values, got {} values",
                mask.len(),
                mask.n(),
                mask.n(),
                values.len()
            )));
        }
        for (l, frame) in values.chunks(size).enumerate() {
            let pattern = mask.frame(l);
            if frame.iter().zip(pattern).any(|(v, &m)| !m && *v != Complex64::default()) {
                return Err(QmriError::Format(format!("frame {l} has data outside its sampling mask")));
            }
        }
        Ok(Self { values, mask, noise })
    }

    pub fn zeros(mask: SamplingMask) -> Self {
        let values = vec![Complex64::default(); mask.n() * mask.n() * mask.len()];
        Self { values, mask, noise: None }
    }

    pub(crate) fn from_masked(mask: SamplingMask, values: Vec<Complex64>) -> Self {
        Self { values, mask, noise: None }
    }

    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn frame(&self, l: usize) -> &[Complex64] {
        let size = self.n() * self.n();
        &self.values[l * size..(l + 1) * size]
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `self - other` on the same mask.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self::from_masked(self.mask.clone(), values))
    }

    /// Real inner product `Re Σ conj(a) b`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a.conj() * b).re).sum())
    }

    /// First `len` frames.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        let size = self.n() * self.n();
        Self {
            values: self.values[..len * size].to_vec(),
            mask: self.mask.with_len(len),
            noise: self.noise,
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n() != other.n() || self.len() != other.len() || self.mask.descriptor() != other.mask.descriptor() {
            return Err(QmriError::Shape("k-space data sets have different shapes or masks".into()));
        }
        Ok(())
    }
}
