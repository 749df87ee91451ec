use std::hash::{DefaultHasher, Hash, Hasher};

use num_complex::Complex64;
use rayon::prelude::*;

use super::{Fft2, KSpaceData, ParameterMap, RhoMode, SamplingMask};
use crate::bloch::{simulate_into, PulseSequence, Vec3};
use crate::error::{QmriError, Result};

/// Masked unitary Fourier transform `P F` frame by frame, and its adjoint.
#[derive(Debug, Clone)]
pub struct Encoder {
    fft: Fft2,
    mask: SamplingMask,
}

impl Encoder {
    pub fn new(mask: &SamplingMask) -> Result<Self> {
        Ok(Self { fft: Fft2::new(mask.n())?, mask: mask.clone() })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    fn size(&self) -> usize {
        self.mask.n() * self.mask.n()
    }

    /// `P F` applied to `L` image frames.
    pub fn encode(&self, images: &[Complex64]) -> KSpaceData {
        let size = self.size();
        assert_eq!(images.len(), size * self.mask.len());
        let mut values = images.to_vec();
        values.par_chunks_mut(size).enumerate().for_each(|(l, frame)| {
            self.fft.forward(frame);
            for (v, &m) in frame.iter_mut().zip(self.mask.frame(l)) {
                if !m {
                    *v = Complex64::default();
                }
            }
        });
        KSpaceData::from_masked(self.mask.clone(), values)
    }

    /// `F⁻¹ Pᵀ` applied to k-space frames.
    pub fn adjoint(&self, data: &KSpaceData) -> Vec<Complex64> {
        let mut images = data.values().to_vec();
        self.adjoint_in_place(&mut images);
        images
    }

    pub fn adjoint_in_place(&self, values: &mut [Complex64]) {
        let size = self.size();
        values.par_chunks_mut(size).enumerate().for_each(|(l, frame)| {
            for (v, &m) in frame.iter_mut().zip(self.mask.frame(l)) {
                if !m {
                    *v = Complex64::default();
                }
            }
            self.fft.inverse(frame);
        });
    }

    /// `F⁻¹ Pᵀ P F` in place; the image-space normal operator.
    pub fn normal_in_place(&self, images: &mut [Complex64]) {
        let size = self.size();
        images.par_chunks_mut(size).enumerate().for_each(|(l, frame)| {
            self.fft.forward(frame);
            for (v, &m) in frame.iter_mut().zip(self.mask.frame(l)) {
                if !m {
                    *v = Complex64::default();
                }
            }
            self.fft.inverse(frame);
        });
    }
}

fn check_shapes(x: &ParameterMap, seq: &PulseSequence, mask: &SamplingMask) -> Result<()> {
    if x.n() != mask.n() {
        return Err(QmriError::Shape(format!("map is {}x{} but mask is {}x{}", x.n(), x.n(), mask.n(), mask.n())));
    }
    if seq.len() != mask.len() {
        return Err(QmriError::Shape(format!("sequence has {} pulses but mask has {} frames", seq.len(), mask.len())));
    }
    Ok(())
}

/// Image frames `ρ ⊙ T_xy M_ℓ(θ)`, frame-major.
pub fn signal_images(x: &ParameterMap, seq: &PulseSequence) -> Vec<Complex64> {
    let n2 = x.n() * x.n();
    let len = seq.len();
    let pixels = x.domain_indices();
    let traces: Vec<Vec<Complex64>> = pixels
        .par_iter()
        .map_init(
            || vec![Vec3::zeros(); len],
            |frames, &k| {
                simulate_into(x.t1[k], x.t2[k], seq, frames, None);
                frames.iter().map(|m| x.rho[k] * Complex64::new(m.x, m.y)).collect()
            },
        )
        .collect();
    let mut images = vec![Complex64::default(); n2 * len];
    for (&k, trace) in pixels.iter().zip(&traces) {
        for (l, v) in trace.iter().enumerate() {
            images[l * n2 + k] = *v;
        }
    }
    images
}

/// `Q(x)`: masked DFT of the simulated transverse signal.
pub fn forward_q(x: &ParameterMap, seq: &PulseSequence, mask: &SamplingMask) -> Result<KSpaceData> {
    check_shapes(x, seq, mask)?;
    Ok(Encoder::new(mask)?.encode(&signal_images(x, seq)))
}

/// Perturbation of the Ω pixels of a [`JacobianCache`], in cache pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub rho: Vec<Complex64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
}

impl Perturbation {
    pub fn zeros(pixels: usize) -> Self {
        Self { rho: vec![Complex64::default(); pixels], t1: vec![0.0; pixels], t2: vec![0.0; pixels] }
    }

    pub fn len(&self) -> usize {
        self.t1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t1.is_empty()
    }

    /// Real inner product with complex entries split into two reals.
    pub fn dot(&self, other: &Self) -> f64 {
        let r: f64 = self.rho.iter().zip(&other.rho).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let t1: f64 = self.t1.iter().zip(&other.t1).map(|(a, b)| a * b).sum();
        let t2: f64 = self.t2.iter().zip(&other.t2).map(|(a, b)| a * b).sum();
        r + t1 + t2
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Channel-major real vector `[T1 | T2 | Re ρ | Im ρ]`; `Im ρ` is dropped
    /// for real densities.
    pub fn to_flat(&self, mode: RhoMode) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 4);
        out.extend_from_slice(&self.t1);
        out.extend_from_slice(&self.t2);
        out.extend(self.rho.iter().map(|r| r.re));
        if mode == RhoMode::Complex {
            out.extend(self.rho.iter().map(|r| r.im));
        }
        out
    }

    pub fn from_flat(flat: &[f64], mode: RhoMode) -> Self {
        let channels = match mode {
            RhoMode::Real => 3,
            RhoMode::Complex => 4,
        };
        let np = flat.len() / channels;
        assert_eq!(np * channels, flat.len(), "flat vector length is not a multiple of the channel count");
        let rho = (0..np)
            .map(|k| {
                let im = if mode == RhoMode::Complex { flat[3 * np + k] } else { 0.0 };
                Complex64::new(flat[2 * np + k], im)
            })
            .collect();
        Self { t1: flat[..np].to_vec(), t2: flat[np..2 * np].to_vec(), rho }
    }
}

/// Transverse signal and its θ-derivatives at every Ω pixel of a map.
#[derive(Debug, Clone)]
pub struct JacobianCache {
    n: usize,
    len: usize,
    pixels: Vec<usize>,
    rho: Vec<Complex64>,
    /// `T_xy M_ℓ`, `T_xy ∂M_ℓ/∂T1`, `T_xy ∂M_ℓ/∂T2`, each indexed `ℓ * np + k`.
    g: Vec<Complex64>,
    g1: Vec<Complex64>,
    g2: Vec<Complex64>,
    key: u64,
}

fn map_key(x: &ParameterMap) -> u64 {
    let mut h = DefaultHasher::new();
    x.n().hash(&mut h);
    for k in x.domain_indices() {
        k.hash(&mut h);
        x.t1[k].to_bits().hash(&mut h);
        x.t2[k].to_bits().hash(&mut h);
        x.rho[k].re.to_bits().hash(&mut h);
        x.rho[k].im.to_bits().hash(&mut h);
    }
    h.finish()
}

impl JacobianCache {
    pub fn build(x: &ParameterMap, seq: &PulseSequence) -> Self {
        let len = seq.len();
        let pixels = x.domain_indices();
        let np = pixels.len();
        let traces: Vec<Vec<[Complex64; 3]>> = pixels
            .par_iter()
            .map_init(
                || (vec![Vec3::zeros(); len], vec![[Vec3::zeros(); 2]; len]),
                |(frames, derivs), &k| {
                    simulate_into(x.t1[k], x.t2[k], seq, frames, Some(derivs));
                    frames
                        .iter()
                        .zip(derivs.iter())
                        .map(|(m, d)| {
                            [
                                Complex64::new(m.x, m.y),
                                Complex64::new(d[0].x, d[0].y),
                                Complex64::new(d[1].x, d[1].y),
                            ]
                        })
                        .collect()
                },
            )
            .collect();
        let mut g = vec![Complex64::default(); len * np];
        let mut g1 = g.clone();
        let mut g2 = g.clone();
        for (k, trace) in traces.iter().enumerate() {
            for (l, v) in trace.iter().enumerate() {
                g[l * np + k] = v[0];
                g1[l * np + k] = v[1];
                g2[l * np + k] = v[2];
            }
        }
        let rho = pixels.iter().map(|&k| x.rho[k]).collect();
        Self { n: x.n(), len, pixels, rho, g, g1, g2, key: map_key(x) }
    }

    /// Fails unless the cache was built from exactly this map.
    pub fn check(&self, x: &ParameterMap) -> Result<()> {
        if x.n() != self.n || map_key(x) != self.key {
            return Err(QmriError::CacheMismatch);
        }
        Ok(())
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> &[Complex64] {
        &self.rho
    }

    /// `(g, ∂g/∂T1, ∂g/∂T2)` of pixel `k` (cache order) at frame `l`.
    pub fn signal(&self, l: usize, k: usize) -> (Complex64, Complex64, Complex64) {
        let i = l * self.pixels.len() + k;
        (self.g[i], self.g1[i], self.g2[i])
    }

    /// `ρ ⊙ T_xy M_ℓ` as full image frames.
    pub fn signal_images(&self) -> Vec<Complex64> {
        let np = self.pixels.len();
        let n2 = self.n * self.n;
        let mut images = vec![Complex64::default(); n2 * self.len];
        for l in 0..self.len {
            let frame = &mut images[l * n2..(l + 1) * n2];
            for (k, &p) in self.pixels.iter().enumerate() {
                frame[p] = self.rho[k] * self.g[l * np + k];
            }
        }
        images
    }

    /// Image-space Jacobian action `h_ρ g + ρ (g1 h_T1 + g2 h_T2)`.
    pub fn apply_images(&self, h: &Perturbation) -> Vec<Complex64> {
        let np = self.pixels.len();
        let n2 = self.n * self.n;
        let mut images = vec![Complex64::default(); n2 * self.len];
        images.par_chunks_mut(n2).enumerate().for_each(|(l, frame)| {
            let base = l * np;
            for (k, &p) in self.pixels.iter().enumerate() {
                let i = base + k;
                frame[p] = h.rho[k] * self.g[i] + self.rho[k] * (self.g1[i] * h.t1[k] + self.g2[i] * h.t2[k]);
            }
        });
        images
    }

    /// Adjoint of [`JacobianCache::apply_images`] for image frames `z`.
    pub fn adjoint_images(&self, z: &[Complex64], mode: RhoMode) -> Perturbation {
        let np = self.pixels.len();
        let n2 = self.n * self.n;
        let mut out = Perturbation::zeros(np);
        for l in 0..self.len {
            let frame = &z[l * n2..(l + 1) * n2];
            let base = l * np;
            for (k, &p) in self.pixels.iter().enumerate() {
                let i = base + k;
                let zk = frame[p];
                out.rho[k] += self.g[i].conj() * zk;
                let rz = self.rho[k].conj() * zk;
                out.t1[k] += (self.g1[i].conj() * rz).re;
                out.t2[k] += (self.g2[i].conj() * rz).re;
            }
        }
        if mode == RhoMode::Real {
            for r in &mut out.rho {
                r.im = 0.0;
            }
        }
        out
    }
}

/// Jacobian of `Q` at `x` applied to `h`.
pub fn jacobian_apply(
    x: &ParameterMap,
    h: &Perturbation,
    cache: &JacobianCache,
    encoder: &Encoder,
) -> Result<KSpaceData> {
    cache.check(x)?;
    check_perturbation(h, cache)?;
    Ok(encoder.encode(&cache.apply_images(h)))
}

/// Adjoint Jacobian applied to k-space data; the density channel is complex.
pub fn jacobian_adjoint_apply(
    x: &ParameterMap,
    residual: &KSpaceData,
    cache: &JacobianCache,
    encoder: &Encoder,
) -> Result<Perturbation> {
    cache.check(x)?;
    if residual.n() != cache.n || residual.len() != cache.len {
        return Err(QmriError::Shape("residual does not match the cached map".into()));
    }
    Ok(cache.adjoint_images(&encoder.adjoint(residual), RhoMode::Complex))
}

fn check_perturbation(h: &Perturbation, cache: &JacobianCache) -> Result<()> {
    let np = cache.num_pixels();
    if h.t1.len() != np || h.t2.len() != np || h.rho.len() != np {
        return Err(QmriError::Shape(format!("perturbation must cover the {np} domain pixels")));
    }
    Ok(())
}
