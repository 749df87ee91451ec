//! Dictionary baselines: two-step MRF and projected-Landweber BLIP.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, MatchResult};
use crate::encoding::{Encoder, KSpaceData, ParameterMap, RhoMode};
use crate::error::{QmriError, Result};

/// Restricts matching to `support` when given; otherwise every pixel is matched.
fn pixel_set(n: usize, support: Option<&[bool]>) -> Result<Vec<usize>> {
    match support {
        Some(s) if s.len() != n * n => Err(QmriError::Shape("support mask has the wrong size".into())),
        Some(s) => Ok((0..n * n).filter(|&k| s[k]).collect()),
        None => Ok((0..n * n).collect()),
    }
}

fn check_dict(data: &KSpaceData, dict: &Dictionary) -> Result<()> {
    if dict.len() != data.len() {
        return Err(QmriError::Shape(format!(
            "data has {} frames but dictionary atoms have {}",
            data.len(),
            dict.len()
        )));
    }
    Ok(())
}

fn gather(images: &[Complex64], n2: usize, len: usize, pixels: &[usize]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(pixels.len() * len);
    for &k in pixels {
        out.extend((0..len).map(|l| images[l * n2 + k]));
    }
    out
}

/// Densities are `‖X‖ / norm_j` for MRF and the projection coefficient over
/// `norm_j` for BLIP, whose iterate is the projection itself.
fn to_map(n: usize, pixels: &[usize], matches: &[MatchResult], norms: Option<&[f64]>) -> ParameterMap {
    let mut map = ParameterMap::zeros(n);
    let mut domain = vec![false; n * n];
    for (&k, m) in pixels.iter().zip(matches) {
        if let Some(j) = m.index {
            domain[k] = true;
            map.t1[k] = m.theta.t1;
            map.t2[k] = m.theta.t2;
            map.rho[k] = norms.map_or(m.rho, |norms| m.scale / norms[j]);
        }
    }
    map.set_domain(domain).expect("domain sized to the grid");
    map
}

/// Zero-filled inverse DFT per frame followed by per-pixel matching.
pub fn mrf_reconstruct(
    data: &KSpaceData,
    dict: &Dictionary,
    mode: RhoMode,
    support: Option<&[bool]>,
) -> Result<ParameterMap> {
    check_dict(data, dict)?;
    let n = data.n();
    let pixels = pixel_set(n, support)?;
    let images = Encoder::new(data.mask())?.adjoint(data);
    let matches = dict.match_many(&gather(&images, n * n, data.len(), &pixels), mode)?;
    Ok(to_map(n, &pixels, &matches, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlipConfig {
    pub iterations: usize,
    /// Landweber step; `None` uses the sub-sampling factor of the mask.
    pub step: Option<f64>,
    /// Halve the step while the projected residual increases.
    pub backtracking: bool,
    pub rho_mode: RhoMode,
}

impl Default for BlipConfig {
    fn default() -> Self {
        Self { iterations: 20, step: None, backtracking: false, rho_mode: RhoMode::Real }
    }
}

impl BlipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(QmriError::Config("BLIP needs at least one iteration".into()));
        }
        if let Some(mu) = self.step {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(QmriError::Config(format!("BLIP step must be non-negative, got {mu}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BlipResult {
    pub map: ParameterMap,
    /// Final projected magnetization frames `ρ T_xy m^{θ_j}`, frame-major.
    pub magnetization: Vec<Complex64>,
    /// `‖P F X_n − D‖` after each sweep.
    pub residuals: Vec<f64>,
    pub steps: Vec<f64>,
}

impl BlipResult {
    /// `iteration,residual` rows.
    pub fn residual_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (i, r) in self.residuals.iter().enumerate() {
            s.push_str(&format!("{},{:.17e}\n", i + 1, r));
        }
        s
    }
}

/// `X − μ F⁻¹Pᵀ(P F X − D)` for all frames.
pub fn landweber_step(x: &[Complex64], data: &KSpaceData, encoder: &Encoder, mu: f64) -> Vec<Complex64> {
    let mut r = encoder.encode(x).sub(data).expect("encoder shares the data mask").values().to_vec();
    encoder.adjoint_in_place(&mut r);
    x.iter().zip(&r).map(|(a, g)| a - mu * g).collect()
}

/// Projects each listed pixel's trajectory onto the dictionary cone.
pub fn project_onto_dictionary(
    x: &mut [Complex64],
    n: usize,
    pixels: &[usize],
    dict: &Dictionary,
    mode: RhoMode,
) -> Result<Vec<MatchResult>> {
    let n2 = n * n;
    let len = dict.len();
    let matches = dict.match_many(&gather(x, n2, len, pixels), mode)?;
    let mut keep = vec![false; n2];
    for (&k, m) in pixels.iter().zip(&matches) {
        keep[k] = true;
        let f = m.index.map(|j| dict.fingerprint(j));
        for l in 0..len {
            x[l * n2 + k] = f.as_ref().map_or(Complex64::default(), |f| m.scale * f[l]);
        }
    }
    for l in 0..len {
        for k in 0..n2 {
            if !keep[k] {
                x[l * n2 + k] = Complex64::default();
            }
        }
    }
    Ok(matches)
}

/// Projected Landweber iteration from `X = 0`.
pub fn blip_reconstruct(
    data: &KSpaceData,
    dict: &Dictionary,
    cfg: &BlipConfig,
    support: Option<&[bool]>,
) -> Result<BlipResult> {
    cfg.validate()?;
    check_dict(data, dict)?;
    let n = data.n();
    let pixels = pixel_set(n, support)?;
    let encoder = Encoder::new(data.mask())?;
    let mut mu = cfg.step.unwrap_or(data.mask().descriptor().factor() as f64);
    let mut x = vec![Complex64::default(); n * n * data.len()];
    let mut residual = data.norm();
    let mut residuals = Vec::with_capacity(cfg.iterations);
    let mut steps = Vec::with_capacity(cfg.iterations);
    let mut matches = Vec::new();
    for _ in 0..cfg.iterations {
        let mut attempts = 0;
        loop {
            let mut y = landweber_step(&x, data, &encoder, mu);
            let m = project_onto_dictionary(&mut y, n, &pixels, dict, cfg.rho_mode)?;
            let r = encoder.encode(&y).sub(data)?.norm();
            attempts += 1;
            if !cfg.backtracking || r <= residual || attempts > 30 {
                x = y;
                matches = m;
                residual = r;
                break;
            }
            mu *= 0.5;
        }
        residuals.push(residual);
        steps.push(mu);
    }
    Ok(BlipResult { map: to_map(n, &pixels, &matches, Some(dict.norms())), magnetization: x, residuals, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::PulseSequence;
    use crate::dictionary::build_dictionary;
    use crate::encoding::{forward_q, MaskDescriptor, SamplingMask};

    fn on_grid_map(n: usize) -> ParameterMap {
        let mut map = ParameterMap::zeros(n);
        let mut domain = vec![false; n * n];
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                let k = r * n + c;
                domain[k] = true;
                map.t1[k] = if r < n / 2 { 800.0 } else { 1600.0 };
                map.t2[k] = if c < n / 2 { 60.0 } else { 140.0 };
                map.rho[k] = Complex64::new(90.0, 0.0);
            }
        }
        map.set_domain(domain).unwrap();
        map
    }

    fn setup(mask: MaskDescriptor) -> (ParameterMap, KSpaceData, Dictionary) {
        let n = 8;
        let seq = PulseSequence::constant(12, 30f64.to_radians(), 20.0).unwrap();
        let map = on_grid_map(n);
        let data = forward_q(&map, &seq, &SamplingMask::new(n, 12, mask).unwrap()).unwrap();
        let dict = build_dictionary(&[400.0, 800.0, 1200.0, 1600.0], &[60.0, 100.0, 140.0], &seq).unwrap();
        (map, data, dict)
    }

    #[test]
    fn mrf_full_sampling_is_exact_on_domain() {
        let (map, data, dict) = setup(MaskDescriptor::Full);
        let out = mrf_reconstruct(&data, &dict, RhoMode::Real, Some(map.domain())).unwrap();
        for k in map.domain_indices() {
            assert_eq!(out.t1[k], map.t1[k]);
            assert_eq!(out.t2[k], map.t2[k]);
            assert!((out.rho[k] - map.rho[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn mrf_zero_data_gives_zero_map() {
        let (_, data, dict) = setup(MaskDescriptor::Full);
        let zero = KSpaceData::zeros(data.mask().clone());
        let out = mrf_reconstruct(&zero, &dict, RhoMode::Real, None).unwrap();
        assert!(out.domain_indices().is_empty());
        assert!(out.t1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn blip_one_unit_step_is_exact_with_full_sampling() {
        let (map, data, dict) = setup(MaskDescriptor::Full);
        let cfg = BlipConfig { iterations: 1, step: Some(1.0), ..Default::default() };
        let out = blip_reconstruct(&data, &dict, &cfg, Some(map.domain())).unwrap();
        for k in map.domain_indices() {
            assert_eq!((out.map.t1[k], out.map.t2[k]), (map.t1[k], map.t2[k]));
            assert!((out.map.rho[k] - map.rho[k]).norm() < 1e-9);
        }
        assert!(out.residuals[0] < 1e-9 * data.norm());
    }

    #[test]
    fn blip_zero_step_stays_background() {
        let (_, data, dict) = setup(MaskDescriptor::Cartesian { s: 2 });
        let cfg = BlipConfig { iterations: 3, step: Some(0.0), ..Default::default() };
        let out = blip_reconstruct(&data, &dict, &cfg, None).unwrap();
        assert!(out.map.domain_indices().is_empty());
        assert!(out.magnetization.iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn blip_trace_has_one_row_per_sweep() {
        let (map, data, dict) = setup(MaskDescriptor::Cartesian { s: 2 });
        let cfg = BlipConfig { iterations: 5, backtracking: true, ..Default::default() };
        let out = blip_reconstruct(&data, &dict, &cfg, Some(map.domain())).unwrap();
        assert_eq!(out.residuals.len(), 5);
        assert_eq!(out.residual_csv().lines().count(), 6);
        assert!(out.residuals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dictionary_length_mismatch() {
        let (_, data, _) = setup(MaskDescriptor::Full);
        let seq = PulseSequence::constant(5, 0.5, 20.0).unwrap();
        let dict = build_dictionary(&[1000.0], &[100.0], &seq).unwrap();
        assert!(mrf_reconstruct(&data, &dict, RhoMode::Real, None).is_err());
        assert!(blip_reconstruct(&data, &dict, &BlipConfig::default(), None).is_err());
    }
}
