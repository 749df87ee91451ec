//! Synthetic ground truth and noisy k-space synthesis.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bloch::PulseSequence;
use crate::encoding::{signal_images, Bounds, Encoder, KSpaceData, NoiseInfo, ParameterMap, SamplingMask};
use crate::error::{QmriError, Result};

/// Ellipse in normalized coordinates `[-1, 1]²` (x to the right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Rotation in radians.
    #[serde(default)]
    pub angle: f64,
    pub t1: f64,
    pub t2: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueRanges {
    pub t1: Bounds,
    pub t2: Bounds,
    pub rho: Bounds,
}

impl Default for TissueRanges {
    fn default() -> Self {
        Self { t1: Bounds::new(530.0, 5012.0), t2: Bounds::new(41.0, 512.0), rho: Bounds::new(80.0, 100.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n: usize,
    pub regions: Vec<Region>,
    #[serde(default)]
    pub ranges: TissueRanges,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(QmriError::Config("phantom grid size must be positive".into()));
        }
        if self.regions.is_empty() {
            return Err(QmriError::Config("phantom needs at least one region".into()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            let ok = self.ranges.t1.contains(r.t1) && self.ranges.t2.contains(r.t2) && self.ranges.rho.contains(r.rho);
            if !ok {
                return Err(QmriError::Config(format!(
                    "region {i} value (T1={}, T2={}, rho={}) is outside the allowed ranges",
                    r.t1, r.t2, r.rho
                )));
            }
            if !(r.a > 0.0 && r.b > 0.0) {
                return Err(QmriError::Config(format!("region {i} needs positive semi-axes")));
            }
        }
        Ok(())
    }
}

/// Rasterizes the regions at pixel centres; later regions overwrite earlier ones.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ParameterMap> {
    spec.validate()?;
    let n = spec.n;
    let mut map = ParameterMap::zeros(n);
    for r in &spec.regions {
        let (s, c) = r.angle.sin_cos();
        for row in 0..n {
            let y = (2 * row + 1) as f64 / n as f64 - 1.0 - r.cy;
            for col in 0..n {
                let x = (2 * col + 1) as f64 / n as f64 - 1.0 - r.cx;
                let u = c * x + s * y;
                let v = -s * x + c * y;
                if (u / r.a).powi(2) + (v / r.b).powi(2) <= 1.0 {
                    let k = row * n + col;
                    map.t1[k] = r.t1;
                    map.t2[k] = r.t2;
                    map.rho[k] = Complex64::new(r.rho, 0.0);
                }
            }
        }
    }
    let support = map.support();
    map.set_domain(support)?;
    Ok(map)
}

/// Brain-like layout: a grey-matter disc around white matter, ventricles and
/// two lesions.
pub fn brain_regions() -> Vec<Region> {
    let r = |cx, cy, a, b, angle, t1, t2, rho| Region { cx, cy, a, b, angle, t1, t2, rho };
    vec![
        r(0.0, 0.0, 0.86, 0.94, 0.0, 1330.0, 110.0, 86.0),
        r(0.0, 0.0, 0.66, 0.76, 0.0, 830.0, 70.0, 80.0),
        r(-0.17, -0.08, 0.11, 0.3, 0.3, 4200.0, 500.0, 100.0),
        r(0.17, -0.08, 0.11, 0.3, -0.3, 4200.0, 500.0, 100.0),
        r(0.0, 0.55, 0.2, 0.12, 0.0, 560.0, 45.0, 95.0),
        r(0.42, 0.3, 0.13, 0.13, 0.0, 2100.0, 250.0, 92.0),
    ]
}

/// Desk-scale phantom: the brain layout rasterized at `2n` and averaged down.
pub fn desk_phantom(n: usize) -> Result<ParameterMap> {
    let fine = make_phantom(&PhantomSpec { n: 2 * n, regions: brain_regions(), ranges: TissueRanges::default() })?;
    shrink_average(&fine)
}

/// Halves the resolution; each output pixel averages the non-zero entries of
/// its 2×2 block per channel.
pub fn shrink_average(map: &ParameterMap) -> Result<ParameterMap> {
    let n = map.n();
    if n % 2 != 0 {
        return Err(QmriError::Shape(format!("cannot halve an odd grid of size {n}")));
    }
    let m = n / 2;
    let mut out = ParameterMap::zeros(m);
    for r in 0..m {
        for c in 0..m {
            let block = [(2 * r) * n + 2 * c, (2 * r) * n + 2 * c + 1, (2 * r + 1) * n + 2 * c, (2 * r + 1) * n + 2 * c + 1];
            let mean = |vals: &mut dyn Iterator<Item = f64>| {
                let (s, k) = vals.filter(|v| *v != 0.0).fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
                if k == 0 {
                    0.0
                } else {
                    s / k as f64
                }
            };
            let k = r * m + c;
            out.t1[k] = mean(&mut block.iter().map(|&i| map.t1[i]));
            out.t2[k] = mean(&mut block.iter().map(|&i| map.t2[i]));
            let nz: Vec<Complex64> = block.iter().map(|&i| map.rho[i]).filter(|v| v.norm() > 0.0).collect();
            if !nz.is_empty() {
                out.rho[k] = nz.iter().sum::<Complex64>() / nz.len() as f64;
            }
        }
    }
    let support = out.support();
    out.set_domain(support)?;
    Ok(out)
}

/// Result of [`synthesize_data`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub data: KSpaceData,
    /// Noise-free image frames `ρ ⊙ T_xy M_ℓ(θ)`, frame-major.
    pub clean_images: Vec<Complex64>,
    /// `‖clean D‖² / ‖noise in D‖²`; infinite without noise.
    pub snr: f64,
}

/// Simulates the magnetization, adds Gaussian noise of standard deviation
/// `sigma` to the real and imaginary parts on Ω, then applies the masked DFT.
///
/// Frame `ℓ` (0-based) draws from a ChaCha8 generator seeded with `seed` on
/// stream `ℓ`, so frames are reproducible independently.
pub fn synthesize_data(
    map: &ParameterMap,
    seq: &PulseSequence,
    mask: &SamplingMask,
    sigma: f64,
    seed: u64,
) -> Result<Synthesis> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(QmriError::Domain(format!("noise level must be non-negative, got {sigma}")));
    }
    if map.n() != mask.n() || seq.len() != mask.len() {
        return Err(QmriError::Shape("map, sequence and mask disagree in size".into()));
    }
    let encoder = Encoder::new(mask)?;
    let clean_images = signal_images(map, seq);
    if sigma == 0.0 {
        let mut data = encoder.encode(&clean_images);
        data.noise = Some(NoiseInfo { sigma, seed });
        return Ok(Synthesis { data, clean_images, snr: f64::INFINITY });
    }
    let noisy = add_noise(&clean_images, map.domain(), sigma, seed);
    let clean = encoder.encode(&clean_images);
    let mut data = encoder.encode(&noisy);
    data.noise = Some(NoiseInfo { sigma, seed });
    let noise = data.sub(&clean)?;
    let snr = clean.norm_sqr() / noise.norm_sqr();
    Ok(Synthesis { data, clean_images, snr })
}

fn add_noise(images: &[Complex64], domain: &[bool], sigma: f64, seed: u64) -> Vec<Complex64> {
    let n2 = domain.len();
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut out = images.to_vec();
    for (l, frame) in out.chunks_mut(n2).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(l as u64);
        for (v, &inside) in frame.iter_mut().zip(domain) {
            if inside {
                let re = normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                *v += Complex64::new(re, im);
            }
        }
    }
    out
}

/// Noise level giving `target_snr` for this map, sequence, mask and seed,
/// using `SNR(σ) = SNR(1) / σ²`.
pub fn calibrate_sigma(
    map: &ParameterMap,
    seq: &PulseSequence,
    mask: &SamplingMask,
    seed: u64,
    target_snr: f64,
) -> Result<f64> {
    if !(target_snr > 0.0) {
        return Err(QmriError::Domain(format!("target SNR must be positive, got {target_snr}")));
    }
    let unit = synthesize_data(map, seq, mask, 1.0, seed)?;
    Ok((unit.snr / target_snr).sqrt())
}

const CHANNELS: [&str; 4] = ["t1", "t2", "rho_re", "rho_im"];

fn write_grid(path: &Path, n: usize, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut s = format!("{n}\n");
    let values: Vec<f64> = values.collect();
    for row in values.chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_grid(path: &Path) -> Result<(usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |msg: String| QmriError::Format(format!("{}: {msg}", path.display()));
    let n: usize = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .trim()
        .parse()
        .map_err(|e| bad(format!("header is not a grid size ({e})")))?;
    let mut values = Vec::with_capacity(n * n);
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {} ({e})", i + 1)))?;
        if row.len() != n {
            return Err(bad(format!("row {} has {} values, expected {n}", i + 1, row.len())));
        }
        values.extend(row);
    }
    if values.len() != n * n {
        return Err(bad(format!("expected {n} rows")));
    }
    Ok((n, values))
}

/// One CSV per channel plus `mask.csv`; each file starts with a line holding `N`.
pub fn write_map_csv(dir: &Path, map: &ParameterMap) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = map.n();
    write_grid(&dir.join("t1.csv"), n, map.t1.iter().copied())?;
    write_grid(&dir.join("t2.csv"), n, map.t2.iter().copied())?;
    write_grid(&dir.join("rho_re.csv"), n, map.rho.iter().map(|r| r.re))?;
    write_grid(&dir.join("rho_im.csv"), n, map.rho.iter().map(|r| r.im))?;
    write_grid(&dir.join("mask.csv"), n, map.domain().iter().map(|&d| if d { 1.0 } else { 0.0 }))
}

/// Reads maps written by [`write_map_csv`]. `rho_im.csv` is optional; without
/// `mask.csv` the domain is the support of ρ.
pub fn read_map_csv(dir: &Path) -> Result<ParameterMap> {
    let (n, t1) = read_grid(&dir.join(format!("{}.csv", CHANNELS[0])))?;
    let mut grids = vec![t1];
    for name in &CHANNELS[1..3] {
        let (m, g) = read_grid(&dir.join(format!("{name}.csv")))?;
        if m != n {
            return Err(QmriError::Shape(format!("{name}.csv is {m}x{m}, t1.csv is {n}x{n}")));
        }
        grids.push(g);
    }
    let im_path = dir.join("rho_im.csv");
    let im = if im_path.exists() { read_grid(&im_path)?.1 } else { vec![0.0; n * n] };
    let rho: Vec<Complex64> = grids[2].iter().zip(&im).map(|(&re, &im)| Complex64::new(re, im)).collect();
    let mask_path = dir.join("mask.csv");
    let domain = if mask_path.exists() {
        read_grid(&mask_path)?.1.iter().map(|v| *v != 0.0).collect()
    } else {
        rho.iter().map(|r| r.norm() > 0.0).collect()
    };
    let mut grids = grids.into_iter();
    let t1 = grids.next().expect("t1 grid");
    let t2 = grids.next().expect("t2 grid");
    ParameterMap::new(n, t1, t2, rho, domain)
}
