use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{KSpaceData, MaskDescriptor, NoiseInfo, SamplingMask};
use crate::error::{QmriError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// JSON header written next to a k-space binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSpaceSidecar {
    pub n: usize,
    pub l: usize,
    pub mask: MaskDescriptor,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub version: u32,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes little-endian `(re, im)` f64 pairs, frame-major then row-major, and a
/// `.json` sidecar with the same stem.
pub fn write_kspace(path: &Path, data: &KSpaceData) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in data.values() {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    out.flush()?;
    let sidecar = KSpaceSidecar {
        n: data.n(),
        l: data.len(),
        mask: data.mask().descriptor(),
        sigma: data.noise.map(|n| n.sigma),
        seed: data.noise.map(|n| n.seed),
        version: FORMAT_VERSION,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn read_kspace(path: &Path) -> Result<KSpaceData> {
    let sidecar: KSpaceSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.version != FORMAT_VERSION {
        return Err(QmriError::Format(format!("unsupported k-space version {}", sidecar.version)));
    }
    let bytes = fs::read(path)?;
    let expected = sidecar.n * sidecar.n * sidecar.l * 16;
    if bytes.len() != expected {
        return Err(QmriError::Format(format!(
            "{} holds {} bytes, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    let mask = SamplingMask::new(sidecar.n, sidecar.l, sidecar.mask)?;
    let noise = match (sidecar.sigma, sidecar.seed) {
        (Some(sigma), Some(seed)) => Some(NoiseInfo { sigma, seed }),
        _ => None,
    };
    KSpaceData::new(mask, values, noise)
}
