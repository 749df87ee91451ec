//! Fingerprint dictionaries over a `(T1, T2)` grid and nearest-atom matching.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{simulate_into, PulseSequence, TissueParams, Vec3};
use crate::encoding::RhoMode;
use crate::error::{QmriError, Result};

pub const FORMAT_VERSION: u32 = 1;

const ATOM_BLOCK: usize = 4096;
const PIXEL_BLOCK: usize = 512;

/// `start:step:stop` with the end point included when it lands on the grid.
pub fn colon(start: f64, step: f64, stop: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// Inclusive `start:step:stop` ranges for T1 and T2 in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t1: [f64; 3],
    pub t2: [f64; 3],
}

impl GridSpec {
    /// 15:15:5500 by 1.5:1.5:550.
    pub const FINE: Self = Self { t1: [15.0, 15.0, 5500.0], t2: [1.5, 1.5, 550.0] };
    /// 200:200:5500 by 20:20:550.
    pub const COARSE: Self = Self { t1: [200.0, 200.0, 5500.0], t2: [20.0, 20.0, 550.0] };
    /// 400:400:5500 by 40:40:550.
    pub const COARSER: Self = Self { t1: [400.0, 400.0, 5500.0], t2: [40.0, 40.0, 550.0] };

    pub fn t1_grid(&self) -> Vec<f64> {
        colon(self.t1[0], self.t1[1], self.t1[2])
    }

    pub fn t2_grid(&self) -> Vec<f64> {
        colon(self.t2[0], self.t2[1], self.t2[2])
    }

    pub fn build(&self, seq: &PulseSequence) -> Result<Dictionary> {
        build_dictionary(&self.t1_grid(), &self.t2_grid(), seq)
    }
}

/// Normalized transverse fingerprints for every grid point, stored as a real
/// `J × m` matrix holding only the columns that are non-zero for some atom.
#[derive(Debug, Clone)]
pub struct Dictionary {
    t1_grid: Vec<f64>,
    t2_grid: Vec<f64>,
    len: usize,
    seq_hash: String,
    norms: Vec<f64>,
    /// Column `c < len` is `Re f[c]`, column `len + c` is `Im f[c]`.
    columns: Vec<usize>,
    atoms: Array2<f64>,
}

/// Outcome of matching one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// `None` for a zero trajectory.
    pub index: Option<usize>,
    pub theta: TissueParams,
    /// Density `‖X‖ / norm_j`, carrying the phase of `⟨f_j, X⟩` in complex mode.
    pub rho: Complex64,
    /// Coefficient `c` of the orthogonal projection `c f_j` of the trajectory
    /// onto the atom's cone (real and non-negative in real mode).
    pub scale: Complex64,
}

impl MatchResult {
    fn background() -> Self {
        Self {
            index: None,
            theta: TissueParams { t1: 0.0, t2: 0.0 },
            rho: Complex64::default(),
            scale: Complex64::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    t1_grid: Vec<f64>,
    t2_grid: Vec<f64>,
    l: usize,
    seq_hash: String,
    version: u32,
}

/// Atoms enumerate the grid product with T1 as the outer index.
pub fn build_dictionary(t1_grid: &[f64], t2_grid: &[f64], seq: &PulseSequence) -> Result<Dictionary> {
    if t1_grid.is_empty() || t2_grid.is_empty() {
        return Err(QmriError::Domain("dictionary grids must be non-empty".into()));
    }
    if let Some(v) = t1_grid.iter().chain(t2_grid).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(QmriError::Domain(format!("dictionary grid value {v} is not a positive time")));
    }
    let len = seq.len();
    let n2 = t2_grid.len();
    let j = t1_grid.len() * n2;
    let mut raw = vec![Complex64::default(); j * len];
    let mut norms = vec![0.0; j];
    raw.par_chunks_mut(len).zip(norms.par_iter_mut()).enumerate().for_each_init(
        || vec![Vec3::zeros(); len],
        |frames, (idx, (row, norm))| {
            simulate_into(t1_grid[idx / n2], t2_grid[idx % n2], seq, frames, None);
            for (v, m) in row.iter_mut().zip(frames.iter()) {
                *v = Complex64::new(m.x, m.y);
            }
            *norm = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        },
    );
    if let Some(bad) = norms.iter().position(|n| !(*n > 0.0)) {
        return Err(QmriError::Domain(format!(
            "atom ({}, {}) has no transverse signal",
            t1_grid[bad / n2],
            t2_grid[bad % n2]
        )));
    }
    for (row, norm) in raw.chunks_mut(len).zip(&norms) {
        row.iter_mut().for_each(|v| *v /= *norm);
    }
    Ok(Dictionary::from_parts(t1_grid.to_vec(), t2_grid.to_vec(), len, seq.fingerprint(), norms, &raw))
}

impl Dictionary {
    fn from_parts(
        t1_grid: Vec<f64>,
        t2_grid: Vec<f64>,
        len: usize,
        seq_hash: String,
        norms: Vec<f64>,
        raw: &[Complex64],
    ) -> Self {
        let j = norms.len();
        let columns: Vec<usize> = (0..2 * len)
            .filter(|&c| {
                raw.chunks(len).any(|row| if c < len { row[c].re != 0.0 } else { row[c - len].im != 0.0 })
            })
            .collect();
        let mut atoms = Array2::zeros((j, columns.len()));
        for (mut out, row) in atoms.outer_iter_mut().zip(raw.chunks(len)) {
            for (o, &c) in out.iter_mut().zip(&columns) {
                *o = if c < len { row[c].re } else { row[c - len].im };
            }
        }
        Self { t1_grid, t2_grid, len, seq_hash, norms, columns, atoms }
    }

    pub fn size(&self) -> usize {
        self.norms.len()
    }

    /// Sequence length the fingerprints were simulated with.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn t1_grid(&self) -> &[f64] {
        &self.t1_grid
    }

    pub fn t2_grid(&self) -> &[f64] {
        &self.t2_grid
    }

    pub fn seq_hash(&self) -> &str {
        &self.seq_hash
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn theta(&self, j: usize) -> TissueParams {
        let n2 = self.t2_grid.len();
        TissueParams { t1: self.t1_grid[j / n2], t2: self.t2_grid[j % n2] }
    }

    /// Unit-norm fingerprint of atom `j`.
    pub fn fingerprint(&self, j: usize) -> Vec<Complex64> {
        let mut f = vec![Complex64::default(); self.len];
        for (&c, &v) in self.columns.iter().zip(self.atoms.row(j)) {
            if c < self.len {
                f[c].re = v;
            } else {
                f[c - self.len].im = v;
            }
        }
        f
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len {
            return Err(QmriError::Shape(format!("trajectory has {len} frames, dictionary has {}", self.len)));
        }
        Ok(())
    }

    fn finish(&self, best: usize, score_re: f64, score_im: f64, xnorm: f64, mode: RhoMode) -> MatchResult {
        let (rho, scale) = match mode {
            RhoMode::Real => (Complex64::new(xnorm, 0.0), Complex64::new(score_re.max(0.0), 0.0)),
            RhoMode::Complex => {
                let inner = Complex64::new(score_re, score_im);
                let mag = inner.norm();
                let phase = if mag > 0.0 { inner / mag } else { Complex64::new(1.0, 0.0) };
                (phase * xnorm, inner)
            }
        };
        MatchResult { index: Some(best), theta: self.theta(best), rho: rho / self.norms[best], scale }
    }

    /// Nearest atom by exhaustive scan: maximal `Re⟨f_j, x⟩` for real densities,
    /// maximal `|⟨f_j, x⟩|` for complex ones; ties go to the lowest index.
    pub fn match_pixel(&self, trajectory: &[Complex64], mode: RhoMode) -> Result<MatchResult> {
        self.check_len(trajectory.len())?;
        Ok(self.match_many(trajectory, mode)?.pop().expect("one trajectory"))
    }

    /// Matches `P` trajectories stored pixel-major (`P × L`).
    pub fn match_many(&self, trajectories: &[Complex64], mode: RhoMode) -> Result<Vec<MatchResult>> {
        if trajectories.len() % self.len != 0 {
            return Err(QmriError::Shape(format!(
                "{} values do not split into trajectories of length {}",
                trajectories.len(),
                self.len
            )));
        }
        Ok(trajectories
            .par_chunks(PIXEL_BLOCK * self.len)
            .flat_map_iter(|block| self.match_block(block, mode))
            .collect())
    }

    fn match_block(&self, block: &[Complex64], mode: RhoMode) -> Vec<MatchResult> {
        let len = self.len;
        let p = block.len() / len;
        let m = self.columns.len();
        let mut xr = Array2::<f64>::zeros((p, m));
        let mut xi = Array2::<f64>::zeros((p, m));
        for (i, traj) in block.chunks(len).enumerate() {
            for (k, &c) in self.columns.iter().enumerate() {
                if c < len {
                    xr[[i, k]] = traj[c].re;
                    xi[[i, k]] = traj[c].im;
                } else {
                    xr[[i, k]] = traj[c - len].im;
                    xi[[i, k]] = -traj[c - len].re;
                }
            }
        }
        let xnorm: Vec<f64> =
            block.chunks(len).map(|t| t.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect();
        let mut best = vec![(usize::MAX, f64::NEG_INFINITY, 0.0, 0.0); p];
        let mut start = 0;
        while start < self.size() {
            let stop = (start + ATOM_BLOCK).min(self.size());
            let atoms: ArrayView2<f64> = self.atoms.slice(s![start..stop, ..]);
            let re = xr.dot(&atoms.t());
            let im = (mode == RhoMode::Complex).then(|| xi.dot(&atoms.t()));
            for i in 0..p {
                let b = &mut best[i];
                for jj in 0..stop - start {
                    let sr = re[[i, jj]];
                    let si = im.as_ref().map_or(0.0, |a| a[[i, jj]]);
                    let score = match mode {
                        RhoMode::Real => sr,
                        RhoMode::Complex => sr * sr + si * si,
                    };
                    if score > b.1 {
                        *b = (start + jj, score, sr, si);
                    }
                }
            }
            start = stop;
        }
        best.into_iter()
            .zip(xnorm)
            .map(|((j, _, sr, si), xn)| {
                if xn > 0.0 {
                    self.finish(j, sr, si, xn, mode)
                } else {
                    MatchResult::background()
                }
            })
            .collect()
    }

    fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the `J × L` complex atom matrix followed by the `J` norms as
    /// little-endian f64, plus a JSON header next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for j in 0..self.size() {
            for v in self.fingerprint(j) {
                out.write_all(&v.re.to_le_bytes())?;
                out.write_all(&v.im.to_le_bytes())?;
            }
        }
        for n in &self.norms {
            out.write_all(&n.to_le_bytes())?;
        }
        out.flush()?;
        let header = Header {
            t1_grid: self.t1_grid.clone(),
            t2_grid: self.t2_grid.clone(),
            l: self.len,
            seq_hash: self.seq_hash.clone(),
            version: FORMAT_VERSION,
        };
        fs::write(Self::sidecar(path), serde_json::to_string_pretty(&header)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&fs::read_to_string(Self::sidecar(path))?)?;
        if header.version != FORMAT_VERSION {
            return Err(QmriError::Format(format!("unsupported dictionary version {}", header.version)));
        }
        let j = header.t1_grid.len() * header.t2_grid.len();
        let bytes = fs::read(path)?;
        let expected = j * header.l * 16 + j * 8;
        if bytes.len() != expected {
            return Err(QmriError::Format(format!(
                "{} holds {} bytes, header implies {expected}",
                path.display(),
                bytes.len()
            )));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
        let (matrix, tail) = bytes.split_at(j * header.l * 16);
        let raw: Vec<Complex64> = matrix.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect();
        let norms = tail.chunks_exact(8).map(f).collect();
        Ok(Self::from_parts(header.t1_grid, header.t2_grid, header.l, header.seq_hash, norms, &raw))
    }

    /// Fails unless the dictionary was simulated with `seq`.
    pub fn check_sequence(&self, seq: &PulseSequence) -> Result<()> {
        if self.seq_hash != seq.fingerprint() {
            return Err(QmriError::Config("dictionary was built for a different pulse sequence".into()));
        }
        Ok(())
    }
}
