//! Discrete IR-bSSFP Bloch dynamics, their parameter derivatives, and the
//! continuous closed-form solutions used as oracles.

mod continuous;
mod recursion;

pub use continuous::{closed_form_solution, invert_from_trajectory, ClosedFormCase, ContinuousBlochSetup};
pub use recursion::{
    relaxation_factors, rotation_matrix, simulate_into, simulate_sequence, transverse,
};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QmriError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Thermal equilibrium magnetization `M_e`.
pub const EQUILIBRIUM: Vec3 = Vector3::new(0.0, 0.0, 1.0);

/// Inverted start state `M_0 = -M_e`.
pub const INVERTED: Vec3 = Vector3::new(0.0, 0.0, -1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub t1: f64,
    pub t2: f64,
}

impl TissueParams {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        let theta = Self { t1, t2 };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t1.is_finite()) || !(self.t2 > 0.0 && self.t2.is_finite()) {
            return Err(QmriError::Domain(format!(
                "relaxation times must be positive and finite, got T1={}, T2={}",
                self.t1, self.t2
            )));
        }
        Ok(())
    }

    /// Relaxation rates `(1/T2, 1/T2, 1/T1)`.
    pub fn rates(&self) -> Vec3 {
        Vector3::new(1.0 / self.t2, 1.0 / self.t2, 1.0 / self.t1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSequence {
    flip_angles: Vec<f64>,
    repetition_times: Vec<f64>,
    phase_shifts: Vec<f64>,
    initial_state: [f64; 3],
}

/// Flip-angle / repetition-time / phase schedule of an IR-bSSFP acquisition.
///
/// Rotation matrices are computed once at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct PulseSequence {
    flip_angles: Vec<f64>,
    repetition_times: Vec<f64>,
    phase_shifts: Vec<f64>,
    initial_state: Vec3,
    rotations: Vec<Mat3>,
}

impl PulseSequence {
    /// Accepts any finite flip angle; see [`PulseSequence::validate`] for the
    /// stricter check required by reconstruction.
    pub fn new(
        flip_angles: Vec<f64>,
        repetition_times: Vec<f64>,
        phase_shifts: Vec<f64>,
        initial_state: Vec3,
    ) -> Result<Self> {
        let l = flip_angles.len();
        if l == 0 {
            return Err(QmriError::Domain("sequence must contain at least one pulse".into()));
        }
        if repetition_times.len() != l || phase_shifts.len() != l {
            return Err(QmriError::Shape(format!(
                "sequence arrays differ in length: alpha {}, TR {}, phi {}",
                l,
                repetition_times.len(),
                phase_shifts.len()
            )));
        }
        if let Some(tr) = repetition_times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(QmriError::Domain(format!("repetition time must be positive, got {tr}")));
        }
        if flip_angles.iter().chain(&phase_shifts).any(|a| !a.is_finite()) {
            return Err(QmriError::Domain("flip angles and phases must be finite".into()));
        }
        if !initial_state.iter().all(|v| v.is_finite()) {
            return Err(QmriError::Domain("initial state must be finite".into()));
        }
        let rotations = flip_angles
            .iter()
            .zip(&phase_shifts)
            .map(|(&a, &p)| rotation_matrix(a, p))
            .collect();
        Ok(Self { flip_angles, repetition_times, phase_shifts, initial_state, rotations })
    }

    /// Constant flip angle and TR, zero phase, inverted start.
    pub fn constant(len: usize, alpha: f64, tr: f64) -> Result<Self> {
        Self::new(vec![alpha; len], vec![tr; len], vec![0.0; len], INVERTED)
    }

    /// Reconstruction-grade check: every flip angle in the open interval (0, π)
    /// and a unit initial state when it is aligned with the equilibrium axis.
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self
            .flip_angles
            .iter()
            .find(|a| !(**a > 0.0 && **a < std::f64::consts::PI))
        {
            return Err(QmriError::Domain(format!("flip angle {a} outside (0, pi)")));
        }
        let m0 = self.initial_state;
        if m0.x == 0.0 && m0.y == 0.0 && (m0.z.abs() - 1.0).abs() > 1e-12 {
            return Err(QmriError::Domain(format!(
                "longitudinal initial state must have unit norm, got {}",
                m0.z
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.flip_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_angles.is_empty()
    }

    pub fn flip_angles(&self) -> &[f64] {
        &self.flip_angles
    }

    pub fn repetition_times(&self) -> &[f64] {
        &self.repetition_times
    }

    pub fn phase_shifts(&self) -> &[f64] {
        &self.phase_shifts
    }

    pub fn initial_state(&self) -> Vec3 {
        self.initial_state
    }

    pub fn rotations(&self) -> &[Mat3] {
        &self.rotations
    }

    /// All pulses have zero phase, so the x component never leaves zero when
    /// the start state has none.
    pub fn is_phase_free(&self) -> bool {
        self.phase_shifts.iter().all(|p| *p == 0.0) && self.initial_state.x == 0.0
    }

    /// First `len` pulses of the schedule.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        Self::new(
            self.flip_angles[..len].to_vec(),
            self.repetition_times[..len].to_vec(),
            self.phase_shifts[..len].to_vec(),
            self.initial_state,
        )
    }

    /// Hex SHA-256 of the schedule, used to tie dictionaries to sequences.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        for v in self
            .flip_angles
            .iter()
            .chain(&self.repetition_times)
            .chain(&self.phase_shifts)
            .chain(self.initial_state.iter())
        {
            hasher.update(v.to_le_bytes());
        }
        hex(&hasher.finalize())
    }
}

impl TryFrom<RawSequence> for PulseSequence {
    type Error = QmriError;

    fn try_from(raw: RawSequence) -> Result<Self> {
        Self::new(
            raw.flip_angles,
            raw.repetition_times,
            raw.phase_shifts,
            Vector3::from(raw.initial_state),
        )
    }
}

impl From<PulseSequence> for RawSequence {
    fn from(seq: PulseSequence) -> Self {
        Self {
            flip_angles: seq.flip_angles,
            repetition_times: seq.repetition_times,
            phase_shifts: seq.phase_shifts,
            initial_state: seq.initial_state.into(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Magnetization trajectory of one pixel, optionally with `(dM/dT1, dM/dT2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetizationFrames {
    pub frames: Vec<Vec3>,
    pub derivs: Option<Vec<[Vec3; 2]>>,
}

impl MagnetizationFrames {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
