use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use super::{Mat3, MagnetizationFrames, PulseSequence, TissueParams, Vec3, EQUILIBRIUM};
use crate::error::{QmriError, Result};

/// `R(α) = R_φ R_x(α) R_φᵀ`.
pub fn rotation_matrix(alpha: f64, phi: f64) -> Mat3 {
    let (s, c) = alpha.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c);
    if phi == 0.0 {
        return rx;
    }
    let (sp, cp) = phi.sin_cos();
    let rphi = Matrix3::new(cp, sp, 0.0, -sp, cp, 0.0, 0.0, 0.0, 1.0);
    rphi * rx * rphi.transpose()
}

/// Returns `(e2, e1_diag)` with `e1_diag = (e^{-TR/T2}, e^{-TR/T2}, e^{-TR/T1})`
/// and `e2 = 1 - e^{-TR/T1}`.
pub fn relaxation_factors(tr: f64, theta: TissueParams) -> Result<(f64, Vec3)> {
    if !(tr > 0.0) {
        return Err(QmriError::Domain(format!("repetition time must be positive, got {tr}")));
    }
    theta.validate()?;
    let e_t2 = (-tr / theta.t2).exp();
    let e_t1 = (-tr / theta.t1).exp();
    Ok((1.0 - e_t1, Vector3::new(e_t2, e_t2, e_t1)))
}

/// `(e^{-TR/T}, d/dT e^{-TR/T})`, continued by zero for `T <= 0` so iterates that
/// leave the positive orthant still evaluate.
#[inline]
fn decay(tr: f64, t: f64) -> (f64, f64) {
    if !(t > 0.0) {
        return (0.0, 0.0);
    }
    let x = tr / t;
    let e = (-x).exp();
    if e == 0.0 {
        (0.0, 0.0)
    } else {
        (e, x / t * e)
    }
}

/// Runs the recursion for one pixel into caller-provided buffers.
///
/// No validation is performed on `(t1, t2)`: non-positive values use the
/// zero-decay continuation. `frames` (and `derivs` when given) must hold
/// `seq.len()` entries.
pub fn simulate_into(
    t1: f64,
    t2: f64,
    seq: &PulseSequence,
    frames: &mut [Vec3],
    mut derivs: Option<&mut [[Vec3; 2]]>,
) {
    debug_assert_eq!(frames.len(), seq.len());
    let mut m = seq.initial_state();
    let mut d1 = Vec3::zeros();
    let mut d2 = Vec3::zeros();
    for (l, (&tr, rot)) in seq.repetition_times().iter().zip(seq.rotations()).enumerate() {
        let (e_t1, de_t1) = decay(tr, t1);
        let (e_t2, de_t2) = decay(tr, t2);
        let e1 = Vector3::new(e_t2, e_t2, e_t1);
        let v = rot * m;
        if let Some(out) = derivs.as_deref_mut() {
            let r1 = rot * d1;
            let r2 = rot * d2;
            d1 = e1.component_mul(&r1) + Vector3::new(0.0, 0.0, de_t1 * v.z) - de_t1 * EQUILIBRIUM;
            d2 = e1.component_mul(&r2) + Vector3::new(de_t2 * v.x, de_t2 * v.y, 0.0);
            out[l] = [d1, d2];
        }
        m = e1.component_mul(&v) + (1.0 - e_t1) * EQUILIBRIUM;
        frames[l] = m;
    }
}

/// Magnetization `M_1..M_L` for tissue `theta` under `seq`.
pub fn simulate_sequence(
    theta: TissueParams,
    seq: &PulseSequence,
    with_derivs: bool,
) -> Result<MagnetizationFrames> {
    theta.validate()?;
    let l = seq.len();
    let mut frames = vec![Vec3::zeros(); l];
    let mut derivs = with_derivs.then(|| vec![[Vec3::zeros(); 2]; l]);
    simulate_into(theta.t1, theta.t2, seq, &mut frames, derivs.as_deref_mut());
    Ok(MagnetizationFrames { frames, derivs })
}

/// Transverse signal `M_x + i M_y` of every frame.
pub fn transverse(frames: &MagnetizationFrames) -> Vec<Complex64> {
    frames.frames.iter().map(|m| Complex64::new(m.x, m.y)).collect()
}
