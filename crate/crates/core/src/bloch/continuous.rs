use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Mat3, TissueParams, Vec3, EQUILIBRIUM};
use crate::error::{QmriError, Result};

/// Continuous Bloch setting with a static main field and an optional
/// instantaneous excitation at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousBlochSetup {
    /// Larmor frequency `γ|B0|` in rad/ms.
    pub omega0: f64,
    pub theta: TissueParams,
    pub alpha: f64,
    pub m0: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormCase {
    FreePrecession,
    Relaxation,
    ExcitationOnly,
    ExcitationRelaxation,
}

impl FromStr for ClosedFormCase {
    type Err = QmriError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free_precession" => Ok(Self::FreePrecession),
            "relaxation" => Ok(Self::Relaxation),
            "excitation_only" => Ok(Self::ExcitationOnly),
            "excitation_relaxation" => Ok(Self::ExcitationRelaxation),
            other => Err(QmriError::Domain(format!("unknown closed-form case '{other}'"))),
        }
    }
}

fn precession(omega0: f64, t: f64) -> Mat3 {
    let (s, c) = (omega0 * t).sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

fn excitation(alpha: f64) -> Mat3 {
    let (s, c) = alpha.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

/// Magnetization at time `t` for one of the four closed-form cases.
pub fn closed_form_solution(setup: &ContinuousBlochSetup, case: ClosedFormCase, t: f64) -> Result<Vec3> {
    if !(t >= 0.0) {
        return Err(QmriError::Domain(format!("time must be non-negative, got {t}")));
    }
    if !setup.omega0.is_finite() {
        return Err(QmriError::Domain("Larmor frequency must be finite".into()));
    }
    setup.theta.validate()?;
    let p = precession(setup.omega0, t);
    let e_t1 = (-t / setup.theta.t1).exp();
    let e_t2 = (-t / setup.theta.t2).exp();
    let decay = Vector3::new(e_t2, e_t2, e_t1);
    let m = match case {
        ClosedFormCase::FreePrecession => p * setup.m0,
        ClosedFormCase::Relaxation => {
            p * decay.component_mul(&setup.m0) + (1.0 - e_t1) * EQUILIBRIUM
        }
        ClosedFormCase::ExcitationOnly => p * excitation(setup.alpha) * setup.m0,
        ClosedFormCase::ExcitationRelaxation => {
            p * decay.component_mul(&(excitation(setup.alpha) * setup.m0)) + (1.0 - e_t1) * EQUILIBRIUM
        }
    };
    Ok(m)
}

const DEGENERACY_TOL: f64 = 1e-12;

/// Recovers `Θ = (1/T2, 1/T2, 1/T1)` from a uniformly sampled trajectory on
/// `[0, tau]` by integrating the Bloch equations in time (trapezoid rule).
pub fn invert_from_trajectory(samples: &[Vec3], tau: f64, b_field: Vec3, gamma: f64) -> Result<Vec3> {
    if samples.len() < 2 {
        return Err(QmriError::Domain("need at least two samples".into()));
    }
    if !(tau > 0.0) {
        return Err(QmriError::Domain(format!("tau must be positive, got {tau}")));
    }
    let h = tau / (samples.len() - 1) as f64;
    let gb = gamma * b_field;
    let trapz = |f: &dyn Fn(&Vec3) -> Vec3| {
        let inner: Vec3 = samples[1..samples.len() - 1].iter().map(f).sum();
        h * (inner + 0.5 * (f(&samples[0]) + f(&samples[samples.len() - 1])))
    };
    let int_m = trapz(&|m| *m);
    let int_cross = trapz(&|m| m.cross(&gb));
    let omega = int_m - tau * EQUILIBRIUM;
    if let Some((component, value)) = omega.iter().enumerate().find(|(_, w)| w.abs() < DEGENERACY_TOL) {
        return Err(QmriError::DegenerateTrajectory { component, value: *value });
    }
    let numer = samples[0] - samples[samples.len() - 1] + int_cross;
    Ok(numer.component_div(&omega))
}

impl TissueParams {
    /// `θ = (1/Θ3, 1/Θ1)`.
    pub fn from_rates(rates: Vec3) -> Self {
        Self { t1: 1.0 / rates.z, t2: 1.0 / rates.x }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn setup(omega0: f64, t1: f64, t2: f64, m0: Vec3) -> ContinuousBlochSetup {
        ContinuousBlochSetup { omega0, theta: TissueParams { t1, t2 }, alpha: 0.0, m0 }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let s = setup(0.3, 1000.0, 100.0, EQUILIBRIUM);
        for t in [0.0, 1.0, 77.0, 5000.0] {
            let m = closed_form_solution(&s, ClosedFormCase::Relaxation, t).unwrap();
            assert_abs_diff_eq!(m, EQUILIBRIUM, epsilon = 1e-15);
        }
    }

    #[test]
    fn full_revolution_returns_to_start() {
        let m0 = Vector3::new(0.2, -0.6, 0.3);
        let s = setup(0.25, 1000.0, 100.0, m0);
        let m = closed_form_solution(&s, ClosedFormCase::FreePrecession, 2.0 * PI / 0.25).unwrap();
        assert_abs_diff_eq!(m, m0, epsilon = 1e-14);
        let m = closed_form_solution(&s, ClosedFormCase::FreePrecession, 3.7).unwrap();
        assert_abs_diff_eq!(m.norm(), m0.norm(), epsilon = 1e-15);
    }

    #[test]
    fn inversion_recovers_relaxation_times() {
        let s = setup(0.1, 1000.0, 100.0, Vector3::new(0.5, 0.5, -0.5));
        let (tau, count) = (50.0, 10_000);
        let samples: Vec<Vec3> = (0..count)
            .map(|i| closed_form_solution(&s, ClosedFormCase::Relaxation, tau * i as f64 / (count - 1) as f64).unwrap())
            .collect();
        let theta = TissueParams::from_rates(invert_from_trajectory(&samples, tau, Vector3::new(0.0, 0.0, 0.1), 1.0).unwrap());
        assert!((theta.t1 / 1000.0 - 1.0).abs() < 1e-4, "{theta:?}");
        assert!((theta.t2 / 100.0 - 1.0).abs() < 1e-4, "{theta:?}");
    }

    #[test]
    fn relaxation_without_precession() {
        // With T1 = T2 both channels decay by e^{-1} at t = T2.
        let s = setup(0.0, 100.0, 100.0, Vector3::new(1.0, 0.0, 0.0));
        let m = closed_form_solution(&s, ClosedFormCase::Relaxation, 100.0).unwrap();
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(m, Vector3::new(e, 0.0, 1.0 - e), epsilon = 1e-15);
    }

    #[test]
    fn excitation_cases() {
        let mut s = setup(0.0, 1000.0, 100.0, Vector3::new(0.0, 0.0, -1.0));
        s.alpha = PI / 2.0;
        let m = closed_form_solution(&s, ClosedFormCase::ExcitationOnly, 10.0).unwrap();
        assert_abs_diff_eq!(m, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        let m = closed_form_solution(&s, ClosedFormCase::ExcitationRelaxation, 40.0).unwrap();
        assert_abs_diff_eq!(
            m,
            Vector3::new(0.0, -0.670_320_046_035_639_3, 0.039_210_560_847_676_823),
            epsilon = 1e-15
        );
    }

    #[test]
    fn case_tags_parse() {
        assert_eq!("relaxation".parse::<ClosedFormCase>().unwrap(), ClosedFormCase::Relaxation);
        assert!("spin_echo".parse::<ClosedFormCase>().is_err());
        let s = setup(0.0, 1000.0, 100.0, EQUILIBRIUM);
        assert!(closed_form_solution(&s, ClosedFormCase::Relaxation, -1.0).is_err());
    }

    #[test]
    fn constant_equilibrium_trajectory_is_degenerate() {
        let samples = vec![EQUILIBRIUM; 100];
        let err = invert_from_trajectory(&samples, 10.0, Vector3::new(0.0, 0.0, 0.1), 1.0).unwrap_err();
        assert!(matches!(err, QmriError::DegenerateTrajectory { .. }));
    }
}
