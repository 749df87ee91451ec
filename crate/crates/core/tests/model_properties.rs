use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use qmri_core::baselines::{landweber_step, project_onto_dictionary};
use qmri_core::bloch::{simulate_sequence, transverse, PulseSequence};
use qmri_core::dictionary::{build_dictionary, colon, Dictionary};
use qmri_core::encoding::{
    Encoder, FeasibleBox, KSpaceData, MaskDescriptor, ParameterMap, RhoMode, SamplingMask,
};
use qmri_core::metrics::error_rate;
use qmri_core::phantom::synthesize_data;
use qmri_core::solver::{project_box, SolverConfig};

const LEN: usize = 6;

fn seq() -> PulseSequence {
    PulseSequence::constant(LEN, 30f64.to_radians(), 20.0).unwrap()
}

fn dictionary() -> &'static Dictionary {
    static DICT: OnceLock<Dictionary> = OnceLock::new();
    DICT.get_or_init(|| build_dictionary(&colon(100.0, 50.0, 3000.0), &colon(10.0, 5.0, 300.0), &seq()).unwrap())
}

fn complex(scale: f64) -> impl Strategy<Value = Complex64> {
    (-scale..scale, -scale..scale).prop_map(|(re, im)| Complex64::new(re, im))
}

fn trajectory() -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(complex(1.0), LEN)
}

fn mode() -> impl Strategy<Value = RhoMode> {
    prop_oneof![Just(RhoMode::Real), Just(RhoMode::Complex)]
}

/// Distance of the normalized query to atom `j`, up to the admissible density.
fn oracle_distance(dict: &Dictionary, j: usize, x: &[Complex64], mode: RhoMode) -> f64 {
    let xn = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let f = dict.fingerprint(j);
    let inner: Complex64 = f.iter().zip(x).map(|(a, b)| a.conj() * b).sum::<Complex64>() / xn;
    // Best unit multiplier of the atom: +1 for real densities, the inner
    // product's phase for complex ones.
    let phase = match mode {
        RhoMode::Real => Complex64::new(1.0, 0.0),
        RhoMode::Complex if inner.norm() > 0.0 => inner / inner.norm(),
        RhoMode::Complex => Complex64::new(1.0, 0.0),
    };
    f.iter().zip(x).map(|(a, b)| (phase * a - b / xn).norm_sqr()).sum::<f64>().sqrt()
}

fn map(n: usize, rho: &[(f64, f64)], t: &[(f64, f64)]) -> ParameterMap {
    ParameterMap::new(
        n,
        t.iter().map(|p| p.0).collect(),
        t.iter().map(|p| p.1).collect(),
        rho.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
        vec![true; n * n],
    )
    .unwrap()
}

fn params(count: usize) -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    (
        prop::collection::vec((-50.0..150.0f64, -50.0..150.0f64), count),
        prop::collection::vec((-100.0..6000.0f64, -10.0..600.0f64), count),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matching_is_exhaustive(x in trajectory(), mode in mode()) {
        let dict = dictionary();
        let m = dict.match_pixel(&x, mode).unwrap();
        let j = m.index.unwrap();
        let found = oracle_distance(dict, j, &x, mode);
        let best = (0..dict.size()).map(|k| oracle_distance(dict, k, &x, mode)).fold(f64::INFINITY, f64::min);
        prop_assert!(found <= best + 1e-12, "{found} vs {best}");
    }

    #[test]
    fn matching_is_scale_invariant(x in trajectory(), c in 1e-3..1e3f64, mode in mode()) {
        let dict = dictionary();
        let a = dict.match_pixel(&x, mode).unwrap();
        let scaled: Vec<Complex64> = x.iter().map(|v| v * c).collect();
        let b = dict.match_pixel(&scaled, mode).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert!((b.rho - a.rho * c).norm() <= 1e-12 * (a.rho * c).norm());
    }

    #[test]
    fn scaled_atoms_are_recovered(j in 0usize..3422, rho in 0.1..100.0f64, phase in -3.0..3.0f64) {
        let dict = dictionary();
        let j = j % dict.size();
        let raw = transverse(&simulate_sequence(dict.theta(j), &seq(), false).unwrap());
        for (mode, rho) in [(RhoMode::Real, Complex64::new(rho, 0.0)), (RhoMode::Complex, Complex64::from_polar(rho, phase))] {
            let x: Vec<Complex64> = raw.iter().map(|v| rho * v).collect();
            let m = dict.match_pixel(&x, mode).unwrap();
            prop_assert_eq!(m.index, Some(j));
            prop_assert!((m.rho - rho).norm() <= 1e-12 * rho.norm());
        }
    }

    #[test]
    fn small_landweber_steps_never_increase_the_residual(
        x in prop::collection::vec(complex(1.0), 16 * LEN),
        y in prop::collection::vec(complex(1.0), 16 * LEN),
        mu in 0.0..=1.0f64,
        s in prop_oneof![Just(1usize), Just(2), Just(4)],
    ) {
        let mask = SamplingMask::new(4, LEN, if s == 1 { MaskDescriptor::Full } else { MaskDescriptor::Cartesian { s } }).unwrap();
        let encoder = Encoder::new(&mask).unwrap();
        let data = encoder.encode(&y);
        let before = encoder.encode(&x).sub(&data).unwrap().norm();
        let after = encoder.encode(&landweber_step(&x, &data, &encoder, mu)).sub(&data).unwrap().norm();
        prop_assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn dictionary_projection_is_idempotent(x in prop::collection::vec(complex(1.0), 4 * LEN), mode in mode()) {
        let dict = dictionary();
        let pixels = [0usize, 1, 3];
        let mut once = x.clone();
        project_onto_dictionary(&mut once, 2, &pixels, dict, mode).unwrap();
        let mut twice = once.clone();
        project_onto_dictionary(&mut twice, 2, &pixels, dict, mode).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-12));
        }
    }

    #[test]
    fn box_projection_is_non_expansive((rho, t) in params(9), (rho_ref, t_ref) in params(9)) {
        let bx = FeasibleBox::default();
        let x = map(3, &rho, &t);
        let reference = project_box(&map(3, &rho_ref, &t_ref), &bx);
        let px = project_box(&x, &bx);
        prop_assert!(px.is_feasible(&bx));
        prop_assert_eq!(&project_box(&px, &bx), &px);
        let dist = |a: &ParameterMap, b: &ParameterMap| -> f64 {
            (0..9)
                .map(|k| (a.t1[k] - b.t1[k]).powi(2) + (a.t2[k] - b.t2[k]).powi(2) + (a.rho[k] - b.rho[k]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        prop_assert!(dist(&px, &reference) <= dist(&x, &reference) + 1e-9);
    }

    #[test]
    fn damping_respects_the_residual_floor(
        lambda0 in 0.0..100.0f64,
        beta in 0.0..1.0f64,
        epsilon in 0.0..1.0f64,
        n in 0usize..60,
        residual in 0.0..1e6f64,
    ) {
        let cfg = SolverConfig { lambda0, beta, epsilon, ..Default::default() };
        let lambda = cfg.lambda(n, residual);
        prop_assert!(lambda >= epsilon * residual);
        prop_assert!(lambda >= lambda0 * beta.powi(n as i32));
    }

    #[test]
    fn error_rate_is_homogeneous((rho, t) in params(4), c in 0.1..3.0f64) {
        let truth = map(2, &rho.iter().map(|r| (r.0.abs() + 1.0, r.1)).collect::<Vec<_>>(), &t.iter().map(|p| (p.0.abs() + 1.0, p.1.abs() + 1.0)).collect::<Vec<_>>());
        prop_assert_eq!(error_rate(&truth, &truth).unwrap().channels(), [0.0; 3]);
        let mut scaled = truth.clone();
        for k in 0..4 {
            scaled.t1[k] *= c;
            scaled.t2[k] *= c;
            scaled.rho[k] *= c;
        }
        for e in error_rate(&scaled, &truth).unwrap().channels() {
            prop_assert!((e - (c - 1.0).abs()).abs() <= 1e-12);
        }
        let mut moved = truth.clone();
        moved.t2[3] += 1.0;
        prop_assert!(error_rate(&moved, &truth).unwrap().t2.unwrap() > 0.0);
    }
}

#[test]
fn noise_has_the_requested_moments() {
    let n = 32;
    let len = 8;
    let sigma = 0.7;
    let mut x = ParameterMap::zeros(n);
    x.t1.fill(1000.0);
    x.t2.fill(100.0);
    x.set_domain(vec![true; n * n]).unwrap();
    let seq = PulseSequence::constant(len, 0.5, 10.0).unwrap();
    let mask = SamplingMask::full(n, len);
    for seed in [1u64, 2, 3] {
        // Zero density leaves pure noise, which the unitary DFT keeps white.
        let data: KSpaceData = synthesize_data(&x, &seq, &mask, sigma, seed).unwrap().data;
        let parts: Vec<f64> = data.values().iter().flat_map(|z| [z.re, z.im]).collect();
        let count = parts.len() as f64;
        let mean = parts.iter().sum::<f64>() / count;
        let var = parts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let tol = 3.0 / count.sqrt();
        assert!(mean.abs() / sigma < tol, "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < tol * 2f64.sqrt(), "variance {var}");
    }
}
