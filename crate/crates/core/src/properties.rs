//! Randomized invariants across modules.

use num_complex::Complex64 as C;
use proptest::prelude::*;
use crate::cli::fmt_num;
use crate::dispersion::{implicit_slope, omega_at, trace_mode, linspace, Wire};
use crate::dynamics::{evolve_single, laplace_amplitude, DynamicsConfig};
use crate::emission::{se_rate, QuadraticBranch};
use crate::modefields::DipoleSpec;
use crate::specfun::{cyl_seq, CylFunKind};
use crate::twodot::{concurrence, markovian_amplitudes, TwoDotConfig};
use crate::units_media::{permittivity, MediumParams};

fn two_dot(gamma_sp: f64, z0: f64, k0: f64) -> TwoDotConfig {
    TwoDotConfig {
        omega0: 0.6,
        z0_hat: z0,
        k0,
        gamma_sp,
        t_max: 10.0,
        n_steps: 100,
        substeps: 2,
        window_factor: 40.0,
        freq_scale: 1e8,
        check_step: false,
    }
}

proptest! {
    #[test]
    fn drude_is_conjugate_symmetric(re in 0.05f64..3.0, im in -1.0f64..1.0, tau in 1.0f64..100.0) {
        let m = MediumParams::silver().with_tau(tau);
        let w = C::new(re, im);
        let a = permittivity(&m, -w.conj()).unwrap();
        let b = permittivity(&m, w).unwrap().conj();
        prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
    }

    #[test]
    fn bessel_recurrence(r in 0.05f64..40.0, th in -3.1f64..3.1, n in 1u32..10) {
        let z = C::from_polar(r, th);
        let s = cyl_seq(n + 1, z).unwrap();
        for kind in [CylFunKind::J, CylFunKind::H1] {
            let (a, b, c) = (s.scaled(kind, n - 1), s.scaled(kind, n), s.scaled(kind, n + 1));
            let rhs = b * (2.0 * n as f64) / z;
            let size = a.norm().max(c.norm()).max(rhs.norm());
            prop_assert!((a + c - rhs).norm() <= 1e-11 * size);
        }
    }

    #[test]
    fn concurrence_is_bounded_and_scale_free(a in -2.0f64..2.0, b in -2.0f64..2.0, ph in 0.0f64..6.3, s in 0.01f64..100.0) {
        prop_assume!(a.abs() + b.abs() > 1e-6);
        let b1 = C::new(a, 0.0);
        let b2 = C::from_polar(b, ph);
        let c = concurrence(b1, b2).unwrap();
        prop_assert!((0.0..=1.0 + 1e-15).contains(&c));
        let c2 = concurrence(b1 * s, b2 * s).unwrap();
        prop_assert!((c - c2).abs() <= 1e-12);
    }

    #[test]
    fn closed_form_norm_decreases(g in 0.01f64..5.0, t in 0.0f64..10.0, dt in 0.0f64..1.0, k0 in 0.0f64..30.0) {
        let c = two_dot(g, 0.35, k0);
        let (a1, a2) = markovian_amplitudes(&c, t);
        let (b1, b2) = markovian_amplitudes(&c, t + dt);
        prop_assert!(b1.norm_sqr() + b2.norm_sqr() <= a1.norm_sqr() + a2.norm_sqr() + 1e-15);
        prop_assert!(a1.norm_sqr() + a2.norm_sqr() >= 0.5 - 1e-15);
    }

    #[test]
    fn rates_do_not_depend_on_quantization_length(w0 in 0.701f64..0.9, l in 0.1f64..100.0) {
        let b = QuadraticBranch { n: 0, k_c: 5.0, omega_c: 0.7, a: 0.01, k_lo: 0.0, k_hi: 20.0, g2: 0.2 };
        let d = DipoleSpec::radial(0.3);
        let r1 = se_rate(&[&b], w0, &d, 1.0).unwrap().rate;
        let r2 = se_rate(&[&b], w0, &d, l).unwrap().rate;
        prop_assert!((r1 - r2).abs() <= 1e-12 * r1);
    }

    #[test]
    fn laplace_amplitude_has_unit_initial_value(re in 50.0f64..500.0, im in -50.0f64..50.0, delta in -1.0f64..1.0) {
        let mut cfg = DynamicsConfig::minimum(delta, 10.0, 100);
        cfg.gamma = 0.5;
        let z = C::new(re, im);
        let v = z * laplace_amplitude(&cfg, z).unwrap();
        prop_assert!((v - 1.0).norm() < 0.2);
    }

    #[test]
    fn csv_numbers_round_trip(x in -1e12f64..1e12) {
        let s = fmt_num(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn single_dot_never_exceeds_unit_norm(delta in -1.0f64..1.0, coupling in 0.0f64..3.0, gamma in 0.0f64..1.0) {
        let mut cfg = DynamicsConfig::minimum(delta, 10.0, 400);
        cfg.coupling = coupling;
        cfg.gamma = gamma;
        cfg.check_step = false;
        let tr = evolve_single(&cfg).unwrap();
        prop_assert_eq!(tr.b[0], C::new(1.0, 0.0));
        prop_assert!(tr.b.iter().all(|b| b.norm() <= 1.0 + 1e-6));
    }
}

#[test]
fn traced_slope_matches_finite_difference() {
    let w = Wire::default();
    let c = trace_mode(0, &linspace(1.0, 20.0, 96), &w).unwrap();
    for k in [2.0, 5.5, 13.0] {
        let h = 1e-4;
        let fd = (omega_at(&c, k + h).unwrap().omega.re - omega_at(&c, k - h).unwrap().omega.re) / (2.0 * h);
        let p = omega_at(&c, k).unwrap();
        let v = implicit_slope(0, k, p.omega.re, &w).unwrap();
        assert!((v - fd).abs() < 1e-7, "{k}: {v} vs {fd}");
    }
}
