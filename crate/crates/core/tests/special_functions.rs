use num_complex::Complex64 as C64;
use proptest::prelude::*;
use qkzb_core::elliptic::{phase1, theta};
use qkzb_core::params::expi;
use qkzb_core::{ModularParams, SeriesConfig};

fn mp() -> ModularParams {
    ModularParams::new(C64::new(0.05, 0.7), C64::new(-0.1, 0.53), C64::new(0.0, -0.04)).unwrap()
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_quasi_periodic(re in -1.0f64..1.0, im in -0.3f64..0.3) {
        let cfg = SeriesConfig::default();
        let tau = mp().tau();
        let t = C64::new(re, im);
        let v = theta(t, tau, &cfg).unwrap();
        prop_assert!(rel(theta(t + 1.0, tau, &cfg).unwrap(), -v) < 1e-10);
        let shifted = theta(t + tau, tau, &cfg).unwrap();
        let expected = -(-C64::i() * std::f64::consts::PI * (tau + 2.0 * t)).exp() * v;
        prop_assert!(rel(shifted, expected) < 1e-10);
        prop_assert!(rel(theta(-t, tau, &cfg).unwrap(), -v) < 1e-12);
    }

    #[test]
    fn omega_functional_equations(re in -1.0f64..1.0, im in -0.2f64..0.2, are in -0.4f64..0.4, aim in -0.15f64..0.05) {
        let cfg = SeriesConfig::default();
        let m = mp();
        let (t, a) = (C64::new(re, im), C64::new(are, aim));
        let om = phase1(t, &m, a, &cfg).unwrap();
        let by_p = phase1(t + m.p(), &m, a, &cfg).unwrap();
        let mult_p = expi(a) * theta(t + a, m.tau(), &cfg).unwrap() / theta(t - a, m.tau(), &cfg).unwrap();
        prop_assert!(rel(by_p, mult_p * om) < 1e-9);
        let by_tau = phase1(t + m.tau(), &m, a, &cfg).unwrap();
        let mult_tau = expi(a) * theta(t + a, m.p(), &cfg).unwrap() / theta(t - a, m.p(), &cfg).unwrap();
        prop_assert!(rel(by_tau, mult_tau * om) < 1e-9);
        let swapped = phase1(t, &m.swapped(), a, &cfg).unwrap();
        prop_assert!(rel(swapped, om) < 1e-12);
        prop_assert!(rel(phase1(t + 1.0, &m, a, &cfg).unwrap(), om) < 1e-12);
    }
}
