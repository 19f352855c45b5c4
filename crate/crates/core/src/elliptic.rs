//! Jacobi theta function and the two-modulus phase function Ω.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{expi, ModularParams, SeriesConfig, SystemParams};

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn theta_series(t: C64, tau: C64, cfg: &SeriesConfig, deriv: bool) -> Result<C64> {
    if !(tau.im > 0.0) {
        return Err(Error::InvalidModulus(format!("tau = {tau}")));
    }
    // past the vertex of the Gaussian the terms decay at least this fast
    let vertex = t.im.abs() / tau.im + 1.0;
    let ratio = (-2.0 * PI * tau.im).exp();
    let mut sum = C64::new(0.0, 0.0);
    let mut biggest = 0.0f64;
    let mut j = 0usize;
    loop {
        let mut pair = C64::new(0.0, 0.0);
        let mut pair_mod = 0.0;
        for k in [j as f64 + 0.5, -(j as f64) - 0.5] {
            let term = (I * PI * k * k * tau + 2.0 * PI * I * k * (t + 0.5)).exp();
            let term = if deriv { 2.0 * PI * I * k * term } else { term };
            pair += term;
            pair_mod += term.norm();
        }
        sum += pair;
        biggest = biggest.max(pair_mod);
        j += 1;
        if j as f64 - 0.5 > vertex
            && pair_mod / (1.0 - ratio) <= cfg.eps * sum.norm().max(biggest)
        {
            break;
        }
        if 2 * j >= cfg.max_terms {
            return Err(Error::NonConvergent { what: "theta", terms: 2 * j });
        }
    }
    Ok(-sum)
}

/// θ_τ(t) = −Σ_j exp(πi(j+½)²τ + 2πi(j+½)(t+½)).
pub fn theta(t: C64, tau: C64, cfg: &SeriesConfig) -> Result<C64> {
    theta_series(t, tau, cfg, false)
}

/// d/dt θ_τ(t), by term-wise differentiation.
pub fn theta_deriv(t: C64, tau: C64, cfg: &SeriesConfig) -> Result<C64> {
    theta_series(t, tau, cfg, true)
}

// Returns (Ω, Ω') when `want_log`, otherwise (Ω, 0).
fn phase_core(t: C64, mp: &ModularParams, a: C64, cfg: &SeriesConfig, want_log: bool) -> Result<(C64, C64)> {
    let um = expi(t - a);
    let up = expi(t + a);
    let vm = expi(-(t - a));
    let vp = expi(-(t + a));
    let rq = expi(mp.p() + mp.tau());
    let bound = um.norm() + up.norm() + rq.norm() * (vm.norm() + vp.norm());
    let (rn, qn) = (mp.r().norm(), mp.q().norm());
    let tpi = 2.0 * PI * I;

    // the numerator factor of smallest modulus is kept aside so that the
    // derivative stays finite on the zero set of Ω
    let mut val = C64::new(1.0, 0.0);
    let mut logd = C64::new(0.0, 0.0);
    let mut small = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
    let mut terms = 0usize;
    let mut j = 0i32;
    while rn.powi(j) * bound >= cfg.eps || j == 0 {
        let cr = expi(j as f64 * mp.p());
        let mut k = 0i32;
        while rn.powi(j) * qn.powi(k) * bound >= cfg.eps || k == 0 {
            let c = cr * expi(k as f64 * mp.tau());
            let c1 = c * rq;
            let n1 = 1.0 - c * um;
            let n2 = 1.0 - c1 * vp;
            let d1 = 1.0 - c * up;
            let d2 = 1.0 - c1 * vm;
            if d1.norm() < cfg.eps || d2.norm() < cfg.eps {
                return Err(Error::PoleHit { factor: format!("Omega(t={t}, a={a}) at (j,k)=({j},{k})") });
            }
            if want_log {
                logd += tpi * (c * up / d1 - c1 * vm / d2);
                for (nf, dnf) in [(n1, -tpi * c * um), (n2, tpi * c1 * vp)] {
                    let (keep, dkeep) = if nf.norm() < small.0.norm() {
                        std::mem::replace(&mut small, (nf, dnf))
                    } else {
                        (nf, dnf)
                    };
                    val *= keep;
                    logd += dkeep / keep;
                }
                val /= d1 * d2;
            } else {
                val *= n1 * n2 / (d1 * d2);
            }
            terms += 1;
            if terms >= cfg.max_terms {
                return Err(Error::NonConvergent { what: "phase product", terms });
            }
            k += 1;
        }
        j += 1;
    }
    if want_log {
        // Ω = s·R, Ω' = s'·R + s·R·(log R)'
        let (s, ds) = small;
        return Ok((s * val, ds * val + s * val * logd));
    }
    Ok((val, C64::new(0.0, 0.0)))
}

/// The phase function Ω(t, a) as a truncated double product over r = e^{2πip}, q = e^{2πiτ}.
pub fn phase1(t: C64, mp: &ModularParams, a: C64, cfg: &SeriesConfig) -> Result<C64> {
    Ok(phase_core(t, mp, a, cfg, false)?.0)
}

/// ∂Ω/∂t, as Ω times the logarithmic derivative of the same truncated product.
pub fn phase1_deriv(t: C64, mp: &ModularParams, a: C64, cfg: &SeriesConfig) -> Result<C64> {
    Ok(phase_core(t, mp, a, cfg, true)?.1)
}

/// Π_j Π_m Ω(t_j − z_m, a_m) · Π_{i<j} Ω(t_i − t_j, −2η).
pub fn phase_multi(t: &[C64], sp: &SystemParams, mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    phase_multi_za(t, sp.z(), &sp.a(mp.eta()), mp, cfg)
}

pub(crate) fn phase_multi_za(t: &[C64], z: &[C64], a: &[C64], mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    let mut v = C64::new(1.0, 0.0);
    for (j, &tj) in t.iter().enumerate() {
        for (m, (&zm, &am)) in z.iter().zip(a).enumerate() {
            v *= phase1(tj - zm, mp, am, cfg).map_err(|e| tag(e, format!("t_{} - z_{}", j + 1, m + 1)))?;
        }
    }
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            v *= phase1(t[i] - t[j], mp, -2.0 * mp.eta(), cfg)
                .map_err(|e| tag(e, format!("t_{} - t_{}", i + 1, j + 1)))?;
        }
    }
    Ok(v)
}

fn tag(e: Error, what: String) -> Error {
    match e {
        Error::PoleHit { factor } => Error::PoleHit { factor: format!("{what}: {factor}") },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn mp() -> ModularParams {
        ModularParams::new(c(0.0, 0.7), c(0.0, 0.53), c(0.0, -0.04)).unwrap()
    }

    // wide fixed window, no adaptivity
    fn theta_brute(t: C64, tau: C64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for j in -200i32..200 {
            let k = j as f64 + 0.5;
            s += (I * PI * k * k * tau + 2.0 * PI * I * k * (t + 0.5)).exp();
        }
        -s
    }

    #[test]
    fn theta_zero_and_oracle() {
        let cfg = SeriesConfig::default();
        assert!(theta(c(0.0, 0.0), c(0.0, 0.5), &cfg).unwrap().norm() < 1e-15);
        let t = c(0.3, 0.1);
        let v = theta(t, c(0.0, 0.5), &cfg).unwrap();
        assert!((v - theta_brute(t, c(0.0, 0.5))).norm() < 1e-12);
    }

    #[test]
    fn theta_deriv_finite_difference() {
        let cfg = SeriesConfig::default();
        let tau = c(0.1, 0.6);
        let t = c(0.21, -0.13);
        let h = 1e-6;
        let fd = (theta(t + h, tau, &cfg).unwrap() - theta(t - h, tau, &cfg).unwrap()) / (2.0 * h);
        let d = theta_deriv(t, tau, &cfg).unwrap();
        assert!((fd - d).norm() / d.norm() < 1e-6);
        assert!((theta_deriv(-t, tau, &cfg).unwrap() - d).norm() < 1e-12 * d.norm());
        assert!(theta_deriv(c(0.0, 0.0), c(0.0, 0.5), &cfg).unwrap().norm() > 0.1);
    }

    #[test]
    fn theta_rejects_bad_modulus() {
        let cfg = SeriesConfig::default();
        assert!(matches!(theta(c(0.1, 0.0), c(0.3, -0.1), &cfg), Err(Error::InvalidModulus(_))));
    }

    #[test]
    fn theta_cap() {
        let cfg = SeriesConfig::new(1e-14, 4).unwrap();
        assert!(matches!(theta(c(0.1, 0.0), c(0.0, 0.01), &cfg), Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn phase_trivial_cases() {
        let cfg = SeriesConfig::default();
        let t = c(0.17, 0.05);
        assert!((phase1(t, &mp(), c(0.0, 0.0), &cfg).unwrap() - 1.0).norm() < 1e-15);
        assert!(phase1_deriv(t, &mp(), c(0.0, 0.0), &cfg).unwrap().norm() < 1e-13);
    }

    #[test]
    fn phase_deriv_fd() {
        let cfg = SeriesConfig::default();
        let a = c(0.03, -0.08);
        let t = c(0.27, 0.11);
        let h = 1e-6;
        let fd = (phase1(t + h, &mp(), a, &cfg).unwrap() - phase1(t - h, &mp(), a, &cfg).unwrap()) / (2.0 * h);
        let d = phase1_deriv(t, &mp(), a, &cfg).unwrap();
        assert!((fd - d).norm() / d.norm() < 1e-6);
        let eta = mp().eta();
        let y = phase1_deriv(-2.0 * eta, &mp(), -2.0 * eta, &cfg).unwrap();
        assert!(y.is_finite() && y.norm() > 0.0);
        // Ω(·, a) vanishes at t = a; compare against finite differences there too
        let a2 = -2.0 * eta;
        let fd2 = (phase1(a2 + h, &mp(), a2, &cfg).unwrap() - phase1(a2 - h, &mp(), a2, &cfg).unwrap()) / (2.0 * h);
        assert!((fd2 - y).norm() / y.norm() < 1e-6);
    }

    #[test]
    fn phase_multi_small_cases() {
        let cfg = SeriesConfig::default();
        let m = mp();
        let sp = SystemParams::new(vec![c(1.3, 0.2)], vec![c(0.1, 0.0)], 2).unwrap();
        assert_eq!(phase_multi(&[], &sp, &m, &cfg).unwrap(), c(1.0, 0.0));
        let a = sp.a(m.eta())[0];
        let t1 = c(0.4, 0.1);
        let t2 = c(0.75, -0.05);
        let one = phase_multi(&[t1], &sp, &m, &cfg).unwrap();
        assert_eq!(one, phase1(t1 - 0.1, &m, a, &cfg).unwrap());
        let two = phase_multi(&[t1, t2], &sp, &m, &cfg).unwrap();
        let oracle = phase1(t1 - 0.1, &m, a, &cfg).unwrap()
            * phase1(t2 - 0.1, &m, a, &cfg).unwrap()
            * phase1(t1 - t2, &m, -2.0 * m.eta(), &cfg).unwrap();
        assert!((two - oracle).norm() < 1e-12 * oracle.norm());
    }

    #[test]
    fn window_doubling_is_stable() {
        let loose = SeriesConfig::default();
        let tight = SeriesConfig::new(1e-28, 100_000).unwrap();
        let t = c(0.33, 0.2);
        let a = c(0.0, -0.06);
        let v1 = phase1(t, &mp(), a, &loose).unwrap();
        let v2 = phase1(t, &mp(), a, &tight).unwrap();
        assert!((v1 - v2).norm() < 1e-13 * v1.norm());
        let w1 = theta(t, c(0.0, 0.7), &loose).unwrap();
        let w2 = theta(t, c(0.0, 0.7), &tight).unwrap();
        assert!((w1 - w2).norm() < 1e-14 * w1.norm());
    }

    #[test]
    fn phase_pole_is_reported() {
        let cfg = SeriesConfig::default();
        let a = c(0.0, -0.08);
        // denominator 1 - e^{2πi(t+a)} vanishes at t = -a
        let e = phase1(-a, &mp(), a, &cfg).unwrap_err();
        assert!(matches!(e, Error::PoleHit { .. }));
    }
}
