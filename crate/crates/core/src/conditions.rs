//! Lattice-avoidance diagnostics for the genericity conditions on (τ, p, η, z, Λ).

use num_complex::Complex64 as C64;

use crate::params::{ModularParams, SystemParams};

/// Distance from `x` to the lattice Z + τZ.
pub fn lattice_distance(x: C64, tau: C64) -> f64 {
    let s0 = (x.im / tau.im).round();
    let mut best = f64::INFINITY;
    for ds in -1..=1 {
        let y = x - (s0 + ds as f64) * tau;
        let m0 = y.re.round();
        for dm in -1..=1 {
            best = best.min((y - (m0 + dm as f64)).norm());
        }
    }
    best
}

/// Distance from `x` to {m + sτ + s′p : |m|, |s|, |s′| ≤ bound}, optionally excluding s = s′ = 0.
pub fn bounded_lattice_distance(x: C64, tau: C64, p: C64, bound: i64, skip_zero_st: bool) -> f64 {
    let mut best = f64::INFINITY;
    for s in -bound..=bound {
        for s2 in -bound..=bound {
            if skip_zero_st && s == 0 && s2 == 0 {
                continue;
            }
            let y = x - s as f64 * tau - s2 as f64 * p;
            let m0 = y.re.round().clamp(-(bound as f64), bound as f64) as i64;
            for m in (m0 - 1).max(-bound)..=(m0 + 1).min(bound) {
                best = best.min((y - m as f64).norm());
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEntry {
    pub name: &'static str,
    pub description: &'static str,
    /// None when the condition has no quantities to test.
    pub min_distance: Option<f64>,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub entries: Vec<ConditionEntry>,
}

impl ConditionReport {
    pub fn clean(&self) -> bool {
        self.entries.iter().all(|e| !e.violated)
    }
    pub fn get(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
    /// Smallest distance over all conditions that have quantities.
    pub fn margin(&self) -> f64 {
        self.entries.iter().filter_map(|e| e.min_distance).fold(f64::INFINITY, f64::min)
    }
}

fn entry(name: &'static str, description: &'static str, points: &[C64], mp: &ModularParams, bound: i64, delta: f64) -> ConditionEntry {
    if points.is_empty() {
        return ConditionEntry { name, description, min_distance: None, violated: false };
    }
    let d = points
        .iter()
        .map(|&x| bounded_lattice_distance(x, mp.tau(), mp.p(), bound, false))
        .fold(f64::INFINITY, f64::min);
    ConditionEntry { name, description, min_distance: Some(d), violated: d < delta }
}

pub const DEFAULT_BOUND: i64 = 6;
pub const DEFAULT_DELTA: f64 = 1e-6;

/// Bounded lattice search for every genericity condition. Positions and the
/// number of integration variables are taken from `sp`.
pub fn check_conditions(sp: &SystemParams, mp: &ModularParams, bound: i64, delta: f64) -> ConditionReport {
    let eta = mp.eta();
    let a = sp.a(eta);
    let z = sp.z();
    let n = sp.n();
    let l = sp.l() as i64;
    let sym: Vec<i64> = (1 - l..=l - 1).collect();
    let mut entries = Vec::new();

    let signs_ok = mp.tau().im > 0.0 && mp.p().im > 0.0 && eta.im < 0.0;
    entries.push(ConditionEntry {
        name: "im",
        description: "Im tau > 0, Im p > 0, Im eta < 0",
        min_distance: None,
        violated: !signs_ok,
    });

    let indep = bounded_lattice_distance(C64::new(0.0, 0.0), mp.tau(), mp.p(), bound, true);
    entries.push(ConditionEntry {
        name: "indep",
        description: "tau, p independent over Z (bounded search)",
        min_distance: Some(indep),
        violated: indep < delta,
    });

    let pts: Vec<C64> = (1..=l).map(|s| 2.0 * s as f64 * eta).collect();
    entries.push(entry("eta", "2s eta, s = 1..l", &pts, mp, bound, delta));

    let pts: Vec<C64> = a.iter().flat_map(|&ak| sym.iter().map(move |&s| 2.0 * ak + 2.0 * s as f64 * eta)).collect();
    entries.push(entry("a's", "2a_k + 2s eta, |s| < l", &pts, mp, bound, delta));

    let mut pts = Vec::new();
    for k in 0..n {
        for m in 0..n {
            if k == m {
                continue;
            }
            for sm in [1.0, -1.0] {
                for sk in [1.0, -1.0] {
                    for &s in &sym {
                        pts.push(z[m] + sm * a[m] - z[k] + sk * a[k] + 2.0 * s as f64 * eta);
                    }
                }
            }
        }
    }
    entries.push(entry("z's", "z_m +- a_m - z_k +- a_k + 2s eta, m != k, |s| < l", &pts, mp, bound, delta));

    let top = sp.lambda().iter().map(|x| x.re).fold(2.0, f64::max);
    let pts: Vec<C64> = (1..=l).filter(|&s| (s as f64) < top).map(|s| 2.0 * s as f64 * eta).collect();
    entries.push(entry("eta1", "2s eta, 0 < s < max(2, Re Lambda), s <= l", &pts, mp, bound, delta));

    let mut pts = Vec::new();
    for (k, &ak) in a.iter().enumerate() {
        let re = sp.lambda()[k].re;
        for s in 1..l {
            if (s as f64) < re {
                pts.push(2.0 * ak - 2.0 * s as f64 * eta);
            }
        }
    }
    entries.push(entry("a's1", "2a_k - 2s eta, 0 < s < Re Lambda_k, s < l", &pts, mp, bound, delta));

    let mut pts = Vec::new();
    for k in 0..n {
        for m in 0..n {
            if k == m {
                continue;
            }
            for sg in [1.0, -1.0] {
                for &s in &sym {
                    pts.push(z[k] - z[m] + sg * (a[k] + a[m]) + 2.0 * s as f64 * eta);
                }
            }
        }
    }
    entries.push(entry("z's1", "z_k - z_m +- (a_k + a_m) + 2s eta, m != k, |s| < l", &pts, mp, bound, delta));

    ConditionReport { entries }
}
