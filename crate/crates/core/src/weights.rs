//! Elliptic weight functions, their index sets and the elliptic action of S_l.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditions::lattice_distance;
use crate::elliptic::theta;
use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::params::{ModularParams, SeriesConfig, SystemParams};

/// A composition l̄ = (l_1, …, l_n) of l.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightIndex {
    coords: Vec<usize>,
}

impl WeightIndex {
    pub fn new(coords: Vec<usize>) -> Self {
        WeightIndex { coords }
    }
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }
    pub fn n(&self) -> usize {
        self.coords.len()
    }
    pub fn level(&self) -> usize {
        self.coords.iter().sum()
    }
    /// l^m = l_1 + … + l_m, with l^0 = 0.
    pub fn partial_sum(&self, m: usize) -> usize {
        self.coords[..m].iter().sum()
    }
}

impl std::fmt::Display for WeightIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// All compositions of `l` into `n` parts, first coordinate descending:
/// (2,1) gives [(1,0), (0,1)].
pub fn enumerate_indices(n: usize, l: usize) -> Vec<WeightIndex> {
    fn rec(n: usize, l: usize, prefix: &mut Vec<usize>, out: &mut Vec<WeightIndex>) {
        if n == 1 {
            prefix.push(l);
            out.push(WeightIndex::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=l).rev() {
            prefix.push(first);
            rec(n - 1, l - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n >= 1 {
        rec(n, l, &mut Vec::new(), &mut out);
    }
    out
}

/// Λ as a nonnegative integer, if it is one within `tol`.
pub fn as_nonneg_integer(x: C64, tol: f64) -> Option<usize> {
    let r = x.re.round();
    if r >= 0.0 && (x - r).norm() < tol {
        Some(r as usize)
    } else {
        None
    }
}

/// B_Λ(l̄): the coordinates (0-based) where Λ_i is a nonnegative integer and l_i > Λ_i.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AdmissibilitySet {
    pub bad: Vec<usize>,
}

impl AdmissibilitySet {
    pub fn is_empty(&self) -> bool {
        self.bad.is_empty()
    }
    pub fn intersects(&self, other: &AdmissibilitySet) -> bool {
        self.bad.iter().any(|b| other.bad.contains(b))
    }
}

pub const INT_TOL: f64 = 1e-9;

pub fn admissibility(idx: &WeightIndex, lambda: &[C64], int_tol: f64) -> AdmissibilitySet {
    let bad = idx
        .coords()
        .iter()
        .zip(lambda)
        .enumerate()
        .filter_map(|(i, (&li, &lam))| match as_nonneg_integer(lam, int_tol) {
            Some(k) if li > k => Some(i),
            _ => None,
        })
        .collect();
    AdmissibilitySet { bad }
}

/// All permutations of 0..l in lexicographic order.
pub fn permutations(l: usize) -> Vec<Vec<usize>> {
    fn rec(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for k in 0..rest.len() {
            let v = rest.remove(k);
            cur.push(v);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(k, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut (0..l).collect(), &mut Vec::new(), &mut out);
    out
}

/// A reduced word for `perm`: the adjacent swaps (0-based positions) that bubble-sort it.
pub fn reduced_word(perm: &[usize]) -> Vec<usize> {
    let mut arr = perm.to_vec();
    let mut word = Vec::new();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..arr.len().saturating_sub(1) {
            if arr[i] > arr[i + 1] {
                arr.swap(i, i + 1);
                word.push(i);
                changed = true;
            }
        }
    }
    word
}

/// Every reduced word of `perm` (each swap removes exactly one inversion).
pub fn all_reduced_words(perm: &[usize]) -> Vec<Vec<usize>> {
    fn rec(arr: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let descents: Vec<usize> = (0..arr.len().saturating_sub(1)).filter(|&i| arr[i] > arr[i + 1]).collect();
        if descents.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in descents {
            arr.swap(i, i + 1);
            cur.push(i);
            rec(arr, cur, out);
            cur.pop();
            arr.swap(i, i + 1);
        }
    }
    let mut out = Vec::new();
    rec(&mut perm.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// [f]_σ(t) for σ given by a word of simple transpositions s_i = (i, i+1):
/// each letter multiplies by θ(x_i − x_{i+1} − 2η)/θ(x_i − x_{i+1} + 2η) at the
/// current point and then swaps x_i and x_{i+1}.
pub fn elliptic_action<F>(f: F, word: &[usize], t: &[C64], tau: C64, eta: C64, cfg: &SeriesConfig) -> Result<C64>
where
    F: Fn(&[C64]) -> Result<C64>,
{
    let mut x = t.to_vec();
    let mut fac = C64::new(1.0, 0.0);
    for &i in word {
        let u = x[i] - x[i + 1];
        let den = theta(u + 2.0 * eta, tau, cfg)?;
        if den.norm() < cfg.eps {
            return Err(Error::PoleHit { factor: format!("elliptic action, letter s_{}", i + 1) });
        }
        fac *= theta(u - 2.0 * eta, tau, cfg)? / den;
        x.swap(i, i + 1);
    }
    Ok(f(&x)? * fac)
}

fn ratio(num: C64, den: C64, cfg: &SeriesConfig, what: impl FnOnce() -> String) -> Result<C64> {
    if den.norm() < cfg.eps {
        return Err(Error::PoleHit { factor: what() });
    }
    Ok(num / den)
}

/// Π_{i<j} θ(t_i−t_j)/θ(t_i−t_j+2η) · Π_j θ(t_j−z−a+λ+2ηl)/θ(t_j−z−a).
pub fn one_point_weight(
    t: &[C64],
    lam: C64,
    tau: C64,
    eta: C64,
    z: C64,
    a: C64,
    cfg: &SeriesConfig,
) -> Result<C64> {
    let l = t.len() as f64;
    let mut v = C64::new(1.0, 0.0);
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let u = t[i] - t[j];
            v *= ratio(theta(u, tau, cfg)?, theta(u + 2.0 * eta, tau, cfg)?, cfg, || {
                format!("theta(t_{} - t_{} + 2eta)", i + 1, j + 1)
            })?;
        }
    }
    for (j, &tj) in t.iter().enumerate() {
        let x = tj - z - a;
        v *= ratio(theta(x + lam + 2.0 * eta * l, tau, cfg)?, theta(x, tau, cfg)?, cfg, || {
            format!("theta(t_{} - z - a)", j + 1)
        })?;
    }
    Ok(v)
}

/// θ(t_v − t_w − 2η)/θ(t_v − t_w + 2η) and θ(t_v − t_w)/θ(t_v − t_w + 2η), row-major in (v, w).
#[derive(Clone, Debug)]
pub struct PairTables {
    l: usize,
    phi: Vec<C64>,
    pair: Vec<C64>,
}

/// The data a family of weight functions depends on: points z, a_j = ηΛ_j, the
/// elliptic modulus of its theta functions and η.
#[derive(Clone, Debug)]
pub struct WeightSystem {
    pub z: Vec<C64>,
    pub a: Vec<C64>,
    pub modulus: C64,
    pub eta: C64,
    pub cfg: SeriesConfig,
}

impl WeightSystem {
    pub fn new(z: Vec<C64>, a: Vec<C64>, modulus: C64, eta: C64, cfg: SeriesConfig) -> Self {
        WeightSystem { z, a, modulus, eta, cfg }
    }

    /// Weight functions in the variable λ (modulus τ).
    pub fn tau_side(sp: &SystemParams, mp: &ModularParams, cfg: SeriesConfig) -> Self {
        Self::new(sp.z().to_vec(), sp.a(mp.eta()), mp.tau(), mp.eta(), cfg)
    }

    /// Weight functions in the variable μ (modulus p).
    pub fn p_side(sp: &SystemParams, mp: &ModularParams, cfg: SeriesConfig) -> Self {
        Self::new(sp.z().to_vec(), sp.a(mp.eta()), mp.p(), mp.eta(), cfg)
    }

    fn th(&self, x: C64) -> Result<C64> {
        theta(x, self.modulus, &self.cfg)
    }

    /// w_l̄(t; λ) via the generic elliptic action; slow, kept as an oracle.
    pub fn weight_generic(&self, idx: &WeightIndex, t: &[C64], lam: C64) -> Result<C64> {
        let l = check_len(idx, t)?;
        if l == 0 {
            return Ok(C64::new(1.0, 0.0));
        }
        let n = idx.n();
        let eta = self.eta;
        let f = |x: &[C64]| -> Result<C64> {
            let mut v = C64::new(1.0, 0.0);
            let mut shift = C64::new(0.0, 0.0);
            for i in 0..n {
                let (lo, hi) = (idx.partial_sum(i), idx.partial_sum(i + 1));
                v *= one_point_weight(&x[lo..hi], lam - shift, self.modulus, eta, self.z[i], self.a[i], &self.cfg)?;
                v /= factorial(idx.coords()[i]);
                for m in 0..i {
                    for &xs in &x[lo..hi] {
                        v *= self.th(xs - self.z[m] + self.a[m])? / self.th(xs - self.z[m] - self.a[m])?;
                    }
                }
                shift += 2.0 * eta * (self.a[i] / eta - 2.0 * idx.coords()[i] as f64);
            }
            Ok(v)
        };
        let mut tot = C64::new(0.0, 0.0);
        for perm in permutations(l) {
            tot += elliptic_action(&f, &reduced_word(&perm), t, self.modulus, eta, &self.cfg)?;
        }
        Ok(tot)
    }

    /// w_l̄(t; λ). Every theta ratio is evaluated once per point and reused
    /// across the l! permutation terms.
    pub fn weight(&self, idx: &WeightIndex, t: &[C64], lam: C64) -> Result<C64> {
        let l = check_len(idx, t)?;
        if l == 0 {
            return Ok(C64::new(1.0, 0.0));
        }
        let tables = self.pair_tables(t)?;
        let mut group = Vec::with_capacity(l * idx.n());
        for &tv in t {
            group.extend(self.group_factors(idx, tv, lam)?);
        }
        Ok(self.assemble(idx, &tables, &group))
    }

    /// Two-variable factors of the weight functions at `t`; shared by all indices.
    pub fn pair_tables(&self, t: &[C64]) -> Result<PairTables> {
        let l = t.len();
        let eta = self.eta;
        let mut phi = vec![C64::new(0.0, 0.0); l * l];
        let mut pair = vec![C64::new(0.0, 0.0); l * l];
        for v in 0..l {
            for w in 0..l {
                if v == w {
                    continue;
                }
                let u = t[v] - t[w];
                let den = self.th(u + 2.0 * eta)?;
                if den.norm() < self.cfg.eps {
                    return Err(Error::PoleHit { factor: format!("theta(t_{} - t_{} + 2eta)", v + 1, w + 1) });
                }
                phi[v * l + w] = self.th(u - 2.0 * eta)? / den;
                pair[v * l + w] = self.th(u)? / den;
            }
        }
        Ok(PairTables { l, phi, pair })
    }

    /// One-variable factors of w_l̄ at a single point, one per group; groups
    /// with l_i = 0 get 0.
    pub fn group_factors(&self, idx: &WeightIndex, tv: C64, lam: C64) -> Result<Vec<C64>> {
        let n = idx.n();
        let eta = self.eta;
        let cfg = &self.cfg;
        let mut out = vec![C64::new(0.0, 0.0); n];
        let mut shift = C64::new(0.0, 0.0);
        for i in 0..n {
            let li = idx.coords()[i];
            if li > 0 {
                let x = tv - self.z[i] - self.a[i];
                let mut g = ratio(self.th(x + lam - shift + 2.0 * eta * li as f64)?, self.th(x)?, cfg, || {
                    format!("theta(t - z_{} - a_{})", i + 1, i + 1)
                })?;
                for m in 0..i {
                    let y = tv - self.z[m];
                    g *= ratio(self.th(y + self.a[m])?, self.th(y - self.a[m])?, cfg, || {
                        format!("theta(t - z_{} - a_{})", m + 1, m + 1)
                    })?;
                }
                out[i] = g;
            }
            shift += 2.0 * eta * (self.a[i] / eta - 2.0 * li as f64);
        }
        Ok(out)
    }

    /// Sum over permutations given pair tables and per-variable group factors
    /// (`group[v * n + i]`).
    pub fn assemble(&self, idx: &WeightIndex, tables: &PairTables, group: &[C64]) -> C64 {
        let l = tables.l;
        let n = idx.n();
        let norm: f64 = idx.coords().iter().map(|&k| 1.0 / factorial(k)).product();
        let mut tot = C64::new(0.0, 0.0);
        let mut x: Vec<usize> = Vec::with_capacity(l);
        for perm in permutations(l) {
            x.clear();
            x.extend(0..l);
            let mut fac = C64::new(1.0, 0.0);
            for i in reduced_word(&perm) {
                fac *= tables.phi[x[i] * l + x[i + 1]];
                x.swap(i, i + 1);
            }
            for i in 0..n {
                let (lo, hi) = (idx.partial_sum(i), idx.partial_sum(i + 1));
                for s in lo..hi {
                    fac *= group[x[s] * n + i];
                    for s2 in s + 1..hi {
                        fac *= tables.pair[x[s] * l + x[s2]];
                    }
                }
            }
            tot += fac;
        }
        tot * norm
    }

    /// Minimum lattice distance of `t` to the pole hyperplanes of these weight functions.
    pub fn pole_distance(&self, t: &[C64]) -> f64 {
        let mut d = f64::INFINITY;
        for &tv in t {
            for (&zm, &am) in self.z.iter().zip(&self.a) {
                d = d.min(lattice_distance(tv - zm - am, self.modulus));
                d = d.min(lattice_distance(tv - zm + am, self.modulus));
            }
        }
        for v in 0..t.len() {
            for w in 0..t.len() {
                if v != w {
                    d = d.min(lattice_distance(t[v] - t[w] + 2.0 * self.eta, self.modulus));
                }
            }
        }
        d
    }
}

fn check_len(idx: &WeightIndex, t: &[C64]) -> Result<usize> {
    let l = idx.level();
    if t.len() != l {
        return Err(Error::InvalidParameters(format!("index {idx} needs {l} variables, got {}", t.len())));
    }
    Ok(l)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Convenience form of w_l̄ with the τ-modulus.
pub fn weight_function(
    idx: &WeightIndex,
    t: &[C64],
    lam: C64,
    sp: &SystemParams,
    mp: &ModularParams,
    cfg: &SeriesConfig,
) -> Result<C64> {
    WeightSystem::tau_side(sp, mp, *cfg).weight(idx, t, lam)
}

pub const SAMPLE_OFFSET: f64 = 0.1;
pub const SAMPLE_REJECT: f64 = 1e-3;

/// Seeded collocation points: uniform in [0,1)^l shifted by 0.1i, kept only if
/// they are at least 1e-3 away from the poles of every listed system.
pub fn sample_points(seed: u64, count: usize, l: usize, systems: &[&WeightSystem]) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t: Vec<C64> = (0..l).map(|_| C64::new(rng.random::<f64>(), SAMPLE_OFFSET)).collect();
        if systems.iter().all(|s| s.pole_distance(&t) >= SAMPLE_REJECT) {
            out.push(t);
        }
    }
    out
}

/// Collocation matrix W[s, k] = w_{indices[k]}(t_s; λ).
pub fn weight_basis_matrix(
    indices: &[WeightIndex],
    samples: &[Vec<C64>],
    lam: C64,
    ws: &WeightSystem,
) -> Result<DMatrix<C64>> {
    let mut m = DMatrix::zeros(samples.len(), indices.len());
    for (s, t) in samples.iter().enumerate() {
        for (k, idx) in indices.iter().enumerate() {
            m[(s, k)] = ws.weight(idx, t, lam)?;
        }
    }
    Ok(m)
}

pub const MAX_CONDITION: f64 = 1e10;

/// Collocation matrix on seeded samples, resampling up to three times if the
/// condition estimate exceeds 1e10. Returns the matrix, its samples and the estimate.
pub fn conditioned_basis_matrix(
    indices: &[WeightIndex],
    lam: C64,
    ws: &WeightSystem,
    extra: &[&WeightSystem],
    seed: u64,
    oversample: usize,
) -> Result<(DMatrix<C64>, Vec<Vec<C64>>, f64)> {
    let l = indices.first().map(|i| i.level()).unwrap_or(0);
    let mut systems = vec![ws];
    systems.extend_from_slice(extra);
    let mut worst = 0.0f64;
    for attempt in 0..3u64 {
        let samples = sample_points(seed.wrapping_add(attempt * 0x9e37_79b9), oversample * indices.len(), l, &systems);
        let m = weight_basis_matrix(indices, &samples, lam, ws)?;
        let cond = condition_number(&m);
        if cond <= MAX_CONDITION {
            return Ok((m, samples, cond));
        }
        worst = cond;
    }
    Err(Error::IllConditioned { cond: worst })
}
