//! qKZB difference operators K_j and the diagonal operators D_k, D, B_j, F_j on
//! the zero-weight block. Factor positions are 0-based.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{diag, CMat};
use crate::params::SystemParams;
use crate::rmatrix::{embed_pair, h_value, RMatrixEngine};
use crate::weights::{admissibility, enumerate_indices, WeightIndex, INT_TOL};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Which spectator factors shift the dynamical argument of R^{(k,m)}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ShiftConvention {
    /// s ∈ {1..m−1} \ {k}.
    #[default]
    Paper,
    /// s < min(k, m).
    Alternative,
}

impl ShiftConvention {
    fn spectators(self, k: usize, m: usize) -> Vec<usize> {
        match self {
            ShiftConvention::Paper => (0..m).filter(|&s| s != k).collect(),
            ShiftConvention::Alternative => (0..k.min(m)).collect(),
        }
    }
}

/// The zero-weight basis {e_l̄ : l̄ ∈ Z^n_l}, optionally only the Λ-admissible ones.
pub fn zero_weight_basis(sp: &SystemParams, admissible_only: bool) -> Result<Vec<WeightIndex>> {
    if sp.weight_defect() > 1e-9 {
        return Err(Error::InvalidParameters(format!(
            "sum of highest weights must equal 2l = {} (defect {:.3e})",
            2 * sp.l(),
            sp.weight_defect()
        )));
    }
    let mut b = enumerate_indices(sp.n(), sp.l());
    if admissible_only {
        b.retain(|i| admissibility(i, sp.lambda(), INT_TOL).is_empty());
    }
    Ok(b)
}

#[derive(Clone, Debug)]
pub struct ShiftTerm {
    pub shift: C64,
    pub matrix: CMat,
}

/// An operator evaluated at a fixed λ: (KΨ)(λ) = Σ_a C_a Ψ(λ − s_a).
#[derive(Clone, Debug)]
pub struct DifferenceOperator {
    pub lam: C64,
    pub terms: Vec<ShiftTerm>,
}

impl DifferenceOperator {
    pub fn apply<F>(&self, psi: F) -> Result<CMat>
    where
        F: Fn(C64) -> Result<CMat>,
    {
        let mut out: Option<CMat> = None;
        for t in &self.terms {
            let v = &t.matrix * psi(self.lam - t.shift)?;
            out = Some(match out {
                Some(o) => o + v,
                None => v,
            });
        }
        out.ok_or_else(|| Error::InvalidParameters("empty difference operator".into()))
    }

    /// self ∘ other, where `other_at(λ′)` gives the second operator at λ′.
    pub fn compose<F>(&self, other_at: F) -> Result<DifferenceOperator>
    where
        F: Fn(C64) -> Result<DifferenceOperator>,
    {
        let mut terms = Vec::new();
        for a in &self.terms {
            let inner = other_at(self.lam - a.shift)?;
            for b in &inner.terms {
                terms.push(ShiftTerm { shift: a.shift + b.shift, matrix: &a.matrix * &b.matrix });
            }
        }
        Ok(DifferenceOperator { lam: self.lam, terms }.merged())
    }

    /// Terms with equal shifts (to 1e-12) summed, in order of first appearance.
    pub fn merged(self) -> DifferenceOperator {
        let mut out: Vec<ShiftTerm> = Vec::new();
        for t in self.terms {
            match out.iter_mut().find(|o| (o.shift - t.shift).norm() < 1e-12) {
                Some(o) => o.matrix += t.matrix,
                None => out.push(t),
            }
        }
        DifferenceOperator { lam: self.lam, terms: out }
    }

    /// Relative distance between two operators, comparing coefficients shift by shift.
    pub fn distance(&self, other: &DifferenceOperator) -> f64 {
        let a = self.clone().merged();
        let b = other.clone().merged();
        let mut num = 0.0;
        let mut den = 0.0;
        for t in &a.terms {
            den += t.matrix.norm_squared();
            match b.terms.iter().find(|o| (o.shift - t.shift).norm() < 1e-12) {
                Some(o) => num += (&t.matrix - &o.matrix).norm_squared(),
                None => num += t.matrix.norm_squared(),
            }
        }
        for t in &b.terms {
            if !a.terms.iter().any(|o| (o.shift - t.shift).norm() < 1e-12) {
                num += t.matrix.norm_squared();
            }
        }
        (num / den).sqrt()
    }
}

/// K_j assembled from R-matrices of one elliptic modulus, on a fixed zero-weight basis.
pub struct QkzbOperators<'a> {
    pub engine: &'a RMatrixEngine,
    pub lambdas: Vec<C64>,
    pub basis: Vec<WeightIndex>,
    pub convention: ShiftConvention,
}

impl<'a> QkzbOperators<'a> {
    pub fn new(engine: &'a RMatrixEngine, lambdas: Vec<C64>, basis: Vec<WeightIndex>) -> Self {
        QkzbOperators { engine, lambdas, basis, convention: ShiftConvention::Paper }
    }

    pub fn with_convention(mut self, c: ShiftConvention) -> Self {
        self.convention = c;
        self
    }

    /// R^{(k,m)}(λ − 2η Σ_s h^{(s)}; z) on the basis.
    pub fn r_km(&self, k: usize, m: usize, lam: C64, z: C64) -> Result<CMat> {
        let spect = self.convention.spectators(k, m);
        let eta = self.engine.eta();
        let lambdas = &self.lambdas;
        embed_pair(self.engine, &self.basis, lambdas, k, m, z, |idx| {
            lam - 2.0 * eta * spect.iter().map(|&s| h_value(idx, lambdas, s)).sum::<C64>()
        })
    }

    /// K_j(λ) = R_{j,j−1}(z_j−z_{j−1}+step)…R_{j,1}(z_j−z_1+step) Γ_j R_{j,n}(z_j−z_n)…R_{j,j+1}(z_j−z_{j+1}).
    pub fn k_op(&self, j: usize, lam: C64, z: &[C64], step: C64) -> Result<DifferenceOperator> {
        let n = self.lambdas.len();
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, n });
        }
        let dim = self.basis.len();
        let eta = self.engine.eta();
        let mut a = CMat::identity(dim, dim);
        for m in (0..j).rev() {
            a *= self.r_km(j, m, lam, z[j] - z[m] + step)?;
        }
        let b_at = |lm: C64| -> Result<CMat> {
            let mut b = CMat::identity(dim, dim);
            for m in ((j + 1)..n).rev() {
                b *= self.r_km(j, m, lm, z[j] - z[m])?;
            }
            Ok(b)
        };
        let mut levels: Vec<usize> = self.basis.iter().map(|b| b.coords()[j]).collect();
        levels.sort_unstable();
        levels.dedup();
        let mut terms = Vec::new();
        for lj in levels {
            let proj: Vec<C64> =
                self.basis.iter().map(|b| C64::new(if b.coords()[j] == lj { 1.0 } else { 0.0 }, 0.0)).collect();
            let shift = 2.0 * eta * (self.lambdas[j] - 2.0 * lj as f64);
            let matrix = &a * diag(&proj) * b_at(lam - shift)?;
            terms.push(ShiftTerm { shift, matrix });
        }
        Ok(DifferenceOperator { lam, terms })
    }
}

/// α(λ) = exp(−πiλ²/4η).
pub fn alpha_fn(lam: C64, eta: C64) -> C64 {
    (-I * PI * lam * lam / (4.0 * eta)).exp()
}

/// Diagonal of D_k(λ, η; a) on `basis`.
pub fn d_op(k: usize, lam: C64, eta: C64, lambdas: &[C64], basis: &[WeightIndex]) -> Result<Vec<C64>> {
    let n = lambdas.len();
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, n });
    }
    let before: C64 = lambdas[..k].iter().sum();
    let after: C64 = lambdas[k + 1..].iter().sum();
    let tail = (I * PI * eta * lambdas[k] * (before - after)).exp();
    Ok(basis
        .iter()
        .map(|b| {
            let h = |upto: usize| (0..upto).map(|m| h_value(b, lambdas, m)).sum::<C64>();
            alpha_fn(lam - 2.0 * eta * h(k + 1), eta) / alpha_fn(lam - 2.0 * eta * h(k), eta) * tail
        })
        .collect())
}

/// Diagonal of D(μ, p, η; z, a) = Π_j D_j^{z_j/p}, powers through the principal logarithm.
#[derive(Clone, Debug)]
pub struct DTotal {
    pub diag: Vec<C64>,
    /// Some entry of some D_j lies within 1e-6 of the branch cut.
    pub branch_warning: bool,
}

pub fn d_total(mu: C64, p: C64, eta: C64, sp: &SystemParams, basis: &[WeightIndex]) -> Result<DTotal> {
    let mut out = vec![C64::new(1.0, 0.0); basis.len()];
    let mut branch_warning = false;
    for j in 0..sp.n() {
        let dj = d_op(j, mu, eta, sp.lambda(), basis)?;
        let e = sp.z()[j] / p;
        for (o, d) in out.iter_mut().zip(dj) {
            if d.arg().abs() > PI - 1e-6 {
                branch_warning = true;
            }
            *o *= (e * d.ln()).exp();
        }
    }
    Ok(DTotal { diag: out, branch_warning })
}

/// F_j = exp(2πiη Σ_{m≠j} (z_m − z_j) Λ_m Λ_j / p).
pub fn f_scalar(j: usize, p: C64, eta: C64, sp: &SystemParams) -> Result<C64> {
    let n = sp.n();
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, n });
    }
    let (z, l) = (sp.z(), sp.lambda());
    let s: C64 = (0..n).filter(|&m| m != j).map(|m| (z[m] - z[j]) * l[m] * l[j]).sum();
    Ok((2.0 * PI * I * eta * s / p).exp())
}

/// Diagonal of B_j(λ, p, η; z, a) = F_j · D_j(λ, η; a).
pub fn b_op(j: usize, lam: C64, p: C64, eta: C64, sp: &SystemParams, basis: &[WeightIndex]) -> Result<Vec<C64>> {
    let f = f_scalar(j, p, eta, sp)?;
    Ok(d_op(j, lam, eta, sp.lambda(), basis)?.into_iter().map(|d| f * d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SeriesConfig;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zero_weight_examples() {
        let one = c(1.0, 0.0);
        let sp = SystemParams::new(vec![one, one], vec![c(0.0, 0.0), c(0.3, 0.0)], 1).unwrap();
        assert_eq!(zero_weight_basis(&sp, false).unwrap().len(), 2);
        assert_eq!(zero_weight_basis(&sp, true).unwrap().len(), 2);
        let sp3 = SystemParams::new(vec![one, one, c(2.0, 0.0)], vec![c(0.0, 0.0); 3], 2).unwrap();
        assert_eq!(zero_weight_basis(&sp3, false).unwrap().len(), 6);
        let adm = zero_weight_basis(&sp3, true).unwrap();
        // (2,0,0) and (0,2,0) both overfill a weight-1 factor
        assert_eq!(adm.len(), 4);
        assert!(!adm.contains(&WeightIndex::new(vec![2, 0, 0])));
        assert!(!adm.contains(&WeightIndex::new(vec![0, 2, 0])));
        assert!(zero_weight_basis(&sp3.with_l(1), false).is_err());
    }

    #[test]
    fn single_factor_k_is_identity() {
        let e = RMatrixEngine::new(c(0.0, 0.7), c(0.0, -0.04), SeriesConfig::default());
        let ops = QkzbOperators::new(&e, vec![c(2.0, 0.0)], vec![WeightIndex::new(vec![1])]);
        let k = ops.k_op(0, c(0.3, 0.1), &[c(0.0, 0.0)], c(0.0, 0.53)).unwrap();
        assert_eq!(k.terms.len(), 1);
        assert!(k.terms[0].shift.norm() < 1e-15);
        assert!((&k.terms[0].matrix - CMat::identity(1, 1)).norm() < 1e-15);
        assert!(matches!(ops.k_op(1, c(0.3, 0.1), &[c(0.0, 0.0)], c(0.0, 0.53)), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn alpha_values() {
        let eta = c(0.0, -0.04);
        assert_eq!(alpha_fn(c(0.0, 0.0), eta), c(1.0, 0.0));
        let x = c(0.3, 0.2);
        assert!((alpha_fn(x, eta) * alpha_fn(-x, eta) - alpha_fn(x, eta).powi(2)).norm() < 1e-12);
        let direct = (-I * PI * x * x / (4.0 * eta)).exp();
        assert!((alpha_fn(x, eta) - direct).norm() < 1e-15);
    }

    #[test]
    fn d_examples() {
        let eta = c(0.0, -0.04);
        let b1 = vec![WeightIndex::new(vec![1])];
        let d = d_op(0, c(0.4, 0.1), eta, &[c(2.0, 0.0)], &b1).unwrap();
        assert!((d[0] - 1.0).norm() < 1e-14);

        let lambdas = [c(1.3, 0.2), c(0.7, -0.2)];
        let basis = enumerate_indices(2, 1);
        let lam = c(0.37, 0.1);
        let d2 = d_op(1, lam, eta, &lambdas, &basis).unwrap();
        // e_(1,0): h = (Λ1 − 2, Λ2)
        let h1 = lambdas[0] - 2.0;
        let h2 = lambdas[1];
        let oracle = alpha_fn(lam - 2.0 * eta * (h1 + h2), eta) / alpha_fn(lam - 2.0 * eta * h1, eta)
            * (I * PI * eta * lambdas[1] * lambdas[0]).exp();
        assert!((d2[0] - oracle).norm() < 1e-13 * oracle.norm());
    }

    #[test]
    fn d_total_identities() {
        let eta = c(0.0, -0.04);
        let p = c(0.0, 0.53);
        let mu = c(-0.21, 0.05);
        let lambdas = vec![c(1.3, 0.2), c(0.7, -0.2)];
        let basis = enumerate_indices(2, 1);
        let sp0 = SystemParams::new(lambdas.clone(), vec![c(0.0, 0.0); 2], 1).unwrap();
        let id = d_total(mu, p, eta, &sp0, &basis).unwrap();
        assert!(id.diag.iter().all(|d| (d - 1.0).norm() < 1e-15));
        let spp = SystemParams::new(lambdas.clone(), vec![p, p], 1).unwrap();
        let dp = d_total(mu, p, eta, &spp, &basis).unwrap();
        let d0 = d_op(0, mu, eta, &lambdas, &basis).unwrap();
        let d1 = d_op(1, mu, eta, &lambdas, &basis).unwrap();
        for k in 0..2 {
            assert!((dp.diag[k] - d0[k] * d1[k]).norm() < 1e-12 * dp.diag[k].norm());
        }
        let sp = SystemParams::new(lambdas.clone(), vec![c(0.11, 0.02), c(0.4, -0.03)], 1).unwrap();
        let base = d_total(mu, p, eta, &sp, &basis).unwrap();
        let shifted = d_total(mu, p, eta, &sp.with_z(0, sp.z()[0] + p), &basis).unwrap();
        for k in 0..2 {
            assert!((shifted.diag[k] - d0[k] * base.diag[k]).norm() < 1e-10 * shifted.diag[k].norm());
        }
    }

    #[test]
    fn b_and_f() {
        let eta = c(0.0, -0.04);
        let p = c(0.0, 0.53);
        let lambdas = vec![c(1.0, 0.0), c(1.0, 0.0)];
        let basis = enumerate_indices(2, 1);
        let same = SystemParams::new(lambdas.clone(), vec![c(0.2, 0.0); 2], 1).unwrap();
        assert!((f_scalar(0, p, eta, &same).unwrap() - 1.0).norm() < 1e-15);
        let b = b_op(0, c(0.3, 0.0), p, eta, &same, &basis).unwrap();
        let d = d_op(0, c(0.3, 0.0), eta, &lambdas, &basis).unwrap();
        assert_eq!(b, d);
        let one = SystemParams::new(vec![c(2.0, 0.0)], vec![c(0.3, 0.0)], 1).unwrap();
        assert_eq!(f_scalar(0, p, eta, &one).unwrap(), c(1.0, 0.0));
        let sp = SystemParams::new(lambdas, vec![c(0.0, 0.0), c(0.31, 0.0)], 1).unwrap();
        let f = f_scalar(0, p, eta, &sp).unwrap();
        assert!((f - (2.0 * PI * I * eta * 0.31 / p).exp()).norm() < 1e-15);
    }
}
