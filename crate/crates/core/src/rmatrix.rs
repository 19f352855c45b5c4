//! Dynamical R-matrices as dual transition matrices between two weight-function bases.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, CMat};
use crate::params::SeriesConfig;
use crate::weights::{
    admissibility, as_nonneg_integer, conditioned_basis_matrix, enumerate_indices, WeightIndex, WeightSystem, INT_TOL,
};

/// A matrix on a weight block, rows and columns labelled by weight indices.
#[derive(Clone, Debug)]
pub struct TensorBlock {
    pub rows: Vec<WeightIndex>,
    pub cols: Vec<WeightIndex>,
    pub data: CMat,
    pub level: usize,
    /// Relative least-squares residual of the collocation solve (0 when exact).
    pub residual: f64,
    /// Condition estimate of the collocation matrix.
    pub condition: f64,
}

impl TensorBlock {
    pub fn identity(indices: Vec<WeightIndex>, level: usize) -> Self {
        let n = indices.len();
        TensorBlock { rows: indices.clone(), cols: indices, data: CMat::identity(n, n), level, residual: 0.0, condition: 1.0 }
    }
}

/// V_Λ truncated to e_0..e_T, or the quotient L_Λ (T = Λ).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModuleSpec {
    pub lambda: C64,
    pub truncation: usize,
    pub quotient: bool,
}

impl ModuleSpec {
    pub fn full(lambda: C64, truncation: usize) -> Self {
        ModuleSpec { lambda, truncation, quotient: false }
    }

    pub fn quotient(lambda: C64) -> Result<Self> {
        let k = as_nonneg_integer(lambda, INT_TOL).ok_or_else(|| Error::NotIntegral(lambda.to_string()))?;
        Ok(ModuleSpec { lambda, truncation: k, quotient: true })
    }
}

fn key_part(x: C64) -> String {
    format!("{:.11e},{:.11e}", x.re, x.im)
}

/// Computes and caches R(λ; z, Λ_1, Λ_2) blocks for one elliptic modulus and η.
pub struct RMatrixEngine {
    modulus: C64,
    eta: C64,
    cfg: SeriesConfig,
    seed: u64,
    residual_tol: f64,
    use_cache: bool,
    cache: Mutex<HashMap<String, Arc<TensorBlock>>>,
}

impl RMatrixEngine {
    pub fn new(modulus: C64, eta: C64, cfg: SeriesConfig) -> Self {
        RMatrixEngine {
            modulus,
            eta,
            cfg,
            seed: 0x5eed,
            residual_tol: 1e-7,
            use_cache: true,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn without_cache(mut self) -> Self {
        self.use_cache = false;
        self
    }

    pub fn modulus(&self) -> C64 {
        self.modulus
    }
    pub fn eta(&self) -> C64 {
        self.eta
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().len()
    }

    /// R on the level-`level` block of V_{Λ1}⊗V_{Λ2}, depending on z = z_1 − z_2.
    pub fn block(&self, lam: C64, z12: C64, l1: C64, l2: C64, level: usize) -> Result<Arc<TensorBlock>> {
        if !self.use_cache {
            return self.compute(lam, z12, l1, l2, level).map(Arc::new);
        }
        let key = format!("{}|{}|{}|{}|{level}", key_part(lam), key_part(z12), key_part(l1), key_part(l2));
        if let Some(b) = self.cache.lock().get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(self.compute(lam, z12, l1, l2, level)?);
        self.cache.lock().insert(key, b.clone());
        Ok(b)
    }

    fn compute(&self, lam: C64, z12: C64, l1: C64, l2: C64, level: usize) -> Result<TensorBlock> {
        let idx = enumerate_indices(2, level);
        if level == 0 {
            return Ok(TensorBlock::identity(idx, 0));
        }
        let zero = C64::new(0.0, 0.0);
        let eta = self.eta;
        let ws = WeightSystem::new(vec![z12, zero], vec![eta * l1, eta * l2], self.modulus, eta, self.cfg);
        let wt = WeightSystem::new(vec![zero, z12], vec![eta * l2, eta * l1], self.modulus, eta, self.cfg);
        let (w, samples, condition) = conditioned_basis_matrix(&idx, lam, &ws, &[&wt], self.seed, 2)?;
        let swapped: Vec<WeightIndex> = idx.iter().map(|i| WeightIndex::new(vec![i.coords()[1], i.coords()[0]])).collect();
        let mut wtm = CMat::zeros(samples.len(), idx.len());
        for (s, t) in samples.iter().enumerate() {
            for (k, sw) in swapped.iter().enumerate() {
                wtm[(s, k)] = wt.weight(sw, t, lam)?;
            }
        }
        let (x, residual) = lstsq(&w, &wtm);
        if residual > self.residual_tol {
            return Err(Error::ResidualTooLarge { residual });
        }
        // w̃_kl = Σ_ij X[ij,kl] w_ij; as an operator on e_i⊗e_j the matrix is Xᵀ
        Ok(TensorBlock { rows: idx.clone(), cols: idx, data: x.transpose(), level, residual, condition })
    }
}

/// Delete rows and columns with a coordinate above Λ_1 or Λ_2. Valid because R
/// preserves S_{Λ1}⊗V + V⊗S_{Λ2}.
pub fn rmatrix_on_quotient(block: &TensorBlock, m1: &ModuleSpec, m2: &ModuleSpec) -> Result<TensorBlock> {
    let k1 = as_nonneg_integer(m1.lambda, INT_TOL).ok_or_else(|| Error::NotIntegral(m1.lambda.to_string()))?;
    let k2 = as_nonneg_integer(m2.lambda, INT_TOL).ok_or_else(|| Error::NotIntegral(m2.lambda.to_string()))?;
    let keep = |ix: &WeightIndex| ix.coords()[0] <= k1 && ix.coords()[1] <= k2;
    let rsel: Vec<usize> = (0..block.rows.len()).filter(|&r| keep(&block.rows[r])).collect();
    let csel: Vec<usize> = (0..block.cols.len()).filter(|&c| keep(&block.cols[c])).collect();
    let data = CMat::from_fn(rsel.len(), csel.len(), |r, c| block.data[(rsel[r], csel[c])]);
    Ok(TensorBlock {
        rows: rsel.iter().map(|&r| block.rows[r].clone()).collect(),
        cols: csel.iter().map(|&c| block.cols[c].clone()).collect(),
        data,
        level: block.level,
        residual: block.residual,
        condition: block.condition,
    })
}

fn split_admissible(ixs: &[WeightIndex], lambdas: &[C64]) -> Vec<bool> {
    ixs.iter().map(|i| admissibility(i, lambdas, INT_TOL).is_empty()).collect()
}

/// max |R[admissible row, non-admissible column]| / ‖R‖: the coupling that must
/// vanish for S to be an invariant subspace.
pub fn quotient_leak(block: &TensorBlock, l1: C64, l2: C64) -> f64 {
    coupling(block, l1, l2, true)
}

/// max |R[non-admissible row, admissible column]| / ‖R‖; generally nonzero.
pub fn reverse_coupling(block: &TensorBlock, l1: C64, l2: C64) -> f64 {
    coupling(block, l1, l2, false)
}

fn coupling(block: &TensorBlock, l1: C64, l2: C64, into_admissible: bool) -> f64 {
    let ra = split_admissible(&block.rows, &[l1, l2]);
    let ca = split_admissible(&block.cols, &[l1, l2]);
    let norm = block.data.norm();
    let mut worst = 0.0f64;
    for r in 0..ra.len() {
        for c in 0..ca.len() {
            if ra[r] == into_admissible && ca[c] != into_admissible {
                worst = worst.max(block.data[(r, c)].norm());
            }
        }
    }
    worst / norm
}

/// Entries connecting different weight levels. Blocks are built per level, so
/// this is zero by construction.
pub fn zero_weight_residual(block: &TensorBlock) -> f64 {
    let mut s = 0.0;
    for (r, ri) in block.rows.iter().enumerate() {
        for (c, ci) in block.cols.iter().enumerate() {
            if ri.level() != ci.level() {
                s += block.data[(r, c)].norm();
            }
        }
    }
    s
}

/// Position lookup for a basis of n-fold weight indices.
pub fn basis_lookup(basis: &[WeightIndex]) -> HashMap<WeightIndex, usize> {
    basis.iter().cloned().enumerate().map(|(i, b)| (b, i)).collect()
}

/// R^{(k,m)}(λ(e), z) on the span of `basis` (0-based factor positions). The
/// dynamical argument is evaluated per basis vector; it may only depend on the
/// spectator coordinates, which R^{(k,m)} leaves unchanged. Images outside the
/// basis are dropped.
pub fn embed_pair<F>(
    engine: &RMatrixEngine,
    basis: &[WeightIndex],
    lambdas: &[C64],
    k: usize,
    m: usize,
    z: C64,
    lam_at: F,
) -> Result<CMat>
where
    F: Fn(&WeightIndex) -> C64,
{
    let pos = basis_lookup(basis);
    let mut op = CMat::zeros(basis.len(), basis.len());
    for (c, idx) in basis.iter().enumerate() {
        let (ik, im) = (idx.coords()[k], idx.coords()[m]);
        let lv = ik + im;
        let r = engine.block(lam_at(idx), z, lambdas[k], lambdas[m], lv)?;
        let col = r.cols.iter().position(|p| p.coords() == [ik, im]).expect("pair index present");
        for (row, p) in r.rows.iter().enumerate() {
            let mut new = idx.coords().to_vec();
            new[k] = p.coords()[0];
            new[m] = p.coords()[1];
            if let Some(&rr) = pos.get(&WeightIndex::new(new)) {
                op[(rr, c)] += r.data[(row, col)];
            }
        }
    }
    Ok(op)
}

/// h-eigenvalue Λ_s − 2l_s of factor s on e_l̄.
pub fn h_value(idx: &WeightIndex, lambdas: &[C64], s: usize) -> C64 {
    lambdas[s] - 2.0 * idx.coords()[s] as f64
}

/// ‖R(λ;z,Λ1,Λ2)·R^{(21)}(λ;−z,Λ2,Λ1) − Id‖ / ‖Id‖ on one level.
pub fn unitarity_residual(engine: &RMatrixEngine, lam: C64, z: C64, l1: C64, l2: C64, level: usize) -> Result<f64> {
    let r12 = engine.block(lam, z, l1, l2, level)?;
    let r = engine.block(lam, -z, l2, l1, level)?;
    let idx = &r12.rows;
    let flip: Vec<usize> = idx
        .iter()
        .map(|i| idx.iter().position(|j| j.coords() == [i.coords()[1], i.coords()[0]]).unwrap())
        .collect();
    let n = idx.len();
    let r21 = CMat::from_fn(n, n, |a, b| r.data[(flip[a], flip[b])]);
    let prod = &r12.data * r21;
    let id = CMat::identity(n, n);
    Ok((prod - &id).norm() / id.norm())
}

/// Relative DYBE defect on the level-`level` block of the triple tensor product:
/// R12(λ−2ηh3; z) R13(λ; z+w) R23(λ−2ηh1; w) = R23(λ; w) R13(λ−2ηh2; z+w) R12(λ; z).
/// With `quotient`, every factor is restricted to admissible indices first.
pub fn dybe_residual(
    engine: &RMatrixEngine,
    lam: C64,
    z: C64,
    w: C64,
    lambdas: [C64; 3],
    level: usize,
    quotient: bool,
) -> Result<f64> {
    let mut basis = enumerate_indices(3, level);
    if quotient {
        for l in lambdas {
            as_nonneg_integer(l, INT_TOL).ok_or_else(|| Error::NotIntegral(l.to_string()))?;
        }
        basis.retain(|b| admissibility(b, &lambdas, INT_TOL).is_empty());
    }
    if basis.is_empty() {
        return Ok(0.0);
    }
    let eta = engine.eta();
    let shifted = |s: usize| move |i: &WeightIndex| lam - 2.0 * eta * h_value(i, &lambdas, s);
    let plain = |_: &WeightIndex| lam;
    let lhs = embed_pair(engine, &basis, &lambdas, 0, 1, z, shifted(2))?
        * embed_pair(engine, &basis, &lambdas, 0, 2, z + w, plain)?
        * embed_pair(engine, &basis, &lambdas, 1, 2, w, shifted(0))?;
    let rhs = embed_pair(engine, &basis, &lambdas, 1, 2, w, plain)?
        * embed_pair(engine, &basis, &lambdas, 0, 2, z + w, shifted(1))?
        * embed_pair(engine, &basis, &lambdas, 0, 1, z, plain)?;
    Ok((&lhs - &rhs).norm() / lhs.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn engine() -> RMatrixEngine {
        RMatrixEngine::new(c(0.0, 0.7), c(0.0, -0.04), SeriesConfig::default())
    }

    #[test]
    fn level_zero_is_one() {
        let b = engine().block(c(0.3, 0.1), c(0.2, 0.0), c(1.0, 0.0), c(1.0, 0.0), 0).unwrap();
        assert_eq!(b.data.nrows(), 1);
        assert_eq!(b.data[(0, 0)], c(1.0, 0.0));
    }

    #[test]
    fn unitarity_level_one() {
        let e = engine();
        let r = unitarity_residual(&e, c(0.37, 0.1), c(0.23, 0.05), c(1.0, 0.0), c(1.0, 0.0), 1).unwrap();
        assert!(r < 1e-8, "{r}");
        assert_eq!(unitarity_residual(&e, c(0.37, 0.1), c(0.23, 0.05), c(1.0, 0.0), c(1.0, 0.0), 0).unwrap(), 0.0);
    }

    #[test]
    fn seed_independence() {
        let a = engine().with_seed(1).block(c(0.37, 0.1), c(0.23, 0.05), c(1.3, 0.1), c(0.6, -0.2), 1).unwrap();
        let b = engine().with_seed(99).block(c(0.37, 0.1), c(0.23, 0.05), c(1.3, 0.1), c(0.6, -0.2), 1).unwrap();
        assert!((&a.data - &b.data).norm() < 1e-8 * a.data.norm());
    }

    #[test]
    fn cache_hits() {
        let e = engine();
        e.block(c(0.37, 0.1), c(0.23, 0.05), c(1.0, 0.0), c(1.0, 0.0), 1).unwrap();
        e.block(c(0.37, 0.1), c(0.23, 0.05), c(1.0, 0.0), c(1.0, 0.0), 1).unwrap();
        assert_eq!(e.cache_len(), 1);
    }

    #[test]
    fn quotient_bookkeeping() {
        let e = engine();
        let one = c(1.0, 0.0);
        let b = e.block(c(0.37, 0.1), c(0.23, 0.05), one, one, 2).unwrap();
        assert_eq!(b.data.nrows(), 3);
        let m = ModuleSpec::quotient(one).unwrap();
        let q = rmatrix_on_quotient(&b, &m, &m).unwrap();
        assert_eq!(q.rows, vec![WeightIndex::new(vec![1, 1])]);
        assert!(quotient_leak(&b, one, one) < 1e-8);
        assert!(matches!(ModuleSpec::quotient(c(0.5, 0.0)), Err(Error::NotIntegral(_))));
        let full = ModuleSpec::full(c(0.5, 0.0), 2);
        assert!(matches!(rmatrix_on_quotient(&b, &full, &m), Err(Error::NotIntegral(_))));
    }

    #[test]
    fn zero_weight_structural() {
        let e = engine();
        for lv in 0..3 {
            let b = e.block(c(0.37, 0.1), c(0.23, 0.05), c(1.2, 0.0), c(0.4, 0.1), lv).unwrap();
            assert_eq!(zero_weight_residual(&b), 0.0);
        }
    }

    #[test]
    fn dybe_small() {
        let e = engine();
        let one = c(1.0, 0.0);
        let r0 = dybe_residual(&e, c(0.37, 0.1), c(0.23, 0.05), c(-0.11, 0.02), [one; 3], 0, false).unwrap();
        assert_eq!(r0, 0.0);
        let r1 = dybe_residual(&e, c(0.37, 0.1), c(0.23, 0.05), c(-0.11, 0.02), [one; 3], 1, false).unwrap();
        assert!(r1 < 1e-7, "{r1}");
    }
}
