//! Hypergeometric solutions of the qKZB equations: the integrals I_{l̄,m̄},
//! the solution tensors u, the three shift relations, the Ψ/Φ solutions,
//! the monodromy relation and the residue (functoriality) constants.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::contour::{plan_contour, IntegrationPlan, ResolvedContour};
use crate::elliptic::{phase1, phase1_deriv, theta, theta_deriv};
use crate::error::{Error, Result};
use crate::linalg::{diag, CMat};
use crate::operators::{b_op, d_op, d_total, f_scalar, zero_weight_basis, QkzbOperators, ShiftConvention};
use crate::params::{ModularParams, SeriesConfig, SystemParams};
use crate::rmatrix::RMatrixEngine;
use crate::weights::{admissibility, as_nonneg_integer, enumerate_indices, WeightIndex, WeightSystem, INT_TOL};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// The 4ηN-periodic function ξ multiplying the integrand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum XiSpec {
    Constant,
    /// ξ(x) = exp(2πikx / 4ηN).
    Exponential { k: i64, n: usize },
}

impl XiSpec {
    pub fn eval(&self, x: C64, eta: C64) -> C64 {
        match *self {
            XiSpec::Constant => C64::new(1.0, 0.0),
            XiSpec::Exponential { k, n } => (2.0 * PI * I * k as f64 * x / (4.0 * eta * n as f64)).exp(),
        }
    }

    /// The period N in units of 4η.
    pub fn period(&self) -> usize {
        match *self {
            XiSpec::Constant => 1,
            XiSpec::Exponential { n, .. } => n,
        }
    }

    fn probe_points() -> impl Iterator<Item = C64> {
        (0..10).map(|i| C64::new(0.37 * i as f64 - 1.3, 0.11 * i as f64 - 0.4))
    }

    /// Checks 4ηN-periodicity at ten fixed points.
    pub fn validate(&self, eta: C64) -> Result<()> {
        if let XiSpec::Exponential { n, .. } = self {
            if *n == 0 {
                return Err(Error::InvalidParameters("xi period N must be positive".into()));
            }
        }
        let step = 4.0 * eta * self.period() as f64;
        for x in Self::probe_points() {
            let (a, b) = (self.eval(x, eta), self.eval(x + step, eta));
            if (a - b).norm() > 1e-12 * a.norm().max(1.0) {
                return Err(Error::InvalidParameters(format!("xi is not 4*eta*N-periodic at {x}")));
            }
        }
        Ok(())
    }

    /// Whether ξ(x + 2a_l) = ξ(x) for all l, checked at the probe points.
    pub fn is_2a_periodic(&self, a: &[C64], eta: C64) -> bool {
        a.iter().all(|&al| {
            Self::probe_points().all(|x| {
                let (u, v) = (self.eval(x, eta), self.eval(x + 2.0 * al, eta));
                (u - v).norm() <= 1e-10 * u.norm().max(1.0)
            })
        })
    }
}

/// ξ argument without the integration variables: pλ + τμ − Σ 2a_l z_l.
fn xi_base(lam: C64, mu: C64, sp: &SystemParams, mp: &ModularParams) -> C64 {
    let a = sp.a(mp.eta());
    mp.p() * lam + mp.tau() * mu - 2.0 * a.iter().zip(sp.z()).map(|(a, z)| a * z).sum::<C64>()
}

/// X_{l̄,m̄}(t) = ξ(pλ + τμ − Σ2a_l z_l + 4ηΣt_j)·Ω(t)·w_l̄(t; λ, τ)·w_m̄(t; μ, p).
#[allow(clippy::too_many_arguments)]
pub fn integrand(
    t: &[C64],
    lbar: &WeightIndex,
    mbar: &WeightIndex,
    lam: C64,
    mu: C64,
    sp: &SystemParams,
    mp: &ModularParams,
    xi: &XiSpec,
    cfg: &SeriesConfig,
) -> Result<C64> {
    let eta = mp.eta();
    let x = xi_base(lam, mu, sp, mp) + 4.0 * eta * t.iter().sum::<C64>();
    let om = crate::elliptic::phase_multi(t, sp, mp, cfg)?;
    let wl = WeightSystem::tau_side(sp, mp, *cfg).weight(lbar, t, lam)?;
    let wm = WeightSystem::p_side(sp, mp, *cfg).weight(mbar, t, mu)?;
    Ok(xi.eval(x, eta) * om * wl * wm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: C64,
    /// |I_M − I_{M/2}|.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorKind {
    Full,
    Admissible,
    /// Indices with B_Λ(l̄) = B (0-based positions).
    FixedB(Vec<usize>),
}

/// Coefficients of e_l̄ ⊗ e_m̄, with per-entry quadrature error estimates.
#[derive(Clone, Debug)]
pub struct SolutionTensor {
    pub kind: TensorKind,
    pub rows: Vec<WeightIndex>,
    pub cols: Vec<WeightIndex>,
    pub data: CMat,
    pub error: DMatrix<f64>,
}

impl SolutionTensor {
    pub fn error_norm(&self) -> f64 {
        self.error.norm()
    }

    pub fn get(&self, row: &WeightIndex, col: &WeightIndex) -> Option<C64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        Some(self.data[(r, c)])
    }
}

/// Relative residual of an identity together with the accumulated relative
/// quadrature error estimate of its inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub residual: f64,
    pub estimate: f64,
}

fn relative(lhs: &CMat, rhs: &CMat, err: f64) -> Residual {
    let den = lhs.norm().max(1e-300);
    Residual { residual: (lhs - rhs).norm() / den, estimate: err / den }
}

/// Everything fixed across one campaign: moduli, ξ, contour plan and the two
/// R-matrix engines (modulus τ for λ-operators, modulus p for μ-operators).
pub struct Hypergeometric {
    pub mp: ModularParams,
    pub xi: XiSpec,
    pub plan: IntegrationPlan,
    pub cfg: SeriesConfig,
    pub convention: ShiftConvention,
    r_tau: RMatrixEngine,
    r_p: RMatrixEngine,
}

impl Hypergeometric {
    pub fn new(mp: ModularParams, xi: XiSpec, plan: IntegrationPlan, cfg: SeriesConfig) -> Result<Self> {
        plan.validate()?;
        xi.validate(mp.eta())?;
        if plan.n_period % xi.period() != 0 {
            return Err(Error::InvalidParameters(format!(
                "plan.N = {} is not a multiple of the xi period {}",
                plan.n_period,
                xi.period()
            )));
        }
        Ok(Hypergeometric {
            r_tau: RMatrixEngine::new(mp.tau(), mp.eta(), cfg),
            r_p: RMatrixEngine::new(mp.p(), mp.eta(), cfg),
            mp,
            xi,
            plan,
            cfg,
            convention: ShiftConvention::Paper,
        })
    }

    pub fn with_convention(mut self, c: ShiftConvention) -> Self {
        self.convention = c;
        self
    }

    pub fn with_plan(&self, plan: IntegrationPlan) -> Result<Self> {
        Hypergeometric::new(self.mp, self.xi, plan, self.cfg).map(|h| h.with_convention(self.convention))
    }

    pub fn contour(&self, sp: &SystemParams) -> Result<ResolvedContour> {
        plan_contour(&self.plan, sp.z(), &sp.a(self.mp.eta()), &self.mp, sp.l())
    }

    /// Raw integrals I_{l̄,m̄} for every row/column pair on one shared contour,
    /// with |I_M − I_{M/2}| per entry.
    pub fn integrals(
        &self,
        rows: &[WeightIndex],
        cols: &[WeightIndex],
        lam: C64,
        mu: C64,
        sp: &SystemParams,
    ) -> Result<(CMat, DMatrix<f64>)> {
        let (nr, nc) = (rows.len(), cols.len());
        let l = sp.l();
        let n = sp.n();
        for idx in rows.iter().chain(cols) {
            if idx.level() != l || idx.n() != n {
                return Err(Error::InvalidParameters(format!("index {idx} does not match n = {n}, l = {l}")));
            }
        }
        let mp = &self.mp;
        let eta = mp.eta();
        let x0 = self.xi.eval(xi_base(lam, mu, sp, mp), eta);
        if l == 0 {
            return Ok((CMat::from_element(nr, nc, x0), DMatrix::zeros(nr, nc)));
        }
        let contour = self.contour(sp)?;
        let c1 = &contour.per_variable[0];
        let k = c1.nodes.len();
        let z = sp.z();
        let a = sp.a(eta);
        let cfg = &self.cfg;
        let ws_t = WeightSystem::tau_side(sp, mp, *cfg);
        let ws_p = WeightSystem::p_side(sp, mp, *cfg);

        // one-variable factors at every contour node
        let mut single = Vec::with_capacity(k);
        for &t in &c1.nodes {
            let mut v = self.xi.eval(4.0 * eta * t, eta) / self.xi.eval(C64::new(0.0, 0.0), eta);
            for (m, (&zm, &am)) in z.iter().zip(&a).enumerate() {
                v *= phase1(t - zm, mp, am, cfg).map_err(|e| tag(e, format!("t - z_{}", m + 1)))?;
            }
            single.push(v);
        }
        let group_table = |ws: &WeightSystem, idxs: &[WeightIndex], at: C64| -> Result<Vec<Vec<C64>>> {
            idxs.iter()
                .map(|idx| {
                    let mut g = Vec::with_capacity(k * n);
                    for &t in &c1.nodes {
                        g.extend(ws.group_factors(idx, t, at)?);
                    }
                    Ok(g)
                })
                .collect()
        };
        let g_rows = group_table(&ws_t, rows, lam)?;
        let g_cols = group_table(&ws_p, cols, mu)?;

        let inner = k.pow((l - 1) as u32);
        let chunk = |first: usize| -> Result<(CMat, CMat)> {
            let mut acc = CMat::zeros(nr, nc);
            let mut acc_h = CMat::zeros(nr, nc);
            let mut digits = vec![0usize; l];
            let mut t = vec![C64::new(0.0, 0.0); l];
            let mut gbuf = vec![C64::new(0.0, 0.0); l * n];
            let mut wl = vec![C64::new(0.0, 0.0); nr];
            let mut wm = vec![C64::new(0.0, 0.0); nc];
            for rest in 0..inner {
                digits[0] = first;
                let mut r = rest;
                for d in digits[1..].iter_mut().rev() {
                    *d = r % k;
                    r /= k;
                }
                let mut w = C64::new(1.0, 0.0);
                let mut wh = C64::new(1.0, 0.0);
                let mut f = C64::new(1.0, 0.0);
                for (v, &d) in digits.iter().enumerate() {
                    t[v] = c1.nodes[d];
                    w *= c1.weights[d];
                    wh *= c1.half[d];
                    f *= single[d];
                }
                for i in 0..l {
                    for j in i + 1..l {
                        f *= phase1(t[i] - t[j], mp, -2.0 * eta, cfg)
                            .map_err(|e| tag(e, format!("t_{} - t_{}", i + 1, j + 1)))?;
                    }
                }
                let pt = ws_t.pair_tables(&t)?;
                for (ri, idx) in rows.iter().enumerate() {
                    for (v, &d) in digits.iter().enumerate() {
                        gbuf[v * n..(v + 1) * n].copy_from_slice(&g_rows[ri][d * n..(d + 1) * n]);
                    }
                    wl[ri] = ws_t.assemble(idx, &pt, &gbuf);
                }
                let pp = ws_p.pair_tables(&t)?;
                for (ci, idx) in cols.iter().enumerate() {
                    for (v, &d) in digits.iter().enumerate() {
                        gbuf[v * n..(v + 1) * n].copy_from_slice(&g_cols[ci][d * n..(d + 1) * n]);
                    }
                    wm[ci] = ws_p.assemble(idx, &pp, &gbuf);
                }
                let has_half = wh != C64::new(0.0, 0.0);
                for ri in 0..nr {
                    let fr = f * wl[ri];
                    for ci in 0..nc {
                        let x = fr * wm[ci];
                        acc[(ri, ci)] += w * x;
                        if has_half {
                            acc_h[(ri, ci)] += wh * x;
                        }
                    }
                }
            }
            Ok((acc, acc_h))
        };
        let parts: Vec<Result<(CMat, CMat)>> = (0..k).into_par_iter().map(chunk).collect();
        let mut total = CMat::zeros(nr, nc);
        let mut total_h = CMat::zeros(nr, nc);
        for p in parts {
            let (a, b) = p?;
            total += a;
            total_h += b;
        }
        total *= x0;
        total_h *= x0;
        let err = DMatrix::from_fn(nr, nc, |r, c| (total[(r, c)] - total_h[(r, c)]).norm());
        if let Some(tol) = self.plan.tol {
            let scale = total.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let est = err.iter().cloned().fold(0.0, f64::max) / scale.max(1e-300);
            if est > tol {
                return Err(Error::NotConverged { estimate: est, tol });
            }
        }
        Ok((total, err))
    }

    /// A single integral I_{l̄,m̄}; requires B_Λ(l̄) ∩ B_Λ(m̄) = ∅.
    pub fn integral(&self, lbar: &WeightIndex, mbar: &WeightIndex, lam: C64, mu: C64, sp: &SystemParams) -> Result<Integral> {
        check_entry(lbar, mbar, sp)?;
        let (v, e) = self.integrals(std::slice::from_ref(lbar), std::slice::from_ref(mbar), lam, mu, sp)?;
        Ok(Integral { value: v[(0, 0)], error: e[(0, 0)] })
    }

    /// e^{−πiμλ/2η}·I on explicit rows and columns, without hypothesis checks.
    pub fn u_on(
        &self,
        kind: TensorKind,
        rows: Vec<WeightIndex>,
        cols: Vec<WeightIndex>,
        lam: C64,
        mu: C64,
        sp: &SystemParams,
    ) -> Result<SolutionTensor> {
        let (data, error) = self.integrals(&rows, &cols, lam, mu, sp)?;
        let pref = prefactor(lam, mu, self.mp.eta());
        Ok(SolutionTensor { kind, rows, cols, data: data * pref, error: error * pref.norm() })
    }

    /// u over every index of level l; fails on divergent entries.
    pub fn u_full(&self, lam: C64, mu: C64, sp: &SystemParams) -> Result<SolutionTensor> {
        let idx = enumerate_indices(sp.n(), sp.l());
        for r in &idx {
            for c in &idx {
                check_entry(r, c, sp)?;
            }
        }
        self.u_on(TensorKind::Full, idx.clone(), idx, lam, mu, sp)
    }

    /// u over the Λ-admissible indices.
    pub fn u_adm(&self, lam: C64, mu: C64, sp: &SystemParams) -> Result<SolutionTensor> {
        let idx = admissible_indices(sp);
        self.u_on(TensorKind::Admissible, idx.clone(), idx, lam, mu, sp)
    }

    /// The block of indices with B_Λ(l̄) = B; B = ∅ is u_adm.
    pub fn u_b(&self, b: &[usize], lam: C64, mu: C64, sp: &SystemParams) -> Result<SolutionTensor> {
        let b = normalize_set(b, sp.n())?;
        if b.is_empty() {
            return self.u_adm(lam, mu, sp);
        }
        let idx = fixed_b_indices(&b, sp);
        self.u_on(TensorKind::FixedB(b), idx.clone(), idx, lam, mu, sp)
    }

    fn ops_tau(&self, sp: &SystemParams, basis: Vec<WeightIndex>) -> QkzbOperators<'_> {
        QkzbOperators::new(&self.r_tau, sp.lambda().to_vec(), basis).with_convention(self.convention)
    }

    fn ops_p(&self, sp: &SystemParams, basis: Vec<WeightIndex>) -> QkzbOperators<'_> {
        QkzbOperators::new(&self.r_p, sp.lambda().to_vec(), basis).with_convention(self.convention)
    }

    fn check_j(j: usize, sp: &SystemParams) -> Result<()> {
        if j >= sp.n() {
            return Err(Error::IndexOutOfRange { index: j, n: sp.n() });
        }
        Ok(())
    }

    /// u_adm(z_j + p) against (K_j(λ, τ, p) ⊗ D_j^{-1}(μ)) u_adm(z).
    pub fn qkzb_residual_step_p(&self, j: usize, lam: C64, mu: C64, sp: &SystemParams) -> Result<Residual> {
        Self::check_j(j, sp)?;
        let basis = zero_weight_basis(sp, true)?;
        let eta = self.mp.eta();
        let k = self.ops_tau(sp, basis.clone()).k_op(j, lam, sp.z(), self.mp.p())?;
        let lhs = self.u_adm(lam, mu, &sp.with_z(j, sp.z()[j] + self.mp.p()))?;
        let dinv: Vec<C64> = d_op(j, mu, eta, sp.lambda(), &basis)?.iter().map(|d| d.inv()).collect();
        let dmax = dinv.iter().map(|d| d.norm()).fold(0.0, f64::max);
        let mut err = lhs.error_norm();
        let mut rhs = CMat::zeros(basis.len(), basis.len());
        for term in &k.terms {
            let u = self.u_adm(lam - term.shift, mu, sp)?;
            err += term.matrix.norm() * u.error_norm() * dmax;
            rhs += &term.matrix * &u.data;
        }
        let rhs = rhs * diag(&dinv);
        Ok(relative(&lhs.data, &rhs, err))
    }

    /// u_adm(z_j + τ) against (D_j^{-1}(λ) ⊗ K_j(μ, p, τ)) u_adm(z).
    pub fn qkzb_residual_step_tau(&self, j: usize, lam: C64, mu: C64, sp: &SystemParams) -> Result<Residual> {
        Self::check_j(j, sp)?;
        let basis = zero_weight_basis(sp, true)?;
        let eta = self.mp.eta();
        let k = self.ops_p(sp, basis.clone()).k_op(j, mu, sp.z(), self.mp.tau())?;
        let lhs = self.u_adm(lam, mu, &sp.with_z(j, sp.z()[j] + self.mp.tau()))?;
        let dinv: Vec<C64> = d_op(j, lam, eta, sp.lambda(), &basis)?.iter().map(|d| d.inv()).collect();
        let dmax = dinv.iter().map(|d| d.norm()).fold(0.0, f64::max);
        let mut err = lhs.error_norm();
        let mut acc = CMat::zeros(basis.len(), basis.len());
        for term in &k.terms {
            let u = self.u_adm(lam, mu - term.shift, sp)?;
            err += term.matrix.norm() * u.error_norm() * dmax;
            acc += &term.matrix * u.data.transpose();
        }
        let rhs = diag(&dinv) * acc.transpose();
        Ok(relative(&lhs.data, &rhs, err))
    }

    /// u_adm(z_j + 1) against u_adm(z); needs ξ to be 2a_l-periodic.
    pub fn qkzb_residual_step_1(&self, j: usize, lam: C64, mu: C64, sp: &SystemParams) -> Result<Residual> {
        Self::check_j(j, sp)?;
        if !self.xi.is_2a_periodic(&sp.a(self.mp.eta()), self.mp.eta()) {
            return Err(Error::InvalidParameters("xi must be 2a_l-periodic for the z_j + 1 relation".into()));
        }
        let lhs = self.u_adm(lam, mu, &sp.with_z(j, sp.z()[j] + 1.0))?;
        let rhs = self.u_adm(lam, mu, sp)?;
        Ok(relative(&lhs.data, &rhs.data, lhs.error_norm() + rhs.error_norm()))
    }

    /// Ψ_f = (1 ⊗ f)(1 ⊗ D(μ, p, η; z, a)) u_adm, indexed by the admissible basis.
    pub fn psi_solution(&self, f: &[C64], lam: C64, mu: C64, sp: &SystemParams) -> Result<(Vec<WeightIndex>, Vec<C64>)> {
        let u = self.u_adm(lam, mu, sp)?;
        check_len(f, u.cols.len())?;
        let d = d_total(mu, self.mp.p(), self.mp.eta(), sp, &u.cols)?;
        let out = (0..u.rows.len())
            .map(|r| (0..u.cols.len()).map(|c| u.data[(r, c)] * d.diag[c] * f[c]).sum())
            .collect();
        Ok((u.rows, out))
    }

    /// Φ_f = (f ⊗ 1)(D(λ, τ, η; z, a) ⊗ 1) u_adm.
    pub fn phi_solution(&self, f: &[C64], lam: C64, mu: C64, sp: &SystemParams) -> Result<(Vec<WeightIndex>, Vec<C64>)> {
        let u = self.u_adm(lam, mu, sp)?;
        check_len(f, u.rows.len())?;
        let d = d_total(lam, self.mp.tau(), self.mp.eta(), sp, &u.rows)?;
        let out = (0..u.cols.len())
            .map(|c| (0..u.rows.len()).map(|r| f[r] * d.diag[r] * u.data[(r, c)]).sum())
            .collect();
        Ok((u.cols, out))
    }

    /// Ψ_f(z_j + p)(λ) against (K_j(λ, τ, p) Ψ_f(z))(λ).
    pub fn psi_qkzb_residual(&self, j: usize, f: &[C64], lam: C64, mu: C64, sp: &SystemParams) -> Result<Residual> {
        Self::check_j(j, sp)?;
        let basis = zero_weight_basis(sp, true)?;
        let k = self.ops_tau(sp, basis).k_op(j, lam, sp.z(), self.mp.p())?;
        let col = |v: Vec<C64>| CMat::from_column_slice(v.len(), 1, &v);
        let lhs = col(self.psi_solution(f, lam, mu, &sp.with_z(j, sp.z()[j] + self.mp.p()))?.1);
        let rhs = k.apply(|at| Ok(col(self.psi_solution(f, at, mu, sp)?.1)))?;
        Ok(relative(&lhs, &rhs, 0.0))
    }

    /// (B_j ⊗ 1)Ψ(z_j + τ) against (1 ⊗ F_j D(μ; z_j + τ) K_j(μ, p, τ) D^{-1}(μ; z))Ψ(z),
    /// where Ψ = (1 ⊗ D(μ, p, η; z, a)) u_adm.
    pub fn monodromy_tau_shift_residual(&self, j: usize, lam: C64, mu: C64, sp: &SystemParams) -> Result<Residual> {
        Self::check_j(j, sp)?;
        let basis = zero_weight_basis(sp, true)?;
        let (p, eta) = (self.mp.p(), self.mp.eta());
        let shifted = sp.with_z(j, sp.z()[j] + self.mp.tau());
        let d_shift = d_total(mu, p, eta, &shifted, &basis)?.diag;
        let bj = b_op(j, lam, p, eta, sp, &basis)?;
        let fj = f_scalar(j, p, eta, sp)?;

        let u1 = self.u_adm(lam, mu, &shifted)?;
        let lhs = diag(&bj) * &u1.data * diag(&d_shift);
        let mut err = u1.error_norm();

        let k = self.ops_p(sp, basis.clone()).k_op(j, mu, sp.z(), self.mp.tau())?;
        let mut acc = CMat::zeros(basis.len(), basis.len());
        for term in &k.terms {
            let at = mu - term.shift;
            let u = self.u_adm(lam, at, sp)?;
            let d = d_total(at, p, eta, sp, &basis)?.diag;
            let psi = &u.data * diag(&d);
            let dinv: Vec<C64> = d.iter().map(|x| x.inv()).collect();
            acc += &term.matrix * diag(&dinv) * psi.transpose();
            err += term.matrix.norm() * u.error_norm();
        }
        let rhs = (diag(&d_shift) * acc * fj).transpose();
        Ok(relative(&lhs, &rhs, err))
    }

    /// Iterated residue of u_B at a = a⁰ (a_s = ηΛ_s), over circles of radius
    /// `rho` with `k_nodes` trapezoid nodes, innermost b_1. The K/2 rule must
    /// agree to `tol` (relative).
    pub fn numeric_residue_u_b(
        &self,
        b: &[usize],
        lam: C64,
        mu: C64,
        sp0: &SystemParams,
        rho: f64,
        k_nodes: usize,
        tol: f64,
    ) -> Result<NumericResidue> {
        let b = normalize_set(b, sp0.n())?;
        if b.is_empty() {
            return Err(Error::InvalidParameters("the residue needs a nonempty set B".into()));
        }
        if k_nodes < 4 || k_nodes % 2 != 0 {
            return Err(Error::InvalidParameters("residue circle needs an even number (>= 4) of nodes".into()));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidParameters("residue radius must be positive".into()));
        }
        let lambdas = sp0.lambda();
        for &s in &b {
            if as_nonneg_integer(lambdas[s], INT_TOL).is_none() {
                return Err(Error::NotIntegral(format!("Lambda_{} = {}", s + 1, lambdas[s])));
            }
        }
        let eta = self.mp.eta();
        let idx = fixed_b_indices(&b, sp0);
        if idx.is_empty() {
            return Err(Error::InvalidParameters(format!("no index of level {} has B = {:?}", sp0.l(), one_based(&b))));
        }
        let depth = b.len();
        let total = k_nodes.pow(depth as u32);
        let dim = idx.len();
        let mut acc = CMat::zeros(dim, dim);
        let mut acc_h = CMat::zeros(dim, dim);
        let mut err = 0.0;
        for combo in 0..total {
            let mut sp = sp0.clone();
            let mut w = C64::new(1.0, 0.0);
            let mut all_even = true;
            let mut c = combo;
            // b_1 varies fastest
            for &s in &b {
                let d = c % k_nodes;
                c /= k_nodes;
                all_even &= d % 2 == 0;
                let e = C64::from_polar(1.0, 2.0 * PI * d as f64 / k_nodes as f64);
                sp = sp.with_lambda(s, (eta * lambdas[s] + rho * e) / eta);
                w *= rho * e / k_nodes as f64;
            }
            let u = self.u_on(TensorKind::FixedB(b.clone()), idx.clone(), idx.clone(), lam, mu, &sp)?;
            acc += &u.data * w;
            err += u.error_norm() * w.norm();
            if all_even {
                acc_h += &u.data * (w * 2f64.powi(depth as i32));
            }
        }
        let half_diff = (&acc - &acc_h).norm() / acc.norm().max(1e-300);
        if half_diff > tol {
            return Err(Error::NotConverged { estimate: half_diff, tol });
        }
        Ok(NumericResidue {
            tensor: SolutionTensor {
                kind: TensorKind::FixedB(b),
                rows: idx.clone(),
                cols: idx,
                data: acc,
                error: DMatrix::from_element(dim, dim, err / (dim as f64)),
            },
            half_diff,
        })
    }

    /// The right-hand side of the residue identity: the theta prefactor times
    /// c_B times u_adm at the reflected weights, on the rows of the u_B block.
    /// `None` when c_B has no known normalization.
    pub fn predicted_residue(&self, b: &[usize], lam: C64, mu: C64, sp0: &SystemParams) -> Result<Option<SolutionTensor>> {
        let b = normalize_set(b, sp0.n())?;
        let consts = residue_constants(&b, sp0, &self.mp, &self.cfg)?;
        let Some(c_b) = consts.c_b else { return Ok(None) };
        let refl = reflected(&b, sp0)?;
        let pref = theta_prefactor(lam, mu, sp0.l(), refl.l(), &self.mp, &self.cfg)?;
        let lower = self.u_adm(lam, mu, &refl)?;
        let idx = fixed_b_indices(&b, sp0);
        let dim = idx.len();
        let lowered: Vec<WeightIndex> = idx.iter().map(|i| lower_index(i, &b, sp0.lambda())).collect();
        let mut data = CMat::zeros(dim, dim);
        let mut error = DMatrix::zeros(dim, dim);
        for (r, lr) in lowered.iter().enumerate() {
            for (c, lc) in lowered.iter().enumerate() {
                let (ri, ci) = match (lower.rows.iter().position(|x| x == lr), lower.cols.iter().position(|x| x == lc)) {
                    (Some(ri), Some(ci)) => (ri, ci),
                    _ => return Err(Error::InvalidParameters(format!("reflected index {lr} is not admissible"))),
                };
                data[(r, c)] = pref * c_b * lower.data[(ri, ci)];
                error[(r, c)] = (pref * c_b).norm() * lower.error[(ri, ci)];
            }
        }
        Ok(Some(SolutionTensor { kind: TensorKind::FixedB(b), rows: idx.clone(), cols: idx, data, error }))
    }
}

#[derive(Clone, Debug)]
pub struct NumericResidue {
    pub tensor: SolutionTensor,
    /// Relative difference between the K and K/2 circle rules.
    pub half_diff: f64,
}

/// e^{−πiμλ/2η}.
pub fn prefactor(lam: C64, mu: C64, eta: C64) -> C64 {
    (-PI * I * mu * lam / (2.0 * eta)).exp()
}

fn tag(e: Error, what: String) -> Error {
    match e {
        Error::PoleHit { factor } => Error::PoleHit { factor: format!("{what}: {factor}") },
        other => other,
    }
}

fn check_len(f: &[C64], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(Error::InvalidParameters(format!("functional has {} coefficients, basis has {n}", f.len())));
    }
    Ok(())
}

fn check_entry(lbar: &WeightIndex, mbar: &WeightIndex, sp: &SystemParams) -> Result<()> {
    let bl = admissibility(lbar, sp.lambda(), INT_TOL);
    let bm = admissibility(mbar, sp.lambda(), INT_TOL);
    if bl.intersects(&bm) {
        return Err(Error::DivergentEntry { row: lbar.to_string(), col: mbar.to_string() });
    }
    Ok(())
}

fn one_based(b: &[usize]) -> Vec<usize> {
    b.iter().map(|x| x + 1).collect()
}

fn normalize_set(b: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut v = b.to_vec();
    v.sort_unstable();
    v.dedup();
    if let Some(&bad) = v.iter().find(|&&s| s >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    Ok(v)
}

pub fn admissible_indices(sp: &SystemParams) -> Vec<WeightIndex> {
    let mut idx = enumerate_indices(sp.n(), sp.l());
    idx.retain(|i| admissibility(i, sp.lambda(), INT_TOL).is_empty());
    idx
}

/// Indices of level l with B_Λ(l̄) exactly B.
pub fn fixed_b_indices(b: &[usize], sp: &SystemParams) -> Vec<WeightIndex> {
    let mut idx = enumerate_indices(sp.n(), sp.l());
    idx.retain(|i| admissibility(i, sp.lambda(), INT_TOL).bad == b);
    idx
}

fn lower_index(idx: &WeightIndex, b: &[usize], lambdas: &[C64]) -> WeightIndex {
    let mut c = idx.coords().to_vec();
    for &s in b {
        let k = as_nonneg_integer(lambdas[s], INT_TOL).unwrap_or(0);
        c[s] -= k + 1;
    }
    WeightIndex::new(c)
}

/// Weights Λ̃ (Λ̃_s = −Λ_s − 2 on B) and level l′(B) = l − Σ_B Λ_s − |B|.
pub fn reflected(b: &[usize], sp0: &SystemParams) -> Result<SystemParams> {
    let mut sp = sp0.clone();
    let mut drop = 0usize;
    for &s in b {
        let k = as_nonneg_integer(sp0.lambda()[s], INT_TOL)
            .ok_or_else(|| Error::NotIntegral(format!("Lambda_{} = {}", s + 1, sp0.lambda()[s])))?;
        drop += k + 1;
        sp = sp.with_lambda(s, C64::new(-(k as f64) - 2.0, 0.0));
    }
    if drop > sp0.l() {
        return Err(Error::InvalidParameters(format!("l = {} is too small for B = {:?}", sp0.l(), one_based(b))));
    }
    Ok(sp.with_l(sp0.l() - drop))
}

/// |(Σã_i/η − 2l′) − (Σa_i/η − 2l)|; zero when the residue map conserves weight.
pub fn weight_conservation_defect(b: &[usize], sp0: &SystemParams) -> Result<f64> {
    let refl = reflected(b, sp0)?;
    let w = |sp: &SystemParams| sp.lambda().iter().sum::<C64>() - 2.0 * sp.l() as f64;
    Ok((w(&refl) - w(sp0)).norm())
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// x_k(m, η) with θ(0) in the denominators read as θ′(0).
pub fn x_k(k: usize, modulus: C64, eta: C64, cfg: &SeriesConfig) -> Result<C64> {
    let th = |x: C64| theta(x, modulus, cfg);
    let th_hat = |x: C64| -> Result<C64> {
        if x.norm() < 1e-300 {
            theta_deriv(C64::new(0.0, 0.0), modulus, cfg)
        } else {
            th(x)
        }
    };
    let mut v = 1.0 / (factorial(k + 1) * theta_deriv(C64::new(0.0, 0.0), modulus, cfg)?);
    for i in 0..k {
        for j in i + 1..=k {
            let (i, j) = (i as f64, j as f64);
            v *= th(2.0 * (i - j) * eta)? / th_hat(2.0 * (i - j + 1.0) * eta)?;
        }
    }
    for i in 1..=k {
        v /= th(2.0 * i as f64 * eta)?;
    }
    Ok(v)
}

/// d_k = lim_{t→kη} Ω(t, kη)Ω(−t, kη) = −Ω(0, 2kη); d_0 = 1.
pub fn d_k(k: usize, mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    if k == 0 {
        return Ok(C64::new(1.0, 0.0));
    }
    Ok(-phase1(C64::new(0.0, 0.0), mp, 2.0 * k as f64 * mp.eta(), cfg)?)
}

pub fn y_k(k: usize, mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    let eta = mp.eta();
    let om = |t: C64, a: C64| phase1(t, mp, a, cfg);
    let mut v = d_k(k, mp, cfg)? / factorial(k + 1);
    if k >= 1 {
        v *= phase1_deriv(-2.0 * eta, mp, -2.0 * eta, cfg)?.powu(k as u32);
    }
    if k >= 2 {
        for i in 0..=k - 2 {
            for j in i + 2..=k {
                v *= om(2.0 * (i as f64 - j as f64) * eta, -2.0 * eta)?;
            }
        }
    }
    let kk = k as f64;
    for i in 1..k {
        v *= om(kk * eta - 2.0 * i as f64 * eta, kk * eta)?;
    }
    Ok(v)
}

/// N_{j,k} = Π_{s=0}^{k} [Π_{i<j} Ω(z_i − z_j, a_i + a_j − 2sη) · Π_{i>j} Ω(z_j − z_i, a_i + a_j − 2sη)].
pub fn n_jk(j: usize, k: usize, sp0: &SystemParams, mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    let eta = mp.eta();
    let (z, a) = (sp0.z(), sp0.a(eta));
    let mut v = C64::new(1.0, 0.0);
    for s in 0..=k {
        let sh = 2.0 * s as f64 * eta;
        for i in 0..sp0.n() {
            if i < j {
                v *= phase1(z[i] - z[j], mp, a[i] + a[j] - sh, cfg)?;
            } else if i > j {
                v *= phase1(z[j] - z[i], mp, a[i] + a[j] - sh, cfg)?;
            }
        }
    }
    Ok(v)
}

/// Normalization κ_k of the residue constant. The printed formula fixes
/// c_B only up to a k-dependent factor; κ_0 and κ_1 were measured, larger k
/// are unknown.
pub fn kappa(k: usize) -> Option<C64> {
    match k {
        0 => Some(C64::new(0.0, PI)),
        1 => Some(C64::new(64.0 * PI * PI, 0.0)),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct ResidueFactor {
    /// Position s ∈ B (0-based) and k = Λ_s.
    pub s: usize,
    pub k: usize,
    pub x_tau: C64,
    pub x_p: C64,
    pub y: C64,
    pub n: C64,
    pub kappa: Option<C64>,
}

#[derive(Clone, Debug)]
pub struct ResidueConstants {
    pub factors: Vec<ResidueFactor>,
    /// Π x(τ)·x(p)·y·N without normalization.
    pub printed: C64,
    /// The printed product times Π κ; `None` when some κ is unknown.
    pub c_b: Option<C64>,
}

pub fn residue_constants(b: &[usize], sp0: &SystemParams, mp: &ModularParams, cfg: &SeriesConfig) -> Result<ResidueConstants> {
    let b = normalize_set(b, sp0.n())?;
    let eta = mp.eta();
    let mut factors = Vec::new();
    let mut printed = C64::new(1.0, 0.0);
    let mut c_b = Some(C64::new(1.0, 0.0));
    for &s in &b {
        let lam_s = sp0.lambda()[s];
        let k = as_nonneg_integer(lam_s, INT_TOL).ok_or_else(|| Error::NotIntegral(format!("Lambda_{} = {lam_s}", s + 1)))?;
        let f = ResidueFactor {
            s,
            k,
            x_tau: x_k(k, mp.tau(), eta, cfg)?,
            x_p: x_k(k, mp.p(), eta, cfg)?,
            y: y_k(k, mp, cfg)?,
            n: n_jk(s, k, sp0, mp, cfg)?,
            kappa: kappa(k),
        };
        let prod = f.x_tau * f.x_p * f.y * f.n;
        printed *= prod;
        c_b = match (c_b, f.kappa) {
            (Some(c), Some(kap)) => Some(c * prod * kap),
            _ => None,
        };
        factors.push(f);
    }
    Ok(ResidueConstants { factors, printed, c_b })
}

/// Π_{s=l′+1}^{l} θ_τ(λ + 2sη)·θ_p(μ + 2sη)/s.
pub fn theta_prefactor(lam: C64, mu: C64, l: usize, l_prime: usize, mp: &ModularParams, cfg: &SeriesConfig) -> Result<C64> {
    let eta = mp.eta();
    let mut v = C64::new(1.0, 0.0);
    for s in l_prime + 1..=l {
        let sh = 2.0 * s as f64 * eta;
        v *= theta(lam + sh, mp.tau(), cfg)? * theta(mu + sh, mp.p(), cfg)? / s as f64;
    }
    Ok(v)
}

/// Default residue circle radius: 5% of the distance |η| from a⁰ to the
/// neighbouring integral weight.
pub fn default_residue_radius(mp: &ModularParams) -> f64 {
    0.05 * mp.eta().norm()
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

    fn hg() -> Hypergeometric {
        Hypergeometric::new(mp(), XiSpec::Constant, IntegrationPlan::default(), SeriesConfig::default()).unwrap()
    }

    fn sp11() -> SystemParams {
        SystemParams::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 1).unwrap()
    }

    const LAM: C64 = C64 { re: 0.37, im: 0.1 };
    const MU: C64 = C64 { re: -0.21, im: 0.05 };

    #[test]
    fn xi_validation() {
        let eta = mp().eta();
        assert!(XiSpec::Constant.validate(eta).is_ok());
        assert!(XiSpec::Exponential { k: 1, n: 2 }.validate(eta).is_ok());
        assert!(XiSpec::Exponential { k: 1, n: 0 }.validate(eta).is_err());
        assert!(XiSpec::Constant.is_2a_periodic(&[eta], eta));
        // exp(2πi x/4η) shifts by e^{πiΛ} under x → x + 2ηΛ
        assert!(XiSpec::Exponential { k: 1, n: 1 }.is_2a_periodic(&[2.0 * eta], eta));
        assert!(!XiSpec::Exponential { k: 1, n: 1 }.is_2a_periodic(&[eta], eta));
    }

    #[test]
    fn level_zero_is_xi() {
        let sp = SystemParams::new(vec![c(0.0, 0.0)], vec![c(0.2, 0.0)], 0).unwrap();
        let i0 = WeightIndex::new(vec![0]);
        let v = hg().integral(&i0, &i0, LAM, MU, &sp).unwrap();
        assert_eq!(v.value, c(1.0, 0.0));
        assert_eq!(v.error, 0.0);
    }

    #[test]
    fn integrand_factorizes() {
        let sp = SystemParams::new(vec![c(0.6, 0.2)], vec![c(0.1, 0.0)], 1).unwrap();
        let (m, cfg) = (mp(), SeriesConfig::default());
        let xi = XiSpec::Exponential { k: 1, n: 1 };
        let t = [c(0.3, 0.05)];
        let i1 = WeightIndex::new(vec![1]);
        let v = integrand(&t, &i1, &i1, LAM, MU, &sp, &m, &xi, &cfg).unwrap();
        let a = m.eta() * sp.lambda()[0];
        let xv = xi.eval(m.p() * LAM + m.tau() * MU - 2.0 * a * sp.z()[0] + 4.0 * m.eta() * t[0], m.eta());
        let om = phase1(t[0] - sp.z()[0], &m, a, &cfg).unwrap();
        let x = t[0] - sp.z()[0] - a;
        let wl = theta(x + LAM + 2.0 * m.eta(), m.tau(), &cfg).unwrap() / theta(x, m.tau(), &cfg).unwrap();
        let wm = theta(x + MU + 2.0 * m.eta(), m.p(), &cfg).unwrap() / theta(x, m.p(), &cfg).unwrap();
        assert!((v - xv * om * wl * wm).norm() < 1e-12 * v.norm());
        // N-periodic
        let v1 = integrand(&[t[0] + 1.0], &i1, &i1, LAM, MU, &sp, &m, &xi, &cfg).unwrap();
        assert!((v - v1).norm() < 1e-10 * v.norm());
    }

    #[test]
    fn sweep_matches_pointwise_integrand() {
        let sp = sp11().with_l(1);
        let h = hg();
        let rc = h.contour(&sp).unwrap();
        let c1 = &rc.per_variable[0];
        let (m, cfg) = (mp(), SeriesConfig::default());
        let rows = enumerate_indices(2, 1);
        let (v, _) = h.integrals(&rows, &rows, LAM, MU, &sp).unwrap();
        for (r, lr) in rows.iter().enumerate() {
            for (cc, lc) in rows.iter().enumerate() {
                let mut s = c(0.0, 0.0);
                for (t, w) in c1.nodes.iter().zip(&c1.weights) {
                    s += w * integrand(&[*t], lr, lc, LAM, MU, &sp, &m, &XiSpec::Constant, &cfg).unwrap();
                }
                assert!((s - v[(r, cc)]).norm() < 1e-12 * s.norm());
            }
        }
    }

    #[test]
    fn grid_refinement_and_u_variants() {
        let sp = sp11();
        let h = hg();
        let u64_ = h.u_adm(LAM, MU, &sp).unwrap();
        let h128 = h.with_plan(IntegrationPlan { m: 128, ..Default::default() }).unwrap();
        let u128 = h128.u_adm(LAM, MU, &sp).unwrap();
        assert_eq!(u64_.rows.len(), 2);
        assert!((&u64_.data - &u128.data).norm() < 1e-8 * u128.data.norm());
        let full = h.u_full(LAM, MU, &sp).unwrap();
        assert_eq!(full.data, u64_.data);
        let ub = h.u_b(&[], LAM, MU, &sp).unwrap();
        assert_eq!(ub.data, u64_.data);
    }

    #[test]
    fn divergent_entry_is_named() {
        let sp = SystemParams::new(vec![c(0.0, 0.0), c(2.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 1).unwrap();
        let e = hg().u_full(LAM, MU, &sp).unwrap_err();
        assert_eq!(e, Error::DivergentEntry { row: "(1,0)".into(), col: "(1,0)".into() });
    }

    #[test]
    fn qkzb_relations_n2() {
        let (sp, h) = (sp11(), hg());
        for j in 0..2 {
            assert!(h.qkzb_residual_step_p(j, LAM, MU, &sp).unwrap().residual < 1e-7);
            assert!(h.qkzb_residual_step_tau(j, LAM, MU, &sp).unwrap().residual < 1e-7);
            assert!(h.qkzb_residual_step_1(j, LAM, MU, &sp).unwrap().residual < 1e-7);
        }
    }

    #[test]
    fn psi_phi_and_monodromy() {
        let (sp, h) = (sp11(), hg());
        let f = [c(0.3, -0.2), c(1.1, 0.4)];
        let (_, psi) = h.psi_solution(&f, LAM, MU, &sp).unwrap();
        let (_, e0) = h.psi_solution(&[c(1.0, 0.0), c(0.0, 0.0)], LAM, MU, &sp).unwrap();
        let (_, e1) = h.psi_solution(&[c(0.0, 0.0), c(1.0, 0.0)], LAM, MU, &sp).unwrap();
        for i in 0..2 {
            assert!((psi[i] - f[0] * e0[i] - f[1] * e1[i]).norm() < 1e-13 * psi[i].norm());
        }
        assert!(h.psi_qkzb_residual(0, &f, LAM, MU, &sp).unwrap().residual < 1e-7);
        assert_eq!(h.phi_solution(&f, LAM, MU, &sp).unwrap().1.len(), 2);
        assert!(h.monodromy_tau_shift_residual(0, LAM, MU, &sp).unwrap().residual < 1e-6);
    }

    #[test]
    fn residue_constant_pieces() {
        let (m, cfg) = (mp(), SeriesConfig::default());
        let x0 = x_k(0, m.tau(), m.eta(), &cfg).unwrap();
        assert!((x0 * theta_deriv(c(0.0, 0.0), m.tau(), &cfg).unwrap() - 1.0).norm() < 1e-14);
        assert_eq!(y_k(0, &m, &cfg).unwrap(), c(1.0, 0.0));
        // d_1 as a limit of Ω(t, η)Ω(−t, η)
        let eta = m.eta();
        let h = 1e-5;
        let lim: C64 = [h, -h]
            .iter()
            .map(|&d| phase1(eta + d, &m, eta, &cfg).unwrap() * phase1(-eta - d, &m, eta, &cfg).unwrap())
            .sum::<C64>()
            / 2.0;
        let d1 = d_k(1, &m, &cfg).unwrap();
        assert!((lim - d1).norm() < 1e-8 * d1.norm());
        let sp = SystemParams::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 2).unwrap();
        assert!(weight_conservation_defect(&[0], &sp).unwrap() < 1e-12);
        let refl = reflected(&[0], &sp).unwrap();
        assert_eq!(refl.l(), 0);
        assert_eq!(refl.lambda()[0], c(-3.0, 0.0));
        let rc = residue_constants(&[0], &sp, &m, &cfg).unwrap();
        assert!(rc.c_b.unwrap().norm() > 0.0);
        let sp3 = SystemParams::new(vec![c(2.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 3).unwrap();
        assert!(residue_constants(&[0], &sp3, &m, &cfg).unwrap().c_b.is_none());
    }
}
