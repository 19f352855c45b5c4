use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Truncation control shared by every series and product evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesConfig {
    pub eps: f64,
    pub max_terms: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig { eps: 1e-14, max_terms: 100_000 }
    }
}

impl SeriesConfig {
    pub fn new(eps: f64, max_terms: usize) -> Result<Self> {
        if !(eps > 0.0) || max_terms < 1 {
            return Err(Error::InvalidParameters(format!(
                "series config needs eps > 0 and max_terms >= 1 (got {eps}, {max_terms})"
            )));
        }
        Ok(SeriesConfig { eps, max_terms })
    }
}

/// The modular triple (τ, p, η). The nomes are always recomputed from τ and p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModularParams {
    tau: C64,
    p: C64,
    eta: C64,
}

impl ModularParams {
    pub fn new(tau: C64, p: C64, eta: C64) -> Result<Self> {
        if !(tau.im > 0.0) {
            return Err(Error::InvalidModulus(format!("tau = {tau}")));
        }
        if !(p.im > 0.0) {
            return Err(Error::InvalidModulus(format!("p = {p}")));
        }
        if !(eta.im < 0.0) {
            return Err(Error::InvalidParameters(format!("Im eta must be negative (eta = {eta})")));
        }
        Ok(ModularParams { tau, p, eta })
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }
    pub fn p(&self) -> C64 {
        self.p
    }
    pub fn eta(&self) -> C64 {
        self.eta
    }
    pub fn q(&self) -> C64 {
        expi(self.tau)
    }
    pub fn r(&self) -> C64 {
        expi(self.p)
    }

    /// Exchange the roles of τ and p.
    pub fn swapped(&self) -> Self {
        ModularParams { tau: self.p, p: self.tau, eta: self.eta }
    }
}

/// e^{2πix}.
#[inline]
pub fn expi(x: C64) -> C64 {
    (C64::new(0.0, 2.0 * PI) * x).exp()
}

/// Highest weights Λ, points z and the number l of integration variables.
/// The a_j = ηΛ_j are derived on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    lambda: Vec<C64>,
    z: Vec<C64>,
    l: usize,
}

impl SystemParams {
    pub fn new(lambda: Vec<C64>, z: Vec<C64>, l: usize) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidParameters("n must be at least 1".into()));
        }
        if lambda.len() != z.len() {
            return Err(Error::InvalidParameters(format!(
                "{} weights but {} points",
                lambda.len(),
                z.len()
            )));
        }
        Ok(SystemParams { lambda, z, l })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn lambda(&self) -> &[C64] {
        &self.lambda
    }
    pub fn z(&self) -> &[C64] {
        &self.z
    }
    pub fn a(&self, eta: C64) -> Vec<C64> {
        self.lambda.iter().map(|&x| eta * x).collect()
    }

    pub fn with_z(&self, j: usize, zj: C64) -> Self {
        let mut s = self.clone();
        s.z[j] = zj;
        s
    }

    pub fn with_lambda(&self, j: usize, lj: C64) -> Self {
        let mut s = self.clone();
        s.lambda[j] = lj;
        s
    }

    pub fn with_l(&self, l: usize) -> Self {
        let mut s = self.clone();
        s.l = l;
        s
    }

    /// |ΣΛ_j − 2l|, zero on the zero-weight condition.
    pub fn weight_defect(&self) -> f64 {
        (self.lambda.iter().sum::<C64>() - 2.0 * self.l as f64).norm()
    }
}
