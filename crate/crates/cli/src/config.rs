//! Run configuration: JSON with a versioned schema, strict keys and dotted
//! `--set` overrides applied before validation.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "qkzb-lab/1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cplx {
    pub re: f64,
    pub im: f64,
}

impl Cplx {
    pub fn new(re: f64, im: f64) -> Self {
        Cplx { re, im }
    }
    pub fn c(self) -> C64 {
        C64::new(self.re, self.im)
    }
}

impl From<C64> for Cplx {
    fn from(z: C64) -> Self {
        Cplx { re: z.re, im: z.im }
    }
}

// a bare number is accepted as a real value
impl<'de> Deserialize<'de> for Cplx {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Obj {
            re: f64,
            im: f64,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Obj(Obj),
        }
        match Repr::deserialize(d).map_err(|_| serde::de::Error::custom("expected a number or {\"re\": .., \"im\": ..}"))? {
            Repr::Num(x) => Ok(Cplx::new(x, 0.0)),
            Repr::Obj(o) => Ok(Cplx::new(o.re, o.im)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ThetaCheck,
    PhaseCheck,
    WeightsCheck,
    Rmatrix,
    Dybe,
    Unitarity,
    Qkzb,
    Residue,
    Monodromy,
    GenerateParams,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        write!(f, "{}", v.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesCfg {
    pub eps: f64,
    pub max_terms: usize,
}

impl Default for SeriesCfg {
    fn default() -> Self {
        SeriesCfg { eps: 1e-14, max_terms: 100_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModularCfg {
    pub tau: Cplx,
    pub p: Cplx,
    pub eta: Cplx,
}

impl Default for ModularCfg {
    fn default() -> Self {
        ModularCfg { tau: Cplx::new(0.0, 0.7), p: Cplx::new(0.0, 0.53), eta: Cplx::new(0.0, -0.04) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemCfg {
    pub lambda: Vec<Cplx>,
    pub z: Vec<Cplx>,
    pub l: usize,
}

impl Default for SystemCfg {
    fn default() -> Self {
        SystemCfg { lambda: vec![Cplx::new(1.0, 0.0); 2], z: vec![Cplx::new(0.0, 0.0), Cplx::new(0.31, 0.0)], l: 1 }
    }
}

/// Dynamical variables λ (modulus τ side) and μ (modulus p side).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointCfg {
    pub lambda: Cplx,
    pub mu: Cplx,
}

impl Default for PointCfg {
    fn default() -> Self {
        PointCfg { lambda: Cplx::new(0.37, 0.1), mu: Cplx::new(-0.21, 0.05) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanCfg {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub offsets: Option<Vec<f64>>,
    pub pole_clearance: f64,
    pub loop_nodes: usize,
    pub loop_radius: f64,
    pub image_depth: usize,
    pub search_range: f64,
    pub tol: Option<f64>,
}

impl Default for PlanCfg {
    fn default() -> Self {
        let p = qkzb_core::contour::IntegrationPlan::default();
        PlanCfg {
            n: p.n_period,
            m: p.m,
            offsets: p.offsets,
            pole_clearance: p.pole_clearance,
            loop_nodes: p.loop_nodes,
            loop_radius: p.loop_radius,
            image_depth: p.image_depth,
            search_range: p.search_range,
            tol: p.tol,
        }
    }
}

impl PlanCfg {
    pub fn plan(&self) -> qkzb_core::contour::IntegrationPlan {
        qkzb_core::contour::IntegrationPlan {
            n_period: self.n,
            m: self.m,
            offsets: self.offsets.clone(),
            pole_clearance: self.pole_clearance,
            loop_nodes: self.loop_nodes,
            loop_radius: self.loop_radius,
            image_depth: self.image_depth,
            search_range: self.search_range,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum XiCfg {
    #[default]
    Constant,
    Exponential {
        k: i64,
        #[serde(rename = "N")]
        n: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConventionCfg {
    #[default]
    Paper,
    Alternative,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingCfg {
    /// Random points for the special-function checks.
    pub points: usize,
    /// Parameter draws for the collocation checks.
    pub draws: usize,
}

impl Default for SamplingCfg {
    fn default() -> Self {
        SamplingCfg { points: 100, draws: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RCase {
    pub lambdas: Vec<Cplx>,
    pub level: usize,
    #[serde(default)]
    pub quotient: bool,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmatrixCfg {
    /// Spectral parameters: z for R_12, w for R_23.
    pub z: Cplx,
    pub w: Cplx,
    pub cases: Vec<RCase>,
}

impl Default for RmatrixCfg {
    fn default() -> Self {
        RmatrixCfg {
            z: Cplx::new(0.23, 0.05),
            w: Cplx::new(-0.11, 0.02),
            cases: vec![RCase { lambdas: vec![Cplx::new(1.0, 0.0); 2], level: 1, quotient: false, tol: None }],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureCfg {
    /// Grid sizes of the refinement study, each the double of the previous.
    pub grid: Vec<usize>,
    /// Fixed line offset of the refinement study.
    pub offset: f64,
    /// A second offset in the same deformation class.
    pub alt_offset: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkzbCfg {
    /// Positions (1-based); all when absent.
    pub j: Option<Vec<usize>>,
    pub relations: Vec<Relation>,
    pub quadrature: Option<QuadratureCfg>,
}

impl Default for QkzbCfg {
    fn default() -> Self {
        QkzbCfg { j: None, relations: vec![Relation::P, Relation::Tau, Relation::One], quadrature: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    P,
    Tau,
    One,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidueCfg {
    /// The set B (1-based).
    #[serde(rename = "B")]
    pub b: Vec<usize>,
    /// Circle radius; 5% of |η| when absent.
    pub rho: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// Repeat at rho/2 and compare.
    pub halving: bool,
}

impl Default for ResidueCfg {
    fn default() -> Self {
        ResidueCfg { b: vec![1], rho: None, k: 64, halving: true }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonodromyCfg {
    pub j: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub series: SeriesCfg,
    #[serde(default)]
    pub modular: ModularCfg,
    #[serde(default)]
    pub system: SystemCfg,
    #[serde(default)]
    pub point: PointCfg,
    #[serde(default)]
    pub plan: PlanCfg,
    #[serde(default)]
    pub xi: XiCfg,
    #[serde(default)]
    pub convention: ConventionCfg,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub sampling: SamplingCfg,
    #[serde(default)]
    pub rmatrix: RmatrixCfg,
    #[serde(default)]
    pub qkzb: QkzbCfg,
    #[serde(default)]
    pub residue: ResidueCfg,
    #[serde(default)]
    pub monodromy: MonodromyCfg,
}

/// Tolerance names and their defaults.
pub const TOLERANCES: &[(&str, f64)] = &[
    ("theta", 1e-9),
    ("phase", 1e-9),
    ("action", 1e-10),
    ("collocation", 1e-8),
    ("unitarity", 1e-8),
    ("dybe", 1e-7),
    ("quotient_leak", 1e-8),
    ("qkzb", 1e-5),
    ("psi", 1e-5),
    ("grid_decay", 10.0),
    ("offset", 1e-7),
    ("residue", 1e-4),
    ("residue_halving", 1e-5),
    ("residue_circle", 1e-6),
    ("conservation", 1e-10),
    ("monodromy", 1e-4),
];

impl RunConfig {
    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances
            .get(name)
            .copied()
            .or_else(|| TOLERANCES.iter().find(|(k, _)| *k == name).map(|(_, v)| *v))
            .unwrap_or(f64::NAN)
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA {
            return Err(format!("schema: expected \"{SCHEMA}\", found \"{}\"", self.schema));
        }
        for k in self.tolerances.keys() {
            if !TOLERANCES.iter().any(|(n, _)| n == k) {
                let known: Vec<&str> = TOLERANCES.iter().map(|(n, _)| *n).collect();
                return Err(format!("tolerances.{k}: unknown tolerance (known: {})", known.join(", ")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).unwrap_or_default();
        let d = Sha256::digest(s.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse `text`, apply `key=value` overrides and validate.
pub fn load(text: &str, overrides: &[String]) -> Result<RunConfig, String> {
    // parse straight from text when possible so errors carry line and column
    let cfg: RunConfig = if overrides.is_empty() {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))?
    } else {
        let mut v: Value = serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        RunConfig::deserialize(&v).map_err(|e| format!("config (after --set): {e}"))?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| format!("--set {spec}: expected key=value"))?;
    if key.is_empty() {
        return Err(format!("--set {spec}: empty key"));
    }
    let val: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| format!("--set {key}: {} is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), val);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = load(r#"{"schema": "qkzb-lab/1"}"#, &[]).unwrap();
        assert_eq!(c.plan.m, 64);
        assert_eq!(c.tolerance("qkzb"), 1e-5);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = load(r#"{"schema": "qkzb-lab/1"}"#, &["plan.M=8".into(), "point.lambda.re=0.5".into()]);
        assert!(c.is_err(), "point.lambda.re alone leaves im missing");
        let c = load(r#"{"schema": "qkzb-lab/1"}"#, &["plan.M=8".into(), "tolerances.qkzb=1e-3".into()]).unwrap();
        assert_eq!(c.plan.m, 8);
        assert_eq!(c.tolerance("qkzb"), 1e-3);
        assert!(load(r#"{"schema": "qkzb-lab/1", "plan": {"m": 3}}"#, &[]).is_err());
        assert!(load(r#"{"schema": "qkzb-lab/1", "tolerances": {"bogus": 1}}"#, &[]).is_err());
        assert!(load(r#"{"schema": "qkzb-lab/0"}"#, &[]).is_err());
    }

    #[test]
    fn complex_forms() {
        let c = load(r#"{"schema": "qkzb-lab/1", "system": {"lambda": [1, {"re": 1, "im": 0.5}], "z": [0, 0.3], "l": 1}}"#, &[])
            .unwrap();
        assert_eq!(c.system.lambda[1], Cplx::new(1.0, 0.5));
        assert_eq!(serde_json::to_string(&c.system.lambda[0]).unwrap(), r#"{"re":1.0,"im":0.0}"#);
    }

    #[test]
    fn hash_is_stable() {
        let a = load(r#"{"schema": "qkzb-lab/1"}"#, &[]).unwrap();
        let b = load(r#"{"schema": "qkzb-lab/1", "seed": 0}"#, &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
