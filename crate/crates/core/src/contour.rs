//! Integration contours for the hypergeometric integrals: a horizontal line
//! Im t = c over [0, N) plus small circles around the poles that lie on the
//! wrong side of it.
//!
//! Poles of the integrand in one variable come in two families:
//! "upper" z_k + a_k + rp + sτ and "lower" z_k − a_k − rp − sτ (r, s ≥ 0,
//! modulo 1). The contour must keep upper poles above and lower poles below;
//! upper poles under the line get a counter-clockwise loop and lower poles
//! over it a clockwise one. For l ≥ 2 the variables also repel each other
//! through t_i − t_j = ∓2η (mod the lattice); the planner only accepts
//! configurations where those images stay on their natural side, so that the
//! tensor product of one-dimensional contours is valid.
//!
//! At integral weights a lower loop can be an exact diagonal image of an
//! upper one (z − η + 2η = z + η). Lower loops therefore use a smaller radius
//! than upper loops, so the two circles stay concentric and never meet.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ModularParams;

/// Contour and grid parameters for the integrals.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationPlan {
    /// Period N of the integrand; the line covers Re t ∈ [0, N).
    pub n_period: usize,
    /// Nodes on the line, per variable.
    pub m: usize,
    /// Fixed imaginary offsets of the line per variable; `None` searches.
    pub offsets: Option<Vec<f64>>,
    /// Minimum vertical distance from the line to any pole.
    pub pole_clearance: f64,
    /// Nodes per loop.
    pub loop_nodes: usize,
    /// Upper bound for the loop radius.
    pub loop_radius: f64,
    /// Pole images rp + sτ are enumerated for 0 ≤ r, s ≤ depth.
    pub image_depth: usize,
    /// Offsets are searched over [−range, range]·Im τ.
    pub search_range: f64,
    /// Fail with NotConverged when the M vs M/2 estimate exceeds this (relative).
    pub tol: Option<f64>,
}

impl Default for IntegrationPlan {
    fn default() -> Self {
        IntegrationPlan {
            n_period: 1,
            m: 64,
            offsets: None,
            pole_clearance: 1e-3,
            loop_nodes: 32,
            loop_radius: 0.01,
            image_depth: 3,
            search_range: 0.45,
            tol: None,
        }
    }
}

impl IntegrationPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameters(m.to_string()));
        if self.m < 8 || self.m % 2 != 0 {
            return bad("plan.M must be even and at least 8");
        }
        if self.n_period < 1 {
            return bad("plan.N must be positive");
        }
        if self.loop_nodes < 4 || self.loop_nodes % 2 != 0 {
            return bad("plan.loop_nodes must be even and at least 4");
        }
        if !(self.loop_radius > 0.0) || !(self.pole_clearance > 0.0) {
            return bad("plan radii must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loop {
    pub center: C64,
    /// +1 counter-clockwise (upper pole below the line), −1 clockwise.
    pub orientation: f64,
}

/// One-dimensional quadrature rule. `half` is the rule on the coarser grid
/// (every other node), zero where the node is not part of it.
#[derive(Clone, Debug)]
pub struct Contour1d {
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub half: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct ResolvedContour {
    pub offsets: Vec<f64>,
    pub loops: Vec<Loop>,
    pub loop_radius: f64,
    /// Radius of the clockwise loops, a fixed fraction of `loop_radius`.
    pub lower_radius: f64,
    /// Smallest vertical distance from the line to a pole or pole image.
    pub clearance: f64,
    pub per_variable: Vec<Contour1d>,
}

struct Poles {
    upper: Vec<C64>,
    lower: Vec<C64>,
}

fn reduce(x: C64) -> C64 {
    C64::new(x.re - x.re.floor(), x.im)
}

fn point_poles(z: &[C64], a: &[C64], mp: &ModularParams, depth: usize) -> Poles {
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (&zk, &ak) in z.iter().zip(a) {
        for r in 0..=depth {
            for s in 0..=depth {
                let img = r as f64 * mp.p() + s as f64 * mp.tau();
                upper.push(reduce(zk + ak + img));
                lower.push(reduce(zk - ak - img));
            }
        }
    }
    Poles { upper, lower }
}

/// Distance between two points of the cylinder C/Z.
fn cyl_dist(x: C64, y: C64) -> f64 {
    let d = x - y;
    let re = d.re - d.re.round();
    (re * re + d.im * d.im).sqrt()
}

fn loops_for(poles: &Poles, c: f64) -> Vec<Loop> {
    let mut out: Vec<Loop> = Vec::new();
    let mut push = |center: C64, orientation: f64| {
        if !out.iter().any(|l| cyl_dist(l.center, center) < 1e-12 && l.orientation == orientation) {
            out.push(Loop { center, orientation });
        }
    };
    for &u in &poles.upper {
        if u.im < c {
            push(u, 1.0);
        }
    }
    for &w in &poles.lower {
        if w.im > c {
            push(w, -1.0);
        }
    }
    out
}

/// Line clearance at offset c, or None if a diagonal image of a looped pole
/// would sit on the wrong side.
fn clearance_at(poles: &Poles, c: f64, eta: C64, l: usize, margin: f64) -> Option<f64> {
    let mut d = f64::INFINITY;
    for p in poles.upper.iter().chain(&poles.lower) {
        d = d.min((p.im - c).abs());
    }
    if l >= 2 {
        let two = 2.0 * eta.im.abs();
        for lp in loops_for(poles, c) {
            // upper images sit 2|Im η| above the centre, lower images 2|Im η| below
            let img = if lp.orientation > 0.0 { lp.center.im + two } else { lp.center.im - two };
            let ok = if lp.orientation > 0.0 { img > c + margin } else { img < c - margin };
            if !ok {
                return None;
            }
            d = d.min((img - c).abs());
        }
    }
    Some(d)
}

fn diag_shifts(mp: &ModularParams) -> Vec<C64> {
    let eta = mp.eta();
    let mut v = Vec::new();
    for r in 0..=1 {
        for s in 0..=1 {
            let img = r as f64 * mp.p() + s as f64 * mp.tau();
            v.push(-2.0 * eta + img);
            v.push(2.0 * eta - img);
        }
    }
    v
}

const CONCENTRIC: f64 = 1e-9;
/// Lower-loop radius as a fraction of the upper one.
pub const LOWER_RADIUS_RATIO: f64 = 0.5;

fn loop_radius_bound(poles: &Poles, loops: &[Loop], offsets: &[f64], mp: &ModularParams, l: usize) -> f64 {
    let mut d = f64::INFINITY;
    let shifts = diag_shifts(mp);
    for lp in loops {
        for q in poles.upper.iter().chain(&poles.lower) {
            let dq = cyl_dist(lp.center, *q);
            if dq > 1e-12 {
                d = d.min(dq);
            }
        }
        for &c in offsets {
            d = d.min((lp.center.im - c).abs());
        }
        if l >= 2 {
            for other in loops {
                for &s in &shifts {
                    let dd = cyl_dist(lp.center, other.center + s);
                    if dd < CONCENTRIC && lp.orientation != other.orientation {
                        continue;
                    }
                    d = d.min(dd);
                }
            }
            for &c in offsets {
                for &s in &shifts {
                    d = d.min((lp.center.im - c - s.im).abs());
                }
            }
        }
    }
    d / 4.0
}

/// Resolve a plan for l variables at points z with a_k = ηΛ_k. Every variable
/// uses the same line and loops.
pub fn plan_contour(plan: &IntegrationPlan, z: &[C64], a: &[C64], mp: &ModularParams, l: usize) -> Result<ResolvedContour> {
    plan.validate()?;
    let poles = point_poles(z, a, mp, plan.image_depth);
    let eta = mp.eta();
    let c = match &plan.offsets {
        Some(offs) => {
            if offs.len() != l {
                return Err(Error::InvalidParameters(format!("{} offsets for {l} variables", offs.len())));
            }
            if offs.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::PlanInfeasible("per-variable offsets must coincide for the tensor contour".into()));
            }
            let c = offs.first().copied().unwrap_or(0.0);
            match clearance_at(&poles, c, eta, l, plan.pole_clearance) {
                Some(d) if d >= plan.pole_clearance => c,
                Some(d) => {
                    return Err(Error::PlanInfeasible(format!("offset {c} is only {d:.3e} from a pole")));
                }
                None => {
                    return Err(Error::PlanInfeasible(format!("offset {c} puts a diagonal pole image on the wrong side")));
                }
            }
        }
        None => {
            let range = plan.search_range * mp.tau().im;
            let steps = 900;
            let mut best: Option<(f64, f64)> = None;
            for i in 0..=steps {
                let c = -range + 2.0 * range * i as f64 / steps as f64;
                if let Some(d) = clearance_at(&poles, c, eta, l, plan.pole_clearance) {
                    let better = match best {
                        None => true,
                        Some((bd, bc)) => d > bd + 1e-12 || ((d - bd).abs() <= 1e-12 && c.abs() < bc.abs()),
                    };
                    if better {
                        best = Some((d, c));
                    }
                }
            }
            match best {
                Some((d, c)) if d >= plan.pole_clearance => c,
                Some((d, _)) => {
                    return Err(Error::PlanInfeasible(format!("best line clearance {d:.3e} below {:.3e}", plan.pole_clearance)));
                }
                None => return Err(Error::PlanInfeasible("no offset keeps diagonal pole images on their side".into())),
            }
        }
    };
    let offsets = vec![c; l];
    let clearance = clearance_at(&poles, c, eta, l, plan.pole_clearance).unwrap_or(0.0);
    let loops = loops_for(&poles, c);
    let radius = plan.loop_radius.min(loop_radius_bound(&poles, &loops, &offsets, mp, l));
    if !loops.is_empty() && radius < 1e-12 {
        return Err(Error::PlanInfeasible("poles pinch the contour".into()));
    }
    let lower = radius * LOWER_RADIUS_RATIO;
    let one = build_1d(plan, c, &loops, radius, lower);
    Ok(ResolvedContour { offsets, loops, loop_radius: radius, lower_radius: lower, clearance, per_variable: vec![one; l] })
}

fn build_1d(plan: &IntegrationPlan, c: f64, loops: &[Loop], upper: f64, lower: f64) -> Contour1d {
    let n = plan.n_period as f64;
    let m = plan.m;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut half = Vec::new();
    let h = n / m as f64;
    for k in 0..m {
        nodes.push(C64::new(k as f64 * h, c));
        weights.push(C64::new(h, 0.0));
        half.push(C64::new(if k % 2 == 0 { 2.0 * h } else { 0.0 }, 0.0));
    }
    let kl = plan.loop_nodes;
    for lp in loops {
        let radius = if lp.orientation > 0.0 { upper } else { lower };
        for shift in 0..plan.n_period {
            let center = lp.center + shift as f64;
            for k in 0..kl {
                let e = C64::from_polar(1.0, 2.0 * PI * k as f64 / kl as f64);
                // dt = iρe^{iθ}dθ
                let w = lp.orientation * C64::new(0.0, 1.0) * radius * e * (2.0 * PI / kl as f64);
                nodes.push(center + radius * e);
                weights.push(w);
                half.push(if k % 2 == 0 { 2.0 * w } else { C64::new(0.0, 0.0) });
            }
        }
    }
    Contour1d { nodes, weights, half }
}
