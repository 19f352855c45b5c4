//! Task runners. Each returns the checks, warnings and value tables of a
//! report; configuration problems come back as `Err` (exit code 1).

use num_complex::Complex64 as C64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qkzb_core::conditions::{check_conditions, DEFAULT_BOUND, DEFAULT_DELTA};
use qkzb_core::elliptic::{phase1, theta};
use qkzb_core::hypergeometric::{
    default_residue_radius, residue_constants, weight_conservation_defect, Hypergeometric, SolutionTensor, XiSpec,
};
use qkzb_core::operators::ShiftConvention;
use qkzb_core::params::expi;
use qkzb_core::rmatrix::{dybe_residual, quotient_leak, unitarity_residual, RMatrixEngine};
use qkzb_core::weights::{all_reduced_words, elliptic_action, permutations};
use qkzb_core::{ModularParams, SeriesConfig, SystemParams};

use crate::config::{ConventionCfg, Relation, RunConfig, Task, XiCfg};
use crate::report::{Check, Table};

pub struct Outcome {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub tables: Vec<Table>,
}

struct Ctx {
    mp: ModularParams,
    series: SeriesConfig,
    sp: SystemParams,
    lam: C64,
    mu: C64,
}

fn ctx(cfg: &RunConfig) -> Result<Ctx, String> {
    let m = &cfg.modular;
    let mp = ModularParams::new(m.tau.c(), m.p.c(), m.eta.c()).map_err(|e| format!("modular: {e}"))?;
    let series = SeriesConfig::new(cfg.series.eps, cfg.series.max_terms).map_err(|e| format!("series: {e}"))?;
    let s = &cfg.system;
    let sp = SystemParams::new(s.lambda.iter().map(|x| x.c()).collect(), s.z.iter().map(|x| x.c()).collect(), s.l)
        .map_err(|e| format!("system: {e}"))?;
    Ok(Ctx { mp, series, sp, lam: cfg.point.lambda.c(), mu: cfg.point.mu.c() })
}

fn hypergeometric(cfg: &RunConfig, c: &Ctx) -> Result<Hypergeometric, String> {
    let xi = match cfg.xi {
        XiCfg::Constant => XiSpec::Constant,
        XiCfg::Exponential { k, n } => XiSpec::Exponential { k, n },
    };
    let conv = match cfg.convention {
        ConventionCfg::Paper => ShiftConvention::Paper,
        ConventionCfg::Alternative => ShiftConvention::Alternative,
    };
    Hypergeometric::new(c.mp, xi, cfg.plan.plan(), c.series)
        .map(|h| h.with_convention(conv))
        .map_err(|e| format!("plan/xi: {e}"))
}

fn positions(js: &Option<Vec<usize>>, n: usize) -> Result<Vec<usize>, String> {
    match js {
        None => Ok((0..n).collect()),
        Some(v) => v
            .iter()
            .map(|&j| if j >= 1 && j <= n { Ok(j - 1) } else { Err(format!("position {j} out of range 1..={n}")) })
            .collect(),
    }
}

fn condition_warnings(c: &Ctx) -> Vec<String> {
    check_conditions(&c.sp, &c.mp, DEFAULT_BOUND, DEFAULT_DELTA)
        .entries
        .iter()
        .filter(|e| e.violated)
        .map(|e| format!("condition {} violated: {}", e.name, e.description))
        .collect()
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

/// Maximum of a fallible per-point residual; the first error wins.
fn max_over<F>(count: usize, mut f: F) -> qkzb_core::Result<(f64, Option<f64>)>
where
    F: FnMut(usize) -> qkzb_core::Result<f64>,
{
    let mut m: f64 = 0.0;
    for i in 0..count {
        m = m.max(f(i)?);
    }
    Ok((m, None))
}

fn sample_points(seed: u64, count: usize, scale_im: f64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| C64::new(rng.random::<f64>(), (rng.random::<f64>() - 0.5) * scale_im))
        .collect()
}

pub fn run(task: Task, cfg: &RunConfig) -> Result<Outcome, String> {
    let c = ctx(cfg)?;
    match task {
        Task::ThetaCheck => theta_check(cfg, &c),
        Task::PhaseCheck => phase_check(cfg, &c),
        Task::WeightsCheck => weights_check(cfg, &c),
        Task::Rmatrix | Task::Unitarity | Task::Dybe => rmatrix_tasks(task, cfg, &c),
        Task::Qkzb => qkzb(cfg, &c),
        Task::Residue => residue(cfg, &c),
        Task::Monodromy => monodromy(cfg, &c),
        Task::GenerateParams => Err("generate-params is handled separately".into()),
    }
}

fn theta_check(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let tol = cfg.tolerance("theta");
    let mut checks = Vec::new();
    for (label, m) in [("tau", c.mp.tau()), ("p", c.mp.p())] {
        let pts = sample_points(cfg.seed, cfg.sampling.points, 0.6 * m.im);
        let th = |t: C64| theta(t, m, &c.series);
        checks.push(Check::from_result(
            format!("theta_{label}.shift_1"),
            max_over(pts.len(), |i| Ok(rel(th(pts[i] + 1.0)?, -th(pts[i])?))),
            tol,
        ));
        checks.push(Check::from_result(
            format!("theta_{label}.shift_modulus"),
            max_over(pts.len(), |i| {
                let t = pts[i];
                let mult = -(-C64::i() * std::f64::consts::PI * (m + 2.0 * t)).exp();
                Ok(rel(th(t + m)?, mult * th(t)?))
            }),
            tol,
        ));
        checks.push(Check::from_result(
            format!("theta_{label}.odd"),
            max_over(pts.len(), |i| Ok(rel(th(-pts[i])?, -th(pts[i])?))),
            tol,
        ));
    }
    Ok(Outcome { checks, warnings: vec![], tables: vec![] })
}

fn phase_check(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let tol = cfg.tolerance("phase");
    let mp = &c.mp;
    let eta = mp.eta();
    let pts = sample_points(cfg.seed, cfg.sampling.points, 0.4 * mp.tau().im.min(mp.p().im));
    // weights a = ηΛ with Λ drawn from [0, 3] + i[−0.5, 0.5]
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5);
    let avals: Vec<C64> =
        (0..pts.len()).map(|_| eta * C64::new(3.0 * rng.random::<f64>(), rng.random::<f64>() - 0.5)).collect();
    let om = |t: C64, a: C64, m: &ModularParams| phase1(t, m, a, &c.series);
    let th = |x: C64, m: C64| theta(x, m, &c.series);
    let swapped = mp.swapped();
    let checks = vec![
        Check::from_result(
            "phase.shift_p",
            max_over(pts.len(), |i| {
                let (t, a) = (pts[i], avals[i]);
                let mult = expi(a) * th(t + a, mp.tau())? / th(t - a, mp.tau())?;
                Ok(rel(om(t + mp.p(), a, mp)?, mult * om(t, a, mp)?))
            }),
            tol,
        ),
        Check::from_result(
            "phase.shift_tau",
            max_over(pts.len(), |i| {
                let (t, a) = (pts[i], avals[i]);
                let mult = expi(a) * th(t + a, mp.p())? / th(t - a, mp.p())?;
                Ok(rel(om(t + mp.tau(), a, mp)?, mult * om(t, a, mp)?))
            }),
            tol,
        ),
        Check::from_result(
            "phase.swap_symmetry",
            max_over(pts.len(), |i| Ok(rel(om(pts[i], avals[i], &swapped)?, om(pts[i], avals[i], mp)?))),
            tol,
        ),
        Check::from_result(
            "phase.shift_1",
            max_over(pts.len(), |i| Ok(rel(om(pts[i] + 1.0, avals[i], mp)?, om(pts[i], avals[i], mp)?))),
            tol,
        ),
    ];
    Ok(Outcome { checks, warnings: vec![], tables: vec![] })
}

fn weights_check(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let (tau, eta) = (c.mp.tau(), c.mp.eta());
    let series = c.series;
    let pts = sample_points(cfg.seed, 3, 0.2 * tau.im);
    let f = |x: &[C64]| -> qkzb_core::Result<C64> {
        Ok(theta(x[0] + 0.13, tau, &series)? * theta(x[1] - 0.29, tau, &series)? * theta(2.0 * x[2] + 0.07, tau, &series)?)
    };
    let action = max_over(1, |_| {
        let mut worst: f64 = 0.0;
        for perm in permutations(3) {
            let words = all_reduced_words(&perm);
            let first = elliptic_action(&f, &words[0], &pts, tau, eta, &series)?;
            for w in &words[1..] {
                worst = worst.max(rel(elliptic_action(&f, w, &pts, tau, eta, &series)?, first));
            }
        }
        Ok(worst)
    });
    let mut checks = vec![Check::from_result("action.reduced_words", action, cfg.tolerance("action"))];

    let engine = RMatrixEngine::new(tau, eta, series).without_cache();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let level = cfg.system.l.max(1);
    let mut table = Table::new("collocation", &["draw", "quantity"]);
    let coll = max_over(cfg.sampling.draws, |k| {
        let mut u = || rng.random::<f64>();
        let lam = C64::new(u() - 0.5, 0.1);
        let z = C64::new(0.8 * u() - 0.4, 0.05);
        let l1 = C64::new(0.3 + 1.4 * u(), 0.2 * u() - 0.1);
        let l2 = C64::new(0.3 + 1.4 * u(), 0.2 * u() - 0.1);
        let b = engine.block(lam, z, l1, l2, level)?;
        table.push(vec![k.to_string(), "residual".into()], C64::new(b.residual, 0.0), None);
        table.push(vec![k.to_string(), "condition".into()], C64::new(b.condition, 0.0), None);
        Ok(b.residual)
    });
    checks.push(Check::from_result(format!("collocation.level_{level}"), coll, cfg.tolerance("collocation")));
    Ok(Outcome { checks, warnings: vec![], tables: vec![table] })
}

fn rmatrix_tasks(task: Task, cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let engine = RMatrixEngine::new(c.mp.tau(), c.mp.eta(), c.series);
    let (z, w) = (cfg.rmatrix.z.c(), cfg.rmatrix.w.c());
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    for (ci, case) in cfg.rmatrix.cases.iter().enumerate() {
        let lambdas: Vec<C64> = case.lambdas.iter().map(|x| x.c()).collect();
        let want = if task == Task::Dybe { 3 } else { 2 };
        if lambdas.len() != want {
            return Err(format!("rmatrix.cases[{ci}]: task {task} needs {want} weights"));
        }
        let label = format!("case_{}[{}; level {}]", ci + 1, fmt_weights(&lambdas), case.level);
        match task {
            Task::Rmatrix => match engine.block(c.lam, z, lambdas[0], lambdas[1], case.level) {
                Ok(b) => {
                    checks.push(Check::at_most(
                        format!("{label}.collocation"),
                        b.residual,
                        None,
                        case.tol.unwrap_or(cfg.tolerance("collocation")),
                    ));
                    if case.quotient {
                        let leak = quotient_leak(&b, lambdas[0], lambdas[1]);
                        checks.push(Check::at_most(format!("{label}.quotient_leak"), leak, None, cfg.tolerance("quotient_leak")));
                    }
                    let mut t = Table::new(&format!("rmatrix_case_{}", ci + 1), &["row", "col"]);
                    for (r, ri) in b.rows.iter().enumerate() {
                        for (k, ck) in b.cols.iter().enumerate() {
                            t.push(vec![ri.to_string(), ck.to_string()], b.data[(r, k)], None);
                        }
                    }
                    tables.push(t);
                }
                Err(e) => checks.push(Check::failed(format!("{label}.collocation"), cfg.tolerance("collocation"), &e)),
            },
            Task::Unitarity => checks.push(Check::from_result(
                format!("{label}.unitarity"),
                unitarity_residual(&engine, c.lam, z, lambdas[0], lambdas[1], case.level).map(|r| (r, None)),
                case.tol.unwrap_or(cfg.tolerance("unitarity")),
            )),
            _ => checks.push(Check::from_result(
                format!("{label}.dybe{}", if case.quotient { "_quotient" } else { "" }),
                dybe_residual(&engine, c.lam, z, w, [lambdas[0], lambdas[1], lambdas[2]], case.level, case.quotient)
                    .map(|r| (r, None)),
                case.tol.unwrap_or(cfg.tolerance("dybe")),
            )),
        }
    }
    Ok(Outcome { checks, warnings: vec![], tables })
}

fn fmt_weights(l: &[C64]) -> String {
    l.iter()
        .map(|x| if x.im == 0.0 { format!("{}", x.re) } else { format!("{}{:+}i", x.re, x.im) })
        .collect::<Vec<_>>()
        .join(",")
}

fn tensor_table(name: &str, t: &SolutionTensor) -> Table {
    let mut table = Table::new(name, &["row", "col"]);
    for (r, ri) in t.rows.iter().enumerate() {
        for (k, ck) in t.cols.iter().enumerate() {
            table.push(vec![ri.to_string(), ck.to_string()], t.data[(r, k)], Some(t.error[(r, k)]));
        }
    }
    table
}

fn qkzb(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let h = hypergeometric(cfg, c)?;
    let js = positions(&cfg.qkzb.j, c.sp.n())?;
    let tol = cfg.tolerance("qkzb");
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut f = None;
    match h.u_adm(c.lam, c.mu, &c.sp) {
        Ok(u) => {
            // coefficients of the Ψ combination, one per admissible column
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            f = Some((0..u.cols.len()).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect::<Vec<_>>());
            tables.push(tensor_table("u_adm", &u));
        }
        Err(e) => checks.push(Check::failed("u_adm", tol, &e)),
    }
    for &j in &js {
        if let Some(f) = &f {
            checks.push(Check::from_result(
                format!("psi_step_p[j={}]", j + 1),
                h.psi_qkzb_residual(j, f, c.lam, c.mu, &c.sp).map(|r| (r.residual, Some(r.estimate))),
                cfg.tolerance("psi"),
            ));
        }
        for rel in &cfg.qkzb.relations {
            let (name, r) = match rel {
                Relation::P => ("step_p", h.qkzb_residual_step_p(j, c.lam, c.mu, &c.sp)),
                Relation::Tau => ("step_tau", h.qkzb_residual_step_tau(j, c.lam, c.mu, &c.sp)),
                Relation::One => ("step_1", h.qkzb_residual_step_1(j, c.lam, c.mu, &c.sp)),
            };
            checks.push(Check::from_result(format!("{name}[j={}]", j + 1), r.map(|r| (r.residual, Some(r.estimate))), tol));
        }
    }
    if let Some(q) = &cfg.qkzb.quadrature {
        quadrature_study(cfg, c, &h, q, &mut checks, &mut tables);
    }
    Ok(Outcome { checks, warnings: condition_warnings(c), tables })
}

fn quadrature_study(
    cfg: &RunConfig,
    c: &Ctx,
    h: &Hypergeometric,
    q: &crate::config::QuadratureCfg,
    checks: &mut Vec<Check>,
    tables: &mut Vec<Table>,
) {
    let l = c.sp.l();
    let at = |m: usize, off: f64| -> qkzb_core::Result<SolutionTensor> {
        let mut plan = cfg.plan.plan();
        plan.m = m;
        plan.offsets = Some(vec![off; l]);
        plan.tol = None;
        h.with_plan(plan)?.u_adm(c.lam, c.mu, &c.sp)
    };
    let mut table = Table::new("grid_refinement", &["M", "quantity"]);
    let results: Vec<_> = q.grid.iter().map(|&m| (m, at(m, q.offset))).collect();
    let mut diffs = Vec::new();
    for w in results.windows(2) {
        let ((m1, a), (m2, b)) = (&w[0], &w[1]);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let d = (&a.data - &b.data).norm() / b.data.norm();
                table.push(vec![format!("{m1}->{m2}"), "rel_change".into()], C64::new(d, 0.0), None);
                diffs.push((format!("{m1}->{m2}"), d));
            }
            (Err(e), _) | (_, Err(e)) => {
                checks.push(Check::failed(format!("grid[M={m1}->{m2}]"), cfg.tolerance("grid_decay"), e));
            }
        }
    }
    for w in diffs.windows(2) {
        checks.push(Check::at_least(format!("grid_decay[{} vs {}]", w[0].0, w[1].0), w[0].1 / w[1].1, cfg.tolerance("grid_decay")));
    }
    tables.push(table);
    if let Some(&m) = q.grid.last() {
        let r = (|| {
            let a = at(m, q.offset)?;
            let b = at(m, q.alt_offset)?;
            Ok(((&a.data - &b.data).norm() / a.data.norm(), None))
        })();
        checks.push(Check::from_result(format!("offset_independence[{} vs {}]", q.offset, q.alt_offset), r, cfg.tolerance("offset")));
    }
}

fn residue(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let h = hypergeometric(cfg, c)?;
    let n = c.sp.n();
    let b = positions(&Some(cfg.residue.b.clone()), n)?;
    let rho = cfg.residue.rho.unwrap_or_else(|| default_residue_radius(&c.mp));
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut warnings = condition_warnings(c);

    checks.push(Check::from_result(
        "weight_conservation",
        weight_conservation_defect(&b, &c.sp).map(|d| (d, None)),
        cfg.tolerance("conservation"),
    ));
    let mut consts = Table::new("residue_constants", &["factor", "quantity"]);
    match residue_constants(&b, &c.sp, &c.mp, &c.series) {
        Ok(rc) => {
            for f in &rc.factors {
                let s = (f.s + 1).to_string();
                consts.push(vec![s.clone(), "x_tau".into()], f.x_tau, None);
                consts.push(vec![s.clone(), "x_p".into()], f.x_p, None);
                consts.push(vec![s.clone(), "y".into()], f.y, None);
                consts.push(vec![s.clone(), "N".into()], f.n, None);
                match f.kappa {
                    Some(k) => consts.push(vec![s, "kappa".into()], k, None),
                    None => warnings.push(format!("no normalization known for Lambda_{s} = {}", f.k)),
                }
            }
            consts.push(vec!["all".into(), "printed".into()], rc.printed, None);
            if let Some(cb) = rc.c_b {
                consts.push(vec!["all".into(), "c_B".into()], cb, None);
            }
        }
        Err(e) => checks.push(Check::failed("residue_constants", cfg.tolerance("residue"), &e)),
    }
    tables.push(consts);

    let circle_tol = cfg.tolerance("residue_circle");
    let numeric = h.numeric_residue_u_b(&b, c.lam, c.mu, &c.sp, rho, cfg.residue.k, circle_tol);
    let numeric = match numeric {
        Ok(r) => {
            checks.push(Check::at_most("circle_rule[K vs K/2]", r.half_diff, None, circle_tol));
            tables.push(tensor_table("residue_numeric", &r.tensor));
            Some(r.tensor)
        }
        Err(e) => {
            checks.push(Check::failed("circle_rule[K vs K/2]", circle_tol, &e));
            None
        }
    };
    let tol = cfg.tolerance("residue");
    match (h.predicted_residue(&b, c.lam, c.mu, &c.sp), &numeric) {
        (Ok(Some(pred)), Some(num)) => {
            let r = (&num.data - &pred.data).norm() / pred.data.norm();
            let est = (num.error_norm() + pred.error_norm()) / pred.data.norm();
            checks.push(Check::at_most("residue_identity", r, Some(est), tol));
            tables.push(tensor_table("residue_predicted", &pred));
        }
        (Ok(None), _) => checks.push(Check {
            error: Some("residue normalization unknown for this weight".into()),
            ..Check::at_most("residue_identity", f64::NAN, None, tol)
        }),
        (Err(e), _) => checks.push(Check::failed("residue_identity", tol, &e)),
        (Ok(Some(_)), None) => {}
    }
    if cfg.residue.halving {
        if let Some(num) = &numeric {
            let r = h
                .numeric_residue_u_b(&b, c.lam, c.mu, &c.sp, rho / 2.0, cfg.residue.k, circle_tol)
                .map(|half| ((&num.data - &half.tensor.data).norm() / num.data.norm(), None));
            checks.push(Check::from_result("radius_halving", r, cfg.tolerance("residue_halving")));
        }
    }
    Ok(Outcome { checks, warnings, tables })
}

fn monodromy(cfg: &RunConfig, c: &Ctx) -> Result<Outcome, String> {
    let h = hypergeometric(cfg, c)?;
    let js = positions(&cfg.monodromy.j, c.sp.n())?;
    let tol = cfg.tolerance("monodromy");
    let checks = js
        .iter()
        .map(|&j| {
            Check::from_result(
                format!("monodromy_tau[j={}]", j + 1),
                h.monodromy_tau_shift_residual(j, c.lam, c.mu, &c.sp).map(|r| (r.residual, Some(r.estimate))),
                tol,
            )
        })
        .collect();
    Ok(Outcome { checks, warnings: condition_warnings(c), tables: vec![] })
}
