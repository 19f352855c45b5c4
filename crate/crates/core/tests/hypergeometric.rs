use num_complex::Complex64 as C64;
use qkzb_core::contour::IntegrationPlan;
use qkzb_core::hypergeometric::{default_residue_radius, weight_conservation_defect, Hypergeometric, XiSpec};
use qkzb_core::operators::ShiftConvention;
use qkzb_core::weights::WeightIndex;
use qkzb_core::{ModularParams, SeriesConfig, SystemParams};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

const LAM: C64 = C64 { re: 0.37, im: 0.1 };
const MU: C64 = C64 { re: -0.21, im: 0.05 };

fn mp() -> ModularParams {
    ModularParams::new(c(0.0, 0.7), c(0.0, 0.53), c(0.0, -0.04)).unwrap()
}

fn hg(plan: IntegrationPlan) -> Hypergeometric {
    Hypergeometric::new(mp(), XiSpec::Constant, plan, SeriesConfig::default()).unwrap()
}

fn sp11() -> SystemParams {
    SystemParams::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 1).unwrap()
}

#[test]
fn single_point_relations() {
    let sp = SystemParams::new(vec![c(2.0, 0.0)], vec![c(0.17, 0.0)], 1).unwrap();
    let h = hg(IntegrationPlan::default());
    assert!(h.qkzb_residual_step_p(0, LAM, MU, &sp).unwrap().residual <= 1e-6);
    assert!(h.qkzb_residual_step_tau(0, LAM, MU, &sp).unwrap().residual <= 1e-6);
    assert!(h.qkzb_residual_step_1(0, LAM, MU, &sp).unwrap().residual <= 1e-6);
    assert!(h.monodromy_tau_shift_residual(0, LAM, MU, &sp).unwrap().residual <= 1e-5);
}

#[test]
fn offset_independence() {
    let sp = sp11();
    let i = WeightIndex::new(vec![1, 0]);
    let j = WeightIndex::new(vec![0, 1]);
    let at = |off: f64| {
        hg(IntegrationPlan { offsets: Some(vec![off]), m: 128, ..Default::default() })
            .integral(&i, &j, LAM, MU, &sp)
            .unwrap()
            .value
    };
    let (a, b, far) = (at(0.0), at(0.02), at(0.25));
    assert!((a - b).norm() <= 1e-7 * a.norm());
    assert!((a - far).norm() <= 1e-7 * a.norm());
}

#[test]
fn prefactor_swap_symmetry() {
    let sp = sp11();
    let h = hg(IntegrationPlan::default());
    let s = Hypergeometric::new(mp().swapped(), XiSpec::Constant, IntegrationPlan::default(), SeriesConfig::default()).unwrap();
    let rows = vec![WeightIndex::new(vec![1, 0]), WeightIndex::new(vec![0, 1])];
    let (a, _) = h.integrals(&rows, &rows, LAM, MU, &sp).unwrap();
    let (b, _) = s.integrals(&rows, &rows, MU, LAM, &sp).unwrap();
    assert!((&a - b.transpose()).norm() <= 1e-10 * a.norm());
}

#[test]
fn role_swap_monodromy() {
    let sp = sp11();
    let s = Hypergeometric::new(mp().swapped(), XiSpec::Constant, IntegrationPlan::default(), SeriesConfig::default()).unwrap();
    for j in 0..2 {
        assert!(s.monodromy_tau_shift_residual(j, MU, LAM, &sp).unwrap().residual <= 1e-5);
    }
}

#[test]
fn exponential_xi_relations() {
    // exp(2πix/4η) is not 2a-periodic at these weights
    let sp = SystemParams::new(vec![c(0.6, 0.2), c(1.4, -0.2)], vec![c(0.0, 0.0), c(0.31, 0.0)], 1).unwrap();
    let h = Hypergeometric::new(mp(), XiSpec::Exponential { k: 1, n: 1 }, IntegrationPlan::default(), SeriesConfig::default())
        .unwrap();
    assert!(h.qkzb_residual_step_p(0, LAM, MU, &sp).unwrap().residual <= 1e-6);
    assert!(h.qkzb_residual_step_tau(1, LAM, MU, &sp).unwrap().residual <= 1e-6);
    assert!(h.qkzb_residual_step_1(0, LAM, MU, &sp).is_err());
}

#[test]
fn shift_convention_three_points() {
    let sp = SystemParams::new(
        vec![c(0.7, 0.1), c(0.5, -0.2), c(0.8, 0.1)],
        vec![c(0.0, 0.0), c(0.23, 0.0), c(0.61, 0.0)],
        1,
    )
    .unwrap();
    let paper = hg(IntegrationPlan::default());
    for j in 0..3 {
        assert!(paper.qkzb_residual_step_p(j, LAM, MU, &sp).unwrap().residual <= 1e-6);
    }
    let alt = hg(IntegrationPlan::default()).with_convention(ShiftConvention::Alternative);
    assert!(alt.qkzb_residual_step_p(0, LAM, MU, &sp).unwrap().residual > 1e-3);
}

#[test]
fn residue_identity_level_one() {
    let sp = SystemParams::new(vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.31, 0.0)], 2).unwrap();
    assert!(weight_conservation_defect(&[0], &sp).unwrap() <= 1e-10);
    let h = hg(IntegrationPlan { m: 96, ..Default::default() });
    let rho = default_residue_radius(&mp());
    let r = h.numeric_residue_u_b(&[0], LAM, MU, &sp, rho, 16, 1e-6).unwrap();
    let r2 = h.numeric_residue_u_b(&[0], LAM, MU, &sp, rho / 2.0, 16, 1e-6).unwrap();
    let pred = h.predicted_residue(&[0], LAM, MU, &sp).unwrap().unwrap();
    let num = &r.tensor.data;
    assert!((num - &pred.data).norm() <= 1e-4 * pred.data.norm());
    assert!((num - &r2.tensor.data).norm() <= 1e-5 * num.norm());
}
