//! Seeded generation of parameter sets that satisfy the genericity conditions
//! with a margin and admit a feasible integration contour.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qkzb_core::conditions::{check_conditions, DEFAULT_BOUND, DEFAULT_DELTA};
use qkzb_core::contour::{plan_contour, IntegrationPlan};
use qkzb_core::{ModularParams, SystemParams, C64};

use crate::config::{Cplx, ModularCfg, PointCfg, SystemCfg, SCHEMA};

pub const MIN_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Non-integral weights with Λ_1 + Λ_2 = 2, n = 2, l = 1.
    Generic,
    /// Λ = (1, 1), l = 1.
    IntegralWeights,
    /// Λ = (1, 1), l = 2, the setting of the residue task.
    ResidueCase,
}

impl Profile {
    /// Conditions that the profile violates by construction: at Λ = (1, 1) and
    /// l = 2 the shifted weight 2a_k − 2η vanishes, which is the pole the
    /// residue task studies.
    pub fn exempt(self) -> &'static [&'static str] {
        match self {
            Profile::ResidueCase => &["a's"],
            _ => &[],
        }
    }
}

#[derive(Serialize)]
/// A loadable configuration fragment; the rest of the config takes defaults.
pub struct Fragment {
    pub schema: &'static str,
    pub seed: u64,
    pub modular: ModularCfg,
    pub system: SystemCfg,
    pub point: PointCfg,
}

/// Returns the fragment, the number of draws it took and its condition margin.
pub fn generate(profile: Profile, seed: u64) -> Result<(Fragment, usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_ATTEMPTS {
        let mut u = || rng.random::<f64>();
        // small |η| regime, moduli with a little real part
        let tau = Cplx::new(0.2 * u() - 0.1, 0.5 + 0.4 * u());
        let p = Cplx::new(0.2 * u() - 0.1, 0.4 + 0.4 * u());
        let eta = Cplx::new(0.0, -(0.02 + 0.03 * u()));
        let z = vec![Cplx::new(0.0, 0.0), Cplx::new(0.15 + 0.7 * u(), 0.1 * u() - 0.05)];
        let (lambda, l) = match profile {
            Profile::Generic => {
                // Λ_1 + Λ_2 = 2l keeps the zero-weight subspace in play
                let l1 = Cplx::new(0.3 + 1.4 * u(), 0.2 * u() - 0.1);
                (vec![l1, Cplx::new(2.0 - l1.re, -l1.im)], 1)
            }
            Profile::IntegralWeights => (vec![Cplx::new(1.0, 0.0); 2], 1),
            Profile::ResidueCase => (vec![Cplx::new(1.0, 0.0); 2], 2),
        };
        let point = PointCfg { lambda: Cplx::new(u() - 0.5, 0.2 * u() - 0.1), mu: Cplx::new(u() - 0.5, 0.2 * u() - 0.1) };

        let Ok(mp) = ModularParams::new(tau.c(), p.c(), eta.c()) else { continue };
        let zc: Vec<C64> = z.iter().map(|x| x.c()).collect();
        let Ok(sp) = SystemParams::new(lambda.iter().map(|x| x.c()).collect(), zc.clone(), l) else { continue };
        let report = check_conditions(&sp, &mp, DEFAULT_BOUND, DEFAULT_DELTA);
        let kept = report.entries.iter().filter(|e| !profile.exempt().contains(&e.name));
        let margin = kept.clone().filter_map(|e| e.min_distance).fold(f64::INFINITY, f64::min);
        if kept.clone().any(|e| e.violated) || margin < MIN_MARGIN {
            continue;
        }
        if plan_contour(&IntegrationPlan::default(), &zc, &sp.a(mp.eta()), &mp, l).is_err() {
            continue;
        }
        return Ok((Fragment {
            schema: SCHEMA,
            seed,
            modular: ModularCfg { tau, p, eta },
            system: SystemCfg { lambda, z, l },
            point,
        }, attempt, margin));
    }
    Err(format!("no admissible parameters after {MAX_ATTEMPTS} attempts"))
}
