//! Stability boundaries of the post-disturbance regime: equilibrium, Lyapunov
//! seed set, reverse-time boundary propagation, containment, clearing-time
//! search and a brute-force forward-simulation oracle.

mod cct;
mod equilibrium;
mod lyapunov;
mod oracle;
pub mod polygon;
mod seed;
mod tlroa;

pub use cct::{critical_clearing_time, CctOutcome, CctSettings};
pub use equilibrium::{
    classify, find_equilibrium, jacobian, Equilibrium, Stability, EQUILIBRIUM_RESIDUAL_TOL,
};
pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use oracle::{brute_force_roa, converges, ConvergenceCriterion, OracleGrid, StateBox};
pub use seed::{ellipse_points, seed_level_set, seed_with_auto_level, LyapunovSeed, SeedSettings};
pub use tlroa::{
    compute_tlroa, read_polyline_csv, RefineSettings, RefinementStats, TlroaBoundary,
    BOUNDARY_HEADER, DEFAULT_EDGE_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::model::{rom_rhs, PllParams, RomCoefficients, RomDerivative, RomState};

/// A frozen, autonomous operating regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub coeffs: RomCoefficients,
    pub pll: PllParams,
}

impl Regime {
    pub fn new(coeffs: RomCoefficients, pll: PllParams) -> Self {
        Self { coeffs, pll }
    }

    pub fn rhs(&self, x: RomState) -> RomDerivative {
        rom_rhs(x, &self.coeffs, &self.pll)
    }
}

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
