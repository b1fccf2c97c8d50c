use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{par_map, Equilibrium, Regime};
use crate::error::{Error, Result};
use crate::integrate::{integrate_autonomous, SolverSettings};
use crate::model::RomState;

/// "Converged" means the trajectory enters the scaled ball of `radius` around
/// the equilibrium and stays there for at least `dwell` before the horizon ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceCriterion {
    pub radius: f64,
    pub dwell: f64,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            radius: 1e-3,
            dwell: 0.1,
        }
    }
}

/// Forward-simulates `x0` for `horizon` and applies the criterion. Integration
/// failures count as not converged.
pub fn converges(
    x0: RomState,
    eq: &Equilibrium,
    regime: &Regime,
    horizon: f64,
    solver: &SolverSettings,
    crit: &ConvergenceCriterion,
) -> bool {
    let Ok(tr) = integrate_autonomous(x0, horizon, &regime.coeffs, &regime.pll, solver) else {
        return false;
    };
    let scale = regime.pll.scale();
    let last_outside = tr
        .samples
        .iter()
        .rev()
        .find(|s| scale.distance(s.state, eq.state) > crit.radius)
        .map(|s| s.t);
    match last_outside {
        None => true,
        Some(t) => t <= horizon - crit.dwell,
    }
}

/// Axis-aligned rectangle in raw state coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub x1: [f64; 2],
    pub x3: [f64; 2],
}

impl StateBox {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("x1 range", self.x1), ("x3 range", self.x3)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(
                    if name == "x1 range" {
                        "box.x1"
                    } else {
                        "box.x3"
                    },
                    format!("needs finite bounds with positive extent, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: RomState) -> bool {
        (self.x1[0]..=self.x1[1]).contains(&x.x1) && (self.x3[0]..=self.x3[1]).contains(&x.x3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub region: StateBox,
    pub n: [usize; 2],
    pub horizon: f64,
    /// Row-major over `x3` then `x1`: index `j * n[0] + i`.
    pub points: Vec<RomState>,
    pub converged: Vec<bool>,
}

impl OracleGrid {
    pub fn converged_fraction(&self) -> f64 {
        self.converged.iter().filter(|&&c| c).count() as f64 / self.converged.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1_rad,x3_rad_per_s,converged")?;
        for (p, c) in self.points.iter().zip(&self.converged) {
            writeln!(w, "{:.12e},{:.12e},{}", p.x1, p.x3, u8::from(*c))?;
        }
        Ok(())
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Labels a uniform grid over `region` by forward simulation.
pub fn brute_force_roa(
    region: StateBox,
    n: [usize; 2],
    horizon: f64,
    eq: &Equilibrium,
    regime: &Regime,
    solver: &SolverSettings,
    crit: &ConvergenceCriterion,
) -> Result<OracleGrid> {
    region.validate()?;
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::invalid(
            "resolution",
            "needs at least one point per axis",
        ));
    }
    if !(horizon > crit.dwell) {
        return Err(Error::invalid(
            "horizon",
            "must exceed the convergence dwell",
        ));
    }
    if !region.contains(eq.state) {
        return Err(Error::invalid("box", "must contain the equilibrium"));
    }
    let points: Vec<RomState> = axis(region.x3[0], region.x3[1], n[1])
        .flat_map(|x3| axis(region.x1[0], region.x1[1], n[0]).map(move |x1| RomState::new(x1, x3)))
        .collect();
    let converged = par_map(&points, |&p| {
        converges(p, eq, regime, horizon, solver, crit)
    });
    Ok(OracleGrid {
        region,
        n,
        horizon,
        points,
        converged,
    })
}
