use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{Regime, TlroaBoundary};
use crate::error::{Error, Result};
use crate::integrate::{integrate_autonomous, interpolate, SolverSettings};
use crate::model::RomState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CctSettings {
    /// Longest fault duration searched (s).
    pub window: f64,
    /// Width of the final bracket on the exit time (s).
    pub time_tolerance: f64,
}

impl Default for CctSettings {
    fn default() -> Self {
        Self {
            window: 3.0,
            time_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CctOutcome {
    /// The sustained-fault trajectory leaves the boundary `cct` seconds after inception.
    Finite { cct: f64, exit_point: RomState },
    /// It stays inside for the whole search window.
    Infinite { window: f64 },
}

impl CctOutcome {
    pub fn seconds(&self) -> f64 {
        match *self {
            CctOutcome::Finite { cct, .. } => cct,
            CctOutcome::Infinite { .. } => f64::INFINITY,
        }
    }
}

/// First exit of the sustained-fault trajectory from `boundary`.
///
/// `pre_fault` is the state at fault inception. It is moved onto the branch
/// of the boundary's equilibrium so both live in the same angle frame.
pub fn critical_clearing_time(
    pre_fault: RomState,
    fault: &Regime,
    boundary: &TlroaBoundary,
    solver: &SolverSettings,
    settings: &CctSettings,
) -> Result<CctOutcome> {
    if !(settings.window > 0.0 && settings.time_tolerance > 0.0) {
        return Err(Error::invalid("cct", "window and tolerance must be > 0"));
    }
    let k = ((boundary.equilibrium.state.x1 - pre_fault.x1) / TAU).round() as i64;
    let x0 = pre_fault.shifted(k);
    let index = boundary.index();
    let inside = |x: RomState| index.contains(boundary.scale.scaled(x));
    if !inside(x0) {
        return Err(Error::ImmediateExit);
    }

    let tr = integrate_autonomous(x0, settings.window, &fault.coeffs, &fault.pll, solver)?;
    let Some(i) = tr.samples.iter().position(|s| !inside(s.state)) else {
        return Ok(CctOutcome::Infinite {
            window: settings.window,
        });
    };
    let (a, b) = (&tr.samples[i - 1], &tr.samples[i]);
    let (mut lo, mut hi) = (a.t, b.t);
    let mut exit = b.state;
    while hi - lo > settings.time_tolerance {
        let mid = 0.5 * (lo + hi);
        let x = interpolate(a, b, &fault.coeffs, &fault.pll, mid);
        if inside(x) {
            lo = mid;
        } else {
            hi = mid;
            exit = x;
        }
    }
    Ok(CctOutcome::Finite {
        cct: hi,
        exit_point: exit,
    })
}
