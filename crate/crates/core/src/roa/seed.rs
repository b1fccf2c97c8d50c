use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{
    converges, jacobian, par_map, solve_lyapunov, ConvergenceCriterion, Equilibrium, Regime,
    Stability,
};
use crate::error::{Error, Result};
use crate::integrate::SolverSettings;
use crate::linalg::Matrix2;
use crate::model::RomState;

/// Settings for picking the Lyapunov level set that seeds the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSettings {
    pub q: Matrix2,
    pub n_points: usize,
    /// Half-width of the first trial ellipse along `x1` (rad).
    pub initial_semi_axis: f64,
    pub max_halvings: usize,
    /// Forward time allowed for each seed to reach the convergence ball (s).
    pub verify_horizon: f64,
    /// Also require `dV/dt < 0` on a ring four times denser than the seeds,
    /// which makes the ellipse forward invariant.
    pub require_decrease: bool,
    pub criterion: ConvergenceCriterion,
}

impl Default for SeedSettings {
    fn default() -> Self {
        Self {
            q: Matrix2::IDENTITY,
            n_points: 256,
            initial_semi_axis: 0.2,
            max_halvings: 10,
            verify_horizon: 3.0,
            require_decrease: true,
            criterion: ConvergenceCriterion::default(),
        }
    }
}

impl SeedSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 16 {
            return Err(Error::invalid("n_seeds", "needs at least 16 points"));
        }
        if !(self.initial_semi_axis > 0.0 && self.verify_horizon > self.criterion.dwell) {
            return Err(Error::invalid(
                "seed",
                "semi-axis must be positive and the verify horizon must exceed the dwell",
            ));
        }
        if !(self.criterion.radius > 0.0 && self.criterion.dwell >= 0.0) {
            return Err(Error::invalid(
                "convergence",
                "radius must be > 0 and dwell >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeed {
    pub p: Matrix2,
    pub q: Matrix2,
    pub level_c: f64,
    pub center: RomState,
    /// Angles in whitened coordinates, ascending in `[0, 2 pi)`.
    pub angles: Vec<f64>,
    pub points: Vec<RomState>,
    /// How many times the level was halved before every check passed.
    pub halvings: usize,
}

impl LyapunovSeed {
    pub fn point_at(&self, theta: f64) -> RomState {
        ellipse_point(self.center, &whitening(&self.p), self.level_c, theta)
    }

    /// `(x - x0)^T P (x - x0)`.
    pub fn value(&self, x: RomState) -> f64 {
        self.p
            .quadratic_form([x.x1 - self.center.x1, x.x3 - self.center.x3])
    }

    pub fn contains(&self, x: RomState) -> bool {
        self.value(x) <= self.level_c
    }
}

/// `L^{-T}` for `P = L L^T`.
fn whitening(p: &Matrix2) -> Matrix2 {
    p.cholesky()
        .and_then(|l| l.transpose().inverse())
        .expect("P is positive definite")
}

fn ellipse_point(center: RomState, w: &Matrix2, c: f64, theta: f64) -> RomState {
    let r = c.sqrt();
    let d = w.mul_vec([r * theta.cos(), r * theta.sin()]);
    RomState::new(center.x1 + d[0], center.x3 + d[1])
}

/// `n` points on `(x - x0)^T P (x - x0) = c`, uniform in the whitened angle.
pub fn ellipse_points(
    center: RomState,
    p: &Matrix2,
    c: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<RomState>)> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("level_c", "must be finite and > 0"));
    }
    if !p.is_symmetric(1e-14) || p.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let w = whitening(p);
    let angles: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    let points = angles
        .iter()
        .map(|&t| ellipse_point(center, &w, c, t))
        .collect();
    Ok((angles, points))
}

fn lyapunov_rate(p: &Matrix2, center: RomState, x: RomState, regime: &Regime) -> f64 {
    let d = [x.x1 - center.x1, x.x3 - center.x3];
    let f = regime.rhs(x);
    let pd = p.mul_vec(d);
    2.0 * (pd[0] * f.dx1 + pd[1] * f.dx3)
}

/// Seeds on the level `c`, each verified to converge forward to `eq`.
pub fn seed_level_set(
    eq: &Equilibrium,
    p: &Matrix2,
    q: &Matrix2,
    level_c: f64,
    regime: &Regime,
    solver: &SolverSettings,
    settings: &SeedSettings,
) -> Result<LyapunovSeed> {
    settings.validate()?;
    let n = settings.n_points;
    let (angles, points) = ellipse_points(eq.state, p, level_c, n)?;

    let mut failed = 0;
    if settings.require_decrease {
        let (_, ring) = ellipse_points(eq.state, p, level_c, 4 * n)?;
        let rising = ring
            .iter()
            .filter(|&&x| !(lyapunov_rate(p, eq.state, x, regime) < 0.0))
            .count();
        if rising > 0 {
            return Err(Error::SeedNotAttracted {
                failed: rising,
                total: ring.len(),
            });
        }
    }
    let ok = par_map(&points, |&x| {
        converges(
            x,
            eq,
            regime,
            settings.verify_horizon,
            solver,
            &settings.criterion,
        )
    });
    failed += ok.iter().filter(|&&c| !c).count();
    if failed > 0 {
        return Err(Error::SeedNotAttracted { failed, total: n });
    }
    Ok(LyapunovSeed {
        p: *p,
        q: *q,
        level_c,
        center: eq.state,
        angles,
        points,
        halvings: 0,
    })
}

/// Solves the Lyapunov equation at `eq` and halves the level until every
/// check in [`seed_level_set`] passes.
pub fn seed_with_auto_level(
    eq: &Equilibrium,
    regime: &Regime,
    solver: &SolverSettings,
    settings: &SeedSettings,
) -> Result<LyapunovSeed> {
    settings.validate()?;
    let a = jacobian(eq.state, &regime.coeffs, &regime.pll);
    if eq.stability != Stability::Stable {
        let ev = a.eigenvalues();
        return Err(Error::NotHurwitz {
            re1: ev[0].re,
            re2: ev[1].re,
        });
    }
    let p = solve_lyapunov(&a, &settings.q)?;
    // The x1 half-width of {x^T P x = c} is sqrt(c * (P^-1)_11).
    let p_inv_11 = p.inverse().ok_or(Error::NotPositiveDefinite)?.get(0, 0);
    let mut c = settings.initial_semi_axis.powi(2) / p_inv_11;
    let mut last = None;
    for halvings in 0..=settings.max_halvings {
        match seed_level_set(eq, &p, &settings.q, c, regime, solver, settings) {
            Ok(mut seed) => {
                seed.halvings = halvings;
                return Ok(seed);
            }
            Err(e @ Error::SeedNotAttracted { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
        c *= 0.5;
    }
    Err(last.expect("at least one attempt"))
}
