use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix2;
use crate::model::{rom_rhs, saturate, saturate_gain, PllParams, RomCoefficients, RomState};

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;
/// Accepted residual `max(|dx1/dt|, |dx3/dt| / x2_max)`.
pub const EQUILIBRIUM_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
    /// A zero or purely imaginary eigenvalue; linearisation is inconclusive.
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: RomState,
    pub residual_norm: f64,
    /// `k` such that `x1` lies in the `2 pi k` shifted copy.
    pub branch_index: i64,
    pub stability: Stability,
    pub eigenvalues: [Complex64; 2],
}

/// Analytic Jacobian of `(dx1/dt, dx3/dt)` with respect to `(x1, x3)`.
pub fn jacobian(at: RomState, coeffs: &RomCoefficients, pll: &PllParams) -> Matrix2 {
    let g = saturate_gain(at.x3, pll.x2_max);
    let x2 = saturate(at.x3, pll.x2_max);
    let (s, c) = at.x1.sin_cos();
    let te_prime = (coeffs.te_amp_ki + coeffs.te_amp_kp) * c;
    let d_prime = -coeffs.d_eq_cos_amp * s;
    let m = coeffs.m_eq;
    Matrix2::new(
        0.0,
        g,
        (-te_prime - d_prime * x2) / m,
        -coeffs.damping(at.x1) * g / m,
    )
}

pub fn classify(j: &Matrix2) -> Stability {
    let ev = j.eigenvalues();
    let scale = j.norm_inf().max(f64::MIN_POSITIVE);
    let tiny = 1e-12 * scale;
    if ev.iter().any(|e| e.re.abs() <= tiny) {
        Stability::Marginal
    } else if ev.iter().all(|e| e.re < 0.0) {
        Stability::Stable
    } else if ev.iter().all(|e| e.re > 0.0) {
        Stability::Unstable
    } else {
        Stability::Saddle
    }
}

fn residual(x: RomState, coeffs: &RomCoefficients, pll: &PllParams) -> (f64, [f64; 2]) {
    let d = rom_rhs(x, coeffs, pll);
    (d.dx1.abs().max(d.dx3.abs() / pll.x2_max), [d.dx1, d.dx3])
}

/// Newton iteration on `f(x) = 0` from `guess`. Saddles are returned with
/// their classification; callers that need a stable point must check it.
pub fn find_equilibrium(
    coeffs: &RomCoefficients,
    pll: &PllParams,
    guess: RomState,
) -> Result<Equilibrium> {
    let mut x = guess;
    let (mut res, mut f) = residual(x, coeffs, pll);
    for _ in 0..NEWTON_MAX_ITER {
        if res <= NEWTON_TOL * pll.x2_max.max(1.0) * 1e-2 {
            break;
        }
        let j = jacobian(x, coeffs, pll);
        let scale = j.norm_inf();
        if j.det().abs() <= 1e-12 * scale * scale {
            return Err(Error::NoConvergence {
                iterations: NEWTON_MAX_ITER,
                residual: res,
            });
        }
        let step = j.inverse().expect("non-singular").mul_vec(f);
        x = RomState::new(x.x1 - step[0], x.x3 - step[1]);
        if !x.is_finite() {
            return Err(Error::NoConvergence {
                iterations: NEWTON_MAX_ITER,
                residual: f64::INFINITY,
            });
        }
        (res, f) = residual(x, coeffs, pll);
        if step[0].abs() < 1e-15 * (1.0 + x.x1.abs()) && step[1].abs() < 1e-15 * pll.x2_max {
            break;
        }
    }
    if !(res <= EQUILIBRIUM_RESIDUAL_TOL) {
        return Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITER,
            residual: res,
        });
    }
    let j = jacobian(x, coeffs, pll);
    Ok(Equilibrium {
        state: x,
        residual_norm: res,
        branch_index: (x.x1 / std::f64::consts::TAU).round() as i64,
        stability: classify(&j),
        eigenvalues: j.eigenvalues(),
    })
}
