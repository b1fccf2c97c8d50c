//! Reduced-order PLL dynamics of an aggregated wind power plant.
//!
//! The state is the PLL angle `x1` (rad) and the raw, unsaturated frequency
//! deviation `x3` (rad/s). The saturated rate `x2 = x2_max * tanh(x3 / x2_max)`
//! is algebraic and never stored.
//!
//! All electrical quantities are per-unit on the converter base; impedances
//! carry inductances in seconds (`L_pu = L / Z_base`) so that `omega * L` is a
//! per-unit reactance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on `|M_eq|` below which the inertia is treated as singular.
pub const M_EQ_EPSILON: f64 = 1e-9;

/// Fixed-point settings for the retained-voltage / reactive-current coupling.
pub const FAULT_FP_TOLERANCE: f64 = 1e-10;
pub const FAULT_FP_MAX_ITER: usize = 100;
const FAULT_FP_RELAXATION: f64 = 0.5;

/// Upper bound on the LVRT reactive current, per unit of one turbine.
pub const IQ_LIMIT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomState {
    /// PLL angle (rad).
    pub x1: f64,
    /// Unsaturated frequency deviation (rad/s).
    pub x3: f64,
}

impl RomState {
    pub const fn new(x1: f64, x3: f64) -> Self {
        Self { x1, x3 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x3.is_finite()
    }

    /// Saturated frequency deviation `x2`.
    pub fn x2(&self, x2_max: f64) -> f64 {
        saturate(self.x3, x2_max)
    }

    /// The same state on the branch `k` periods away.
    pub fn shifted(&self, k: i64) -> Self {
        Self::new(self.x1 + k as f64 * std::f64::consts::TAU, self.x3)
    }

    pub(crate) fn to_array(self) -> [f64; 2] {
        [self.x1, self.x3]
    }

    pub(crate) fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Hard frequency saturation `x2_max * tanh(x3 / x2_max)`.
#[inline]
pub fn saturate(x3: f64, x2_max: f64) -> f64 {
    x2_max * (x3 / x2_max).tanh()
}

/// Derivative of [`saturate`] with respect to `x3`, i.e. `sech^2(x3 / x2_max)`.
#[inline]
pub fn saturate_gain(x3: f64, x2_max: f64) -> f64 {
    let c = (x3 / x2_max).cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

/// Normalisation used for distances in state space: the angle in radians and
/// the frequency deviation in units of the saturation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateScale {
    pub angle: f64,
    pub frequency: f64,
}

impl StateScale {
    pub fn scaled(&self, s: RomState) -> [f64; 2] {
        [s.x1 / self.angle, s.x3 / self.frequency]
    }

    pub fn unscaled(&self, p: [f64; 2]) -> RomState {
        RomState::new(p[0] * self.angle, p[1] * self.frequency)
    }

    pub fn distance(&self, a: RomState, b: RomState) -> f64 {
        let d1 = (a.x1 - b.x1) / self.angle;
        let d3 = (a.x3 - b.x3) / self.frequency;
        d1.hypot(d3)
    }

    pub fn norm_inf(&self, s: RomState) -> f64 {
        (s.x1 / self.angle).abs().max((s.x3 / self.frequency).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    /// Proportional gain (rad/s per pu voltage).
    pub kp: f64,
    /// Integral gain (rad/s^2 per pu voltage).
    pub ki: f64,
    /// Saturation bound on the frequency deviation (rad/s).
    pub x2_max: f64,
}

impl PllParams {
    pub fn new(kp: f64, ki: f64, x2_max: f64) -> Result<Self> {
        let p = Self { kp, ki, x2_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("x2_max", self.x2_max)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> StateScale {
        StateScale {
            angle: 1.0,
            frequency: self.x2_max,
        }
    }
}

/// Thevenin equivalent of the network seen by the aggregated converter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEquivalent {
    pub r_lg: f64,
    pub l_g: f64,
    pub v_g: f64,
    pub omega_0: f64,
    pub omega_g: f64,
}

impl GridEquivalent {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_lg.is_finite() && self.r_lg >= 0.0) {
            return Err(Error::invalid(
                "r_lg",
                format!("must be >= 0, got {}", self.r_lg),
            ));
        }
        for (name, v) in [
            ("l_g", self.l_g),
            ("v_g", self.v_g),
            ("omega_0", self.omega_0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !self.omega_g.is_finite() {
            return Err(Error::invalid("omega_g", "must be finite"));
        }
        Ok(())
    }

    /// `Z_g = r_Lg + j omega_0 L_g`.
    pub fn z_g(&self) -> Complex64 {
        Complex64::new(self.r_lg, self.omega_0 * self.l_g)
    }

    /// Scale both series elements, e.g. to emulate a weaker grid.
    pub fn with_impedance_multiplier(mut self, factor: f64) -> Self {
        self.r_lg *= factor;
        self.l_g *= factor;
        self
    }
}

/// One interval of the input schedule on which every input is affine in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    /// Aggregated active current at `start` (pu).
    pub id0: f64,
    /// Aggregated reactive current at `start` (pu).
    pub iq0: f64,
    pub did_dt: f64,
    pub diq_dt: f64,
    /// Voltage magnitude behind the network impedance (pu).
    pub v_f: f64,
    pub dv_f_dt: f64,
    pub domega_g_dt: f64,
}

impl Segment {
    pub fn constant(start: f64, id: f64, iq: f64, v_f: f64) -> Self {
        Self {
            start,
            id0: id,
            iq0: iq,
            did_dt: 0.0,
            diq_dt: 0.0,
            v_f,
            dv_f_dt: 0.0,
            domega_g_dt: 0.0,
        }
    }

    pub fn id_at(&self, t: f64) -> f64 {
        self.id0 + self.did_dt * (t - self.start)
    }

    pub fn iq_at(&self, t: f64) -> f64 {
        self.iq0 + self.diq_dt * (t - self.start)
    }

    pub fn v_f_at(&self, t: f64) -> f64 {
        self.v_f + self.dv_f_dt * (t - self.start)
    }

    pub fn is_autonomous(&self) -> bool {
        self.did_dt == 0.0 && self.diq_dt == 0.0 && self.dv_f_dt == 0.0 && self.domega_g_dt == 0.0
    }
}

/// Piecewise-affine converter currents and retained voltage over `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSchedule {
    segments: Vec<Segment>,
    end: f64,
}

impl InjectionSchedule {
    pub fn new(segments: Vec<Segment>, end: f64) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidSchedule("no segments".into()))?;
        if !(end > first.start) {
            return Err(Error::InvalidSchedule(format!(
                "end {end} s must follow the first segment start {} s",
                first.start
            )));
        }
        for w in segments.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::InvalidSchedule(format!(
                    "segment starts must be strictly increasing ({} then {})",
                    w[0].start, w[1].start
                )));
            }
        }
        if segments.last().is_some_and(|s| s.start >= end) {
            return Err(Error::InvalidSchedule(
                "last segment starts after the window end".into(),
            ));
        }
        Ok(Self { segments, end })
    }

    /// A single constant segment over `[start, end]`.
    pub fn constant(start: f64, end: f64, id: f64, iq: f64, v_f: f64) -> Result<Self> {
        Self::new(vec![Segment::constant(start, id, iq, v_f)], end)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// End time of segment `i`.
    pub fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map_or(self.end, |s| s.start)
    }

    /// Segment active at `t`; a boundary instant belongs to the later segment.
    pub fn segment_at(&self, t: f64) -> Result<(usize, &Segment)> {
        if !(t >= self.start() && t <= self.end) {
            return Err(Error::OutOfWindow {
                t,
                start: self.start(),
                end: self.end,
            });
        }
        let i = self.segments.partition_point(|s| s.start <= t) - 1;
        Ok((i, &self.segments[i]))
    }
}

/// Coefficients of the second-order angle dynamics
/// `M x3' = T_m - T_e(x1) - D(x1) x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomCoefficients {
    pub m_eq: f64,
    pub t_m_eq: f64,
    /// `ki * V_f`, multiplies `sin x1`.
    pub te_amp_ki: f64,
    /// `kp * dV_f/dt`, multiplies `sin x1`.
    pub te_amp_kp: f64,
    /// `M_eq * d(omega_g)/dt`.
    pub te_offset: f64,
    pub d_eq_const: f64,
    pub d_eq_cos_amp: f64,
}

impl RomCoefficients {
    pub fn electrical_torque(&self, x1: f64) -> f64 {
        (self.te_amp_ki + self.te_amp_kp) * x1.sin() + self.te_offset
    }

    pub fn damping(&self, x1: f64) -> f64 {
        self.d_eq_cos_amp * x1.cos() + self.d_eq_const
    }
}

/// Coefficients for a given segment at time `t`.
///
/// Products such as `r_Lg * iq` are differentiated with constant `r_Lg`, `L_g`;
/// second derivatives vanish because every input is affine on the segment.
pub fn segment_coefficients(
    pll: &PllParams,
    grid: &GridEquivalent,
    seg: &Segment,
    t: f64,
) -> Result<RomCoefficients> {
    let (kp, ki) = (pll.kp, pll.ki);
    let (r, l) = (grid.r_lg, grid.l_g);
    let id = seg.id_at(t);
    let iq = seg.iq_at(t);
    let v_f = seg.v_f_at(t);
    let omega_g = grid.omega_g + seg.domega_g_dt * (t - seg.start);

    let m_eq = 1.0 - kp * l * id;
    if m_eq.abs() < M_EQ_EPSILON {
        return Err(Error::SingularInertia { m_eq });
    }

    let d_r_iq = r * seg.diq_dt;
    let d_l_iq = l * seg.diq_dt;
    let d_l_id = l * seg.did_dt;
    let dd_l_iq = 0.0;

    let t_m_eq =
        kp * (d_r_iq + dd_l_iq + d_l_id * omega_g) + ki * (r * iq + d_l_iq + l * id * omega_g);

    Ok(RomCoefficients {
        m_eq,
        t_m_eq,
        te_amp_ki: ki * v_f,
        te_amp_kp: kp * seg.dv_f_dt,
        te_offset: m_eq * seg.domega_g_dt,
        d_eq_const: -kp * d_l_id - ki * l * id,
        d_eq_cos_amp: kp * v_f,
    })
}

pub fn compute_coefficients(
    pll: &PllParams,
    grid: &GridEquivalent,
    sched: &InjectionSchedule,
    t: f64,
) -> Result<RomCoefficients> {
    let (_, seg) = sched.segment_at(t)?;
    segment_coefficients(pll, grid, seg, t)
}

/// Time derivative of the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RomDerivative {
    pub dx1: f64,
    pub dx3: f64,
}

#[inline]
pub fn rom_rhs(state: RomState, coeffs: &RomCoefficients, pll: &PllParams) -> RomDerivative {
    let x2 = saturate(state.x3, pll.x2_max);
    let forcing =
        coeffs.t_m_eq - coeffs.electrical_torque(state.x1) - coeffs.damping(state.x1) * x2;
    RomDerivative {
        dx1: x2,
        dx3: forcing / coeffs.m_eq,
    }
}

/// Inputs to the faulted operating point computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultInputs {
    /// Fault impedance (pu). An infinite value means no fault.
    pub z_f: Complex64,
    /// Source voltage phasor in the converter frame (pu).
    pub vg_dq: Complex64,
    /// Per-turbine current used to start the iteration (pu).
    pub i_c: Complex64,
    pub k_factor: f64,
    /// Per-turbine current limit (pu).
    pub i_max: f64,
    /// Number of aggregated turbines carrying the per-turbine current.
    pub n_turbines: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultOperatingPoint {
    /// Retained terminal voltage magnitude (pu).
    pub v_f: f64,
    /// Per-turbine active current (pu).
    pub id_c: f64,
    /// Per-turbine reactive current (pu).
    pub iq_c: f64,
    pub iterations: usize,
}

/// LVRT current split for a retained voltage: `iq = min(K v, 1)`,
/// `id = sqrt(i_max^2 - iq^2)`.
pub fn lvrt_currents(v_pcc: f64, k_factor: f64, i_max: f64) -> (f64, f64) {
    let iq = (k_factor * v_pcc).clamp(0.0, IQ_LIMIT.min(i_max));
    let id = (i_max * i_max - iq * iq).max(0.0).sqrt();
    (id, iq)
}

/// Terminal voltage and LVRT currents during a fault behind `z_f`.
///
/// The retained voltage depends on the injected current and the reactive
/// current depends on the retained voltage; the loop is closed by a relaxed
/// fixed-point iteration on the voltage magnitude.
pub fn fault_conditions(grid: &GridEquivalent, inp: &FaultInputs) -> Result<FaultOperatingPoint> {
    if !(inp.i_max > 0.0) {
        return Err(Error::invalid("i_max", "must be > 0"));
    }
    let z_g = grid.z_g();
    let divider = if inp.z_f.re.is_finite() && inp.z_f.im.is_finite() {
        let den = z_g + inp.z_f;
        if den.norm() == 0.0 {
            return Err(Error::DegenerateNetwork);
        }
        (inp.z_f / den).norm()
    } else {
        1.0
    };

    let retained = |id: f64, iq: f64| -> f64 {
        let i_c = Complex64::new(id, iq) * inp.n_turbines;
        divider * (inp.vg_dq + i_c * z_g).norm()
    };

    let mut v = retained(inp.i_c.re, inp.i_c.im);
    let mut last_update = f64::INFINITY;
    let mut prev_update = 0.0;
    let mut relax = FAULT_FP_RELAXATION;
    for it in 1..=FAULT_FP_MAX_ITER {
        let (id, iq) = lvrt_currents(v, inp.k_factor, inp.i_max);
        let target = retained(id, iq);
        let update = target - v;
        if update.abs() <= FAULT_FP_TOLERANCE {
            let (id, iq) = lvrt_currents(target, inp.k_factor, inp.i_max);
            return Ok(FaultOperatingPoint {
                v_f: target,
                id_c: id,
                iq_c: iq,
                iterations: it,
            });
        }
        // An overshooting update means the local slope is steep and negative;
        // more damping restores contraction.
        if update * prev_update < 0.0 {
            relax *= 0.5;
        }
        v += relax * update;
        prev_update = update;
        last_update = update.abs();
    }
    Err(Error::NonConvergent {
        iterations: FAULT_FP_MAX_ITER,
        last_update,
    })
}
