//! Explicit Runge-Kutta integration of the reduced-order model.
//!
//! Forward runs follow a piecewise input schedule and stop exactly on every
//! segment boundary. Reverse runs integrate the negated field of a frozen,
//! autonomous post-disturbance regime.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    fault_conditions, rom_rhs, saturate, segment_coefficients, FaultInputs, GridEquivalent,
    InjectionSchedule, PllParams, RomCoefficients, RomState, Segment, StateScale, M_EQ_EPSILON,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    /// Classic fourth-order Runge-Kutta with a step no larger than `step`.
    Rk4 { step: f64 },
    /// Runge-Kutta-Fehlberg 4(5), advancing with the fifth-order solution.
    Rkf45(Adaptive),
    /// Dormand-Prince 8(5,3).
    Dop853(Adaptive),
}

/// Error control shared by the embedded methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adaptive {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Adaptive {
    fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            h_init: 1e-4,
            h_min: 1e-12,
            h_max: 1e-2,
        }
    }

    fn is_valid(&self) -> bool {
        self.rtol > 0.0
            && self.atol > 0.0
            && self.h_min > 0.0
            && self.h_init >= self.h_min
            && self.h_max >= self.h_init
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub method: Method,
    /// Spacing of dense-output samples (s).
    pub sample_interval: f64,
    /// Reverse runs fail once the scaled infinity norm of the state exceeds this.
    pub escape_radius: f64,
}

/// Boundary vertices can sit closer to the saddle's stable manifold than a
/// looser tolerance resolves, and then fall on the wrong side of it.
impl Default for SolverSettings {
    fn default() -> Self {
        Self::dop853(1e-12, 1e-14)
    }
}

impl SolverSettings {
    fn with_method(method: Method) -> Self {
        Self {
            method,
            sample_interval: 1e-3,
            escape_radius: 1e3,
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self::with_method(Method::Rk4 { step })
    }

    pub fn rkf45(rtol: f64, atol: f64) -> Self {
        Self::with_method(Method::Rkf45(Adaptive::new(rtol, atol)))
    }

    pub fn dop853(rtol: f64, atol: f64) -> Self {
        Self::with_method(Method::Dop853(Adaptive::new(rtol, atol)))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::Rk4 { step } => step > 0.0 && step.is_finite(),
            Method::Rkf45(a) | Method::Dop853(a) => a.is_valid(),
        };
        if !ok {
            return Err(Error::invalid(
                "solver",
                "step sizes and tolerances must be positive",
            ));
        }
        if !(self.sample_interval > 0.0 && self.escape_radius > 0.0) {
            return Err(Error::invalid(
                "solver",
                "sample interval and escape radius must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub max_error_estimate: f64,
    /// Largest `|x2|` seen at any step endpoint or sample.
    pub max_abs_x2: f64,
}

impl SolverStats {
    pub fn merge(&mut self, other: &SolverStats) {
        self.steps += other.steps;
        self.rejected += other.rejected;
        self.max_error_estimate = self.max_error_estimate.max(other.max_error_estimate);
        self.max_abs_x2 = self.max_abs_x2.max(other.max_abs_x2);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: RomState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub direction: Direction,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn final_state(&self) -> RomState {
        self.samples.last().expect("trajectory has samples").state
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    /// Samples whose saturated rate exceeds the bound.
    pub fn saturation_violations(&self, x2_max: f64) -> usize {
        self.samples
            .iter()
            .filter(|s| s.state.x2(x2_max).abs() > x2_max)
            .count()
    }

    /// CSV with columns `t_s,x1_rad,x2_rad_per_s,x3_rad_per_s`.
    pub fn write_csv<W: Write>(&self, mut w: W, x2_max: f64) -> std::io::Result<()> {
        writeln!(w, "t_s,x1_rad,x2_rad_per_s,x3_rad_per_s")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{}",
                s.t,
                s.state.x1,
                s.state.x2(x2_max),
                s.state.x3
            )?;
        }
        Ok(())
    }
}

/// PLL parameters together with the grid equivalent they act against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomSystem {
    pub pll: PllParams,
    pub grid: GridEquivalent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    FaultApply { z_f: Complex64 },
    FaultClear,
    RampEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    events: Vec<Event>,
}

impl EventSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        if events.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidSchedule(
                "event times must be strictly increasing".into(),
            ));
        }
        let mut faulted = false;
        for e in &events {
            match e.kind {
                EventKind::FaultApply { .. } if faulted => {
                    return Err(Error::InvalidSchedule(
                        "fault applied twice without clearing".into(),
                    ))
                }
                EventKind::FaultApply { .. } => faulted = true,
                EventKind::FaultClear if !faulted => {
                    return Err(Error::InvalidSchedule(
                        "FaultClear without a preceding FaultApply".into(),
                    ))
                }
                EventKind::FaultClear => faulted = false,
                EventKind::RampEnd => {}
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Events plus the piecewise inputs they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: EventSchedule,
    pub injection: InjectionSchedule,
}

impl Schedule {
    /// No events: constant inputs over the window.
    pub fn steady(injection: InjectionSchedule) -> Self {
        Self {
            events: EventSchedule::default(),
            injection,
        }
    }
}

/// Fault event and the converter's ride-through settings. Impedances in pu.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub apply_at: f64,
    pub clear_at: f64,
    pub z_f: Complex64,
    pub k_factor: f64,
    /// Per-turbine current limit (pu).
    pub i_max: f64,
    /// Active-current recovery ramp per turbine (pu/s).
    pub ramp_rate: f64,
}

/// Pre-fault loading of one turbine and the simulation window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreFaultPoint {
    pub id_c: f64,
    pub iq_c: f64,
    pub n_turbines: f64,
    /// Pre-fault PLL angle relative to the source (rad).
    pub delta: f64,
    pub start: f64,
    pub end: f64,
}

/// Duration of a recovery ramp from `from` to `to` at `rate` (pu/s).
pub fn ramp_duration(from: f64, to: f64, rate: f64) -> f64 {
    (to - from).abs() / rate
}

/// Segment values during a sustained fault, aggregated over the plant.
pub fn fault_segment(
    grid: &GridEquivalent,
    fault: &FaultSpec,
    pre: &PreFaultPoint,
    start: f64,
) -> Result<Segment> {
    let op = fault_conditions(
        grid,
        &FaultInputs {
            z_f: fault.z_f,
            vg_dq: Complex64::from_polar(grid.v_g, -pre.delta),
            i_c: Complex64::new(pre.id_c, pre.iq_c),
            k_factor: fault.k_factor,
            i_max: fault.i_max,
            n_turbines: pre.n_turbines,
        },
    )?;
    Ok(Segment::constant(
        start,
        pre.n_turbines * op.id_c,
        pre.n_turbines * op.iq_c,
        op.v_f,
    ))
}

/// Pre-fault, faulted and recovery segments for a single fault event.
pub fn build_schedule(
    grid: &GridEquivalent,
    fault: &FaultSpec,
    pre: &PreFaultPoint,
) -> Result<Schedule> {
    if !(fault.clear_at > fault.apply_at)
        || !(fault.apply_at > pre.start)
        || !(fault.clear_at < pre.end)
    {
        return Err(Error::InvalidFaultWindow {
            apply: fault.apply_at,
            clear: fault.clear_at,
        });
    }
    if !(fault.ramp_rate > 0.0) {
        return Err(Error::invalid("ramp_rate", "must be > 0"));
    }
    let n = pre.n_turbines;
    let pre_seg = Segment::constant(pre.start, n * pre.id_c, n * pre.iq_c, grid.v_g);
    let fault_seg = fault_segment(grid, fault, pre, fault.apply_at)?;

    let id_fault = fault_seg.id0 / n;
    let ramp = ramp_duration(id_fault, pre.id_c, fault.ramp_rate);
    let slope = (pre.id_c - id_fault).signum() * fault.ramp_rate * n;

    let mut events = vec![
        Event {
            t: fault.apply_at,
            kind: EventKind::FaultApply { z_f: fault.z_f },
        },
        Event {
            t: fault.clear_at,
            kind: EventKind::FaultClear,
        },
    ];
    let mut segments = vec![pre_seg, fault_seg];
    if ramp > 0.0 {
        segments.push(Segment {
            did_dt: slope,
            ..Segment::constant(fault.clear_at, n * id_fault, n * pre.iq_c, grid.v_g)
        });
        let ramp_end = fault.clear_at + ramp;
        if ramp_end < pre.end {
            events.push(Event {
                t: ramp_end,
                kind: EventKind::RampEnd,
            });
            segments.push(Segment::constant(
                ramp_end,
                n * pre.id_c,
                n * pre.iq_c,
                grid.v_g,
            ));
        }
    } else {
        segments.push(Segment::constant(
            fault.clear_at,
            n * pre.id_c,
            n * pre.iq_c,
            grid.v_g,
        ));
    }

    Ok(Schedule {
        events: EventSchedule::new(events)?,
        injection: InjectionSchedule::new(segments, pre.end)?,
    })
}

type Vec2 = [f64; 2];

#[inline]
fn axpy(y: Vec2, h: f64, terms: &[(f64, Vec2)]) -> Vec2 {
    let mut out = y;
    for &(c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

fn hermite(t0: f64, y0: Vec2, f0: Vec2, t1: f64, y1: Vec2, f1: Vec2, t: f64) -> Vec2 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    [
        h00 * y0[0] + h10 * h * f0[0] + h01 * y1[0] + h11 * h * f1[0],
        h00 * y0[1] + h10 * h * f0[1] + h01 * y1[1] + h11 * h * f1[1],
    ]
}

/// Dense-output collector. Works in the integration variable `tau` and maps
/// to physical time through `origin` and `sign`.
struct Sampler {
    origin: f64,
    sign: f64,
    interval: f64,
    samples: Vec<Sample>,
}

impl Sampler {
    fn time(&self, tau: f64) -> f64 {
        self.origin + self.sign * tau
    }

    fn push(&mut self, tau: f64, y: Vec2) {
        self.samples.push(Sample {
            t: self.time(tau),
            state: RomState::from_array(y),
        });
    }

    /// Emits grid samples strictly inside `(a, b)` of one accepted step.
    fn step(&mut self, a: f64, ya: Vec2, fa: Vec2, b: f64, yb: Vec2, fb: Vec2) {
        let eps = 1e-9 * self.interval;
        let mut k = (a / self.interval).floor() as i64 + 1;
        loop {
            let tau = k as f64 * self.interval;
            if tau >= b - eps {
                break;
            }
            if tau > a + eps {
                let y = hermite(a, ya, fa, b, yb, fb, tau);
                self.push(tau, y);
            }
            k += 1;
        }
    }
}

struct Guard {
    scale: StateScale,
    escape_radius: Option<f64>,
}

struct Stepper<'a, F> {
    f: F,
    settings: &'a SolverSettings,
    x2_max: f64,
    guard: Guard,
    stats: SolverStats,
    h_adapt: f64,
}

impl<'a, F: Fn(f64, Vec2) -> Vec2> Stepper<'a, F> {
    fn new(f: F, settings: &'a SolverSettings, x2_max: f64, guard: Guard) -> Self {
        let h_adapt = match settings.method {
            Method::Rkf45(a) | Method::Dop853(a) => a.h_init,
            Method::Rk4 { step } => step,
        };
        Self {
            f,
            settings,
            x2_max,
            guard,
            stats: SolverStats::default(),
            h_adapt,
        }
    }

    fn check(&mut self, t_phys: f64, y: Vec2) -> Result<()> {
        if !(y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::NonFiniteState { t: t_phys });
        }
        if let Some(r) = self.guard.escape_radius {
            let s = RomState::from_array(y);
            if self.guard.scale.norm_inf(s) > r {
                return Err(Error::DivergenceGuard {
                    t: t_phys,
                    state: s,
                });
            }
        }
        self.stats.max_abs_x2 = self.stats.max_abs_x2.max(saturate(y[1], self.x2_max).abs());
        Ok(())
    }

    /// Advances from `a` to exactly `b`, feeding accepted steps to the sampler.
    fn advance(
        &mut self,
        a: f64,
        ya: Vec2,
        b: f64,
        mut sampler: Option<&mut Sampler>,
    ) -> Result<Vec2> {
        let phys = |s: &Option<&mut Sampler>, tau: f64| s.as_ref().map_or(tau, |s| s.time(tau));
        match self.settings.method {
            Method::Rk4 { step } => {
                let n = ((b - a) / step - 1e-9).ceil().max(1.0) as usize;
                let h = (b - a) / n as f64;
                let mut y = ya;
                let mut fy = (self.f)(a, y);
                for i in 0..n {
                    let t = a + i as f64 * h;
                    let t_next = if i + 1 == n {
                        b
                    } else {
                        a + (i + 1) as f64 * h
                    };
                    let k1 = fy;
                    let k2 = (self.f)(t + 0.5 * h, axpy(y, h, &[(0.5, k1)]));
                    let k3 = (self.f)(t + 0.5 * h, axpy(y, h, &[(0.5, k2)]));
                    let k4 = (self.f)(t + h, axpy(y, h, &[(1.0, k3)]));
                    let y_next = axpy(
                        y,
                        h,
                        &[
                            (1.0 / 6.0, k1),
                            (1.0 / 3.0, k2),
                            (1.0 / 3.0, k3),
                            (1.0 / 6.0, k4),
                        ],
                    );
                    self.check(phys(&sampler, t_next), y_next)?;
                    let f_next = (self.f)(t_next, y_next);
                    if let Some(s) = sampler.as_deref_mut() {
                        s.step(t, y, fy, t_next, y_next, f_next);
                    }
                    self.stats.steps += 1;
                    y = y_next;
                    fy = f_next;
                }
                Ok(y)
            }
            Method::Rkf45(ctl) => self.adaptive(a, ya, b, sampler, &ctl, (rkf45_step, 5.0)),
            Method::Dop853(ctl) => self.adaptive(a, ya, b, sampler, &ctl, (dop853_step, 8.0)),
        }
    }

    /// Error-controlled stepping with an embedded pair and its order.
    fn adaptive(
        &mut self,
        a: f64,
        ya: Vec2,
        b: f64,
        mut sampler: Option<&mut Sampler>,
        ctl: &Adaptive,
        (step, order): (EmbeddedStep<F>, f64),
    ) -> Result<Vec2> {
        let phys = |s: &Option<&mut Sampler>, tau: f64| s.as_ref().map_or(tau, |s| s.time(tau));
        let mut t = a;
        let mut y = ya;
        let mut fy = (self.f)(t, y);
        let mut h = self.h_adapt.clamp(ctl.h_min, ctl.h_max);
        while t < b {
            let last = t + h >= b - 1e-12 * h.max(b.abs() * f64::EPSILON);
            let h_try = if last { b - t } else { h };
            let (y_next, err) = step(&self.f, t, y, fy, h_try, ctl);
            if !err.is_finite() {
                return Err(Error::NonFiniteState {
                    t: phys(&sampler, t),
                });
            }
            if err <= 1.0 {
                let t_next = if last { b } else { t + h_try };
                self.check(phys(&sampler, t_next), y_next)?;
                let f_next = (self.f)(t_next, y_next);
                if let Some(s) = sampler.as_deref_mut() {
                    s.step(t, y, fy, t_next, y_next, f_next);
                }
                self.stats.steps += 1;
                self.stats.max_error_estimate = self.stats.max_error_estimate.max(err);
                t = t_next;
                y = y_next;
                fy = f_next;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-1.0 / order)).clamp(0.2, 5.0)
                };
                if !last {
                    h = (h_try * grow).clamp(ctl.h_min, ctl.h_max);
                } else {
                    h = h.max((h_try * grow).min(ctl.h_max));
                }
            } else {
                self.stats.rejected += 1;
                if h_try <= ctl.h_min {
                    return Err(Error::StepFailure {
                        t: phys(&sampler, t),
                        h_min: ctl.h_min,
                    });
                }
                h = (h_try * (0.9 * err.powf(-1.0 / (order - 1.0))).clamp(0.1, 0.5)).max(ctl.h_min);
            }
        }
        self.h_adapt = h;
        Ok(y)
    }
}

fn error_scale(ctl: &Adaptive, y: Vec2, y_next: Vec2, i: usize) -> f64 {
    ctl.atol + ctl.rtol * y[i].abs().max(y_next[i].abs())
}

/// One Fehlberg 4(5) step; returns the fifth-order solution and the scaled
/// error norm.
/// One trial step `(f, t, y, f(t, y), h, settings)` returning the new state
/// and the scaled error norm.
type EmbeddedStep<F> = fn(&F, f64, Vec2, Vec2, f64, &Adaptive) -> (Vec2, f64);

fn rkf45_step<F: Fn(f64, Vec2) -> Vec2>(
    f: &F,
    t: f64,
    y: Vec2,
    k1: Vec2,
    h: f64,
    ctl: &Adaptive,
) -> (Vec2, f64) {
    let k2 = f(t + h / 4.0, axpy(y, h, &[(0.25, k1)]));
    let k3 = f(
        t + 3.0 * h / 8.0,
        axpy(y, h, &[(3.0 / 32.0, k1), (9.0 / 32.0, k2)]),
    );
    let k4 = f(
        t + 12.0 * h / 13.0,
        axpy(
            y,
            h,
            &[
                (1932.0 / 2197.0, k1),
                (-7200.0 / 2197.0, k2),
                (7296.0 / 2197.0, k3),
            ],
        ),
    );
    let k5 = f(
        t + h,
        axpy(
            y,
            h,
            &[
                (439.0 / 216.0, k1),
                (-8.0, k2),
                (3680.0 / 513.0, k3),
                (-845.0 / 4104.0, k4),
            ],
        ),
    );
    let k6 = f(
        t + h / 2.0,
        axpy(
            y,
            h,
            &[
                (-8.0 / 27.0, k1),
                (2.0, k2),
                (-3544.0 / 2565.0, k3),
                (1859.0 / 4104.0, k4),
                (-11.0 / 40.0, k5),
            ],
        ),
    );
    let y5 = axpy(
        y,
        h,
        &[
            (16.0 / 135.0, k1),
            (6656.0 / 12825.0, k3),
            (28561.0 / 56430.0, k4),
            (-9.0 / 50.0, k5),
            (2.0 / 55.0, k6),
        ],
    );
    let e = axpy(
        [0.0, 0.0],
        h,
        &[
            (1.0 / 360.0, k1),
            (-128.0 / 4275.0, k3),
            (-2197.0 / 75240.0, k4),
            (1.0 / 50.0, k5),
            (2.0 / 55.0, k6),
        ],
    );
    let err = (0..2)
        .map(|i| e[i].abs() / error_scale(ctl, y, y5, i))
        .fold(0.0, f64::max);
    (y5, err)
}

/// One Dormand-Prince 8(5,3) step (Hairer, Norsett and Wanner's DOP853),
/// with its blended fifth/third-order error estimate.
fn dop853_step<F: Fn(f64, Vec2) -> Vec2>(
    f: &F,
    t: f64,
    y: Vec2,
    k1: Vec2,
    h: f64,
    ctl: &Adaptive,
) -> (Vec2, f64) {
    use dop853::{A, B, BHH, C, ER};
    let mut k = [[0.0; 2]; 12];
    k[0] = k1;
    for i in 1..12 {
        let mut acc = y;
        for j in 0..i {
            let w = h * A[i][j];
            if w != 0.0 {
                acc[0] += w * k[j][0];
                acc[1] += w * k[j][1];
            }
        }
        k[i] = f(t + C[i] * h, acc);
    }
    let weighted = |w: &[f64; 12]| {
        let mut s = [0.0; 2];
        for (wi, ki) in w.iter().zip(&k) {
            s[0] += wi * ki[0];
            s[1] += wi * ki[1];
        }
        s
    };
    let slope = weighted(&B);
    let e5 = weighted(&ER);
    let y_next = [y[0] + h * slope[0], y[1] + h * slope[1]];
    let (mut err5, mut err3) = (0.0, 0.0);
    for i in 0..2 {
        let sk = error_scale(ctl, y, y_next, i);
        let e3 = slope[i] - BHH[0] * k[0][i] - BHH[1] * k[8][i] - BHH[2] * k[11][i];
        err5 += (e5[i] / sk).powi(2);
        err3 += (e3 / sk).powi(2);
    }
    let deno = err5 + 0.01 * err3;
    let deno = if deno > 0.0 { deno } else { 1.0 };
    (y_next, h.abs() * err5 * (1.0 / (2.0 * deno)).sqrt())
}

// Coefficients as published, beyond f64 precision.
#[allow(clippy::excessive_precision)]
mod dop853 {
    pub const C: [f64; 12] = [
        0.0,
        0.526001519587677318785587544488e-1,
        0.789002279381515978178381316732e-1,
        0.118350341907227396726757197510,
        0.281649658092772603273242802490,
        1.0 / 3.0,
        0.25,
        0.307692307692307692307692307692,
        0.651282051282051282051282051282,
        0.6,
        0.857142857142857142857142857142,
        1.0,
    ];

    const Z: f64 = 0.0;

    #[rustfmt::skip]
    pub const A: [[f64; 12]; 12] = [
        [Z; 12],
        [5.26001519587677318785587544488e-2, Z, Z, Z, Z, Z, Z, Z, Z, Z, Z, Z],
        [1.97250569845378994544595329183e-2, 5.91751709536136983633785987549e-2, Z, Z, Z, Z, Z, Z, Z, Z, Z, Z],
        [2.95875854768068491816892993775e-2, Z, 8.87627564304205475450678981324e-2, Z, Z, Z, Z, Z, Z, Z, Z, Z],
        [2.41365134159266685502369798665e-1, Z, -8.84549479328286085344864962717e-1, 9.24834003261792003115737966543e-1, Z, Z, Z, Z, Z, Z, Z, Z],
        [3.7037037037037037037037037037e-2, Z, Z, 1.70828608729473871279604482173e-1, 1.25467687566822425016691814123e-1, Z, Z, Z, Z, Z, Z, Z],
        [3.7109375e-2, Z, Z, 1.70252211019544039314978060272e-1, 6.02165389804559606850219397283e-2, -1.7578125e-2, Z, Z, Z, Z, Z, Z],
        [3.70920001185047927108779319836e-2, Z, Z, 1.70383925712239993810214054705e-1, 1.07262030446373284651809199168e-1,
         -1.53194377486244017527936158236e-2, 8.27378916381402288758473766002e-3, Z, Z, Z, Z, Z],
        [6.24110958716075717114429577812e-1, Z, Z, -3.36089262944694129406857109825, -8.68219346841726006818189891453e-1,
         2.75920996994467083049415600797e1, 2.01540675504778934086186788979e1, -4.34898841810699588477366255144e1, Z, Z, Z, Z],
        [4.77662536438264365890433908527e-1, Z, Z, -2.48811461997166764192642586468, -5.90290826836842996371446475743e-1,
         2.12300514481811942347288949897e1, 1.52792336328824235832596922938e1, -3.32882109689848629194453265587e1,
         -2.03312017085086261358222928593e-2, Z, Z, Z],
        [-9.3714243008598732571704021658e-1, Z, Z, 5.18637242884406370830023853209, 1.09143734899672957818500254654,
         -8.14978701074692612513997267357, -1.85200656599969598641566180701e1, 2.27394870993505042818970056734e1,
         2.49360555267965238987089396762, -3.0467644718982195003823669022, Z, Z],
        [2.27331014751653820792359768449, Z, Z, -1.05344954667372501984066689879e1, -2.00087205822486249909675718444,
         -1.79589318631187989172765950534e1, 2.79488845294199600508499808837e1, -2.85899827713502369474065508674,
         -8.87285693353062954433549289258, 1.23605671757943030647266201528e1, 6.43392746015763530355970484046e-1, Z],
    ];

    pub const B: [f64; 12] = [
        5.42937341165687622380535766363e-2,
        0.0,
        0.0,
        0.0,
        0.0,
        4.45031289275240888144113950566,
        1.89151789931450038304281599044,
        -5.8012039600105847814672114227,
        3.1116436695781989440891606237e-1,
        -1.52160949662516078556178806805e-1,
        2.01365400804030348374776537501e-1,
        4.47106157277725905176885569043e-2,
    ];

    pub const BHH: [f64; 3] = [
        0.244094488188976377952755905512,
        0.733846688281611857341361741547,
        0.220588235294117647058823529412e-1,
    ];

    pub const ER: [f64; 12] = [
        0.1312004499419488073250102996e-1,
        0.0,
        0.0,
        0.0,
        0.0,
        -0.1225156446376204440720569753e1,
        -0.4957589496572501915214079952,
        0.1664377182454986536961530415e1,
        -0.3503288487499736816886487290,
        0.3341791187130174790297318841,
        0.8192320648511571246570742613e-1,
        -0.2235530786388629525884427845e-1,
    ];
}

fn rhs_array(coeffs: &RomCoefficients, pll: &PllParams, y: Vec2, sign: f64) -> Vec2 {
    let d = rom_rhs(RomState::from_array(y), coeffs, pll);
    [sign * d.dx1, sign * d.dx3]
}

/// Forward simulation under a piecewise input schedule. Every segment
/// boundary and event time is a step boundary and appears as a sample.
pub fn integrate_forward(
    x0: RomState,
    t0: f64,
    t_end: f64,
    system: &RomSystem,
    schedule: &Schedule,
    solver: &SolverSettings,
) -> Result<Trajectory> {
    solver.validate()?;
    if !(t_end > t0) {
        return Err(Error::invalid("t_end", "must be greater than t0"));
    }
    if !x0.is_finite() {
        return Err(Error::NonFiniteState { t: t0 });
    }
    let inj = &schedule.injection;
    if t0 < inj.start() || t_end > inj.end() {
        return Err(Error::OutOfWindow {
            t: if t0 < inj.start() { t0 } else { t_end },
            start: inj.start(),
            end: inj.end(),
        });
    }

    let mut breaks: Vec<f64> = inj
        .segments()
        .iter()
        .map(|s| s.start)
        .chain(schedule.events.events().iter().map(|e| e.t))
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.push(t_end);

    let pll = system.pll;
    let mut sampler = Sampler {
        origin: 0.0,
        sign: 1.0,
        interval: solver.sample_interval,
        samples: vec![Sample { t: t0, state: x0 }],
    };
    let mut stats = SolverStats {
        max_abs_x2: x0.x2(pll.x2_max).abs(),
        ..Default::default()
    };
    let mut y = x0.to_array();
    let mut a = t0;
    let mut h_carry = None;
    for b in breaks {
        let (_, seg) = inj.segment_at(a)?;
        let seg = *seg;
        let c_a = segment_coefficients(&pll, &system.grid, &seg, a)?;
        let c_b = segment_coefficients(&pll, &system.grid, &seg, b)?;
        if c_a.m_eq.signum() != c_b.m_eq.signum() {
            return Err(Error::SingularInertia { m_eq: 0.0 });
        }
        let grid = system.grid;
        let f = move |t: f64, y: Vec2| -> Vec2 {
            let c = if seg.is_autonomous() {
                c_a
            } else {
                segment_coefficients(&pll, &grid, &seg, t).unwrap_or(c_a)
            };
            rhs_array(&c, &pll, y, 1.0)
        };
        let guard = Guard {
            scale: pll.scale(),
            escape_radius: None,
        };
        let mut stepper = Stepper::new(f, solver, pll.x2_max, guard);
        if let Some(h) = h_carry {
            stepper.h_adapt = h;
        }
        y = stepper.advance(a, y, b, Some(&mut sampler))?;
        h_carry = Some(stepper.h_adapt);
        stats.merge(&stepper.stats);
        sampler.push(b, y);
        a = b;
    }
    Ok(Trajectory {
        samples: sampler.samples,
        direction: Direction::Forward,
        stats,
    })
}

fn autonomous_check(coeffs: &RomCoefficients, duration: f64, x0: RomState) -> Result<()> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::invalid("duration", "must be >= 0"));
    }
    if coeffs.m_eq.abs() < M_EQ_EPSILON {
        return Err(Error::SingularInertia { m_eq: coeffs.m_eq });
    }
    if !x0.is_finite() {
        return Err(Error::NonFiniteState { t: 0.0 });
    }
    Ok(())
}

/// Reverse-time trajectory of the frozen autonomous regime. Sample times run
/// from 0 down to `-duration`.
pub fn integrate_reverse(
    x0: RomState,
    duration: f64,
    coeffs: &RomCoefficients,
    pll: &PllParams,
    solver: &SolverSettings,
) -> Result<Trajectory> {
    solver.validate()?;
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", "must be > 0"));
    }
    autonomous_run(x0, duration, coeffs, pll, solver, Direction::Reverse, true)
}

/// Forward trajectory of the frozen autonomous regime over `[0, duration]`.
pub fn integrate_autonomous(
    x0: RomState,
    duration: f64,
    coeffs: &RomCoefficients,
    pll: &PllParams,
    solver: &SolverSettings,
) -> Result<Trajectory> {
    solver.validate()?;
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", "must be > 0"));
    }
    autonomous_run(x0, duration, coeffs, pll, solver, Direction::Forward, true)
}

/// Endpoint of the autonomous flow after `duration` in the given direction,
/// without dense output.
pub fn flow(
    x0: RomState,
    duration: f64,
    coeffs: &RomCoefficients,
    pll: &PllParams,
    solver: &SolverSettings,
    direction: Direction,
) -> Result<(RomState, SolverStats)> {
    let tr = autonomous_run(x0, duration, coeffs, pll, solver, direction, false)?;
    Ok((tr.final_state(), tr.stats))
}

fn autonomous_run(
    x0: RomState,
    duration: f64,
    coeffs: &RomCoefficients,
    pll: &PllParams,
    solver: &SolverSettings,
    direction: Direction,
    dense: bool,
) -> Result<Trajectory> {
    autonomous_check(coeffs, duration, x0)?;
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Reverse => -1.0,
    };
    let c = *coeffs;
    let p = *pll;
    let f = move |_t: f64, y: Vec2| rhs_array(&c, &p, y, sign);
    let guard = Guard {
        scale: pll.scale(),
        escape_radius: (direction == Direction::Reverse).then_some(solver.escape_radius),
    };
    let mut stepper = Stepper::new(f, solver, pll.x2_max, guard);
    stepper.check(0.0, x0.to_array())?;
    let mut sampler = Sampler {
        origin: 0.0,
        sign,
        interval: solver.sample_interval,
        samples: vec![Sample { t: 0.0, state: x0 }],
    };
    if duration == 0.0 {
        return Ok(Trajectory {
            samples: sampler.samples,
            direction,
            stats: stepper.stats,
        });
    }
    let y = stepper.advance(0.0, x0.to_array(), duration, dense.then_some(&mut sampler))?;
    sampler.push(duration, y);
    if !dense {
        sampler.samples = vec![*sampler.samples.last().unwrap()];
    }
    Ok(Trajectory {
        samples: sampler.samples,
        direction,
        stats: stepper.stats,
    })
}

/// Hermite interpolation between two samples of an autonomous trajectory.
pub fn interpolate(
    a: &Sample,
    b: &Sample,
    coeffs: &RomCoefficients,
    pll: &PllParams,
    t: f64,
) -> RomState {
    let fa = rhs_array(coeffs, pll, a.state.to_array(), 1.0);
    let fb = rhs_array(coeffs, pll, b.state.to_array(), 1.0);
    RomState::from_array(hermite(
        a.t,
        a.state.to_array(),
        fa,
        b.t,
        b.state.to_array(),
        fb,
        t,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs() -> (RomCoefficients, PllParams) {
        let pll = PllParams::new(14.0, 845.0, 31.4).unwrap();
        let c = RomCoefficients {
            m_eq: 0.99,
            t_m_eq: 218.0,
            te_amp_ki: 845.0,
            te_amp_kp: 0.0,
            te_offset: 0.0,
            d_eq_const: -0.69,
            d_eq_cos_amp: 14.0,
        };
        (c, pll)
    }

    #[test]
    fn dop853_local_error_order() {
        let osc = |_t: f64, y: Vec2| [y[1], -y[0]];
        let ctl = Adaptive::new(1e-12, 1e-14);
        let local = |h: f64| {
            let (y, _) = dop853_step(&osc, 0.0, [1.0, 0.0], [0.0, -1.0], h, &ctl);
            (y[0] - h.cos()).abs().max((y[1] + h.sin()).abs())
        };
        // Eighth order: the local error shrinks like h^9.
        let ratio = local(0.4) / local(0.2);
        assert!(ratio > 300.0 && ratio < 900.0, "{ratio}");
    }

    #[test]
    fn embedded_methods_agree() {
        let (c, pll) = coeffs();
        let x0 = RomState::new(0.5, 5.0);
        let tight = SolverSettings::rkf45(1e-13, 1e-15);
        for dir in [Direction::Forward, Direction::Reverse] {
            let (a, sa) = flow(x0, 1.0, &c, &pll, &SolverSettings::default(), dir).unwrap();
            let (b, sb) = flow(x0, 1.0, &c, &pll, &tight, dir).unwrap();
            assert!(pll.scale().distance(a, b) < 1e-9, "{dir:?} {a:?} {b:?}");
            assert!(sa.steps < sb.steps);
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let (c, pll) = coeffs();
        let x0 = RomState::new((c.t_m_eq / c.te_amp_ki).asin(), 0.0);
        let tr = integrate_reverse(x0, 2.0, &c, &pll, &SolverSettings::default()).unwrap();
        // Reverse time makes the point a repeller, so the rounding-level
        // residual at x0 grows roughly like exp(6.4 t).
        for s in &tr.samples {
            assert!(
                (s.state.x1 - x0.x1).abs() < 1e-8 && s.state.x3.abs() < 1e-6,
                "{s:?}"
            );
        }
        assert_eq!(tr.direction, Direction::Reverse);
        assert!(tr.samples.windows(2).all(|w| w[1].t < w[0].t));
        assert_eq!(tr.samples.last().unwrap().t, -2.0);
    }

    #[test]
    fn reverse_guard_triggers() {
        let (c, pll) = coeffs();
        let s = SolverSettings {
            escape_radius: 5.0,
            ..SolverSettings::default()
        };
        let r = integrate_reverse(RomState::new(2.5, -80.0), 3.0, &c, &pll, &s);
        assert!(matches!(r, Err(Error::DivergenceGuard { .. })), "{r:?}");
    }

    #[test]
    fn schedule_rejects_degenerate_fault() {
        let grid = GridEquivalent {
            r_lg: 0.0025,
            l_g: 5.5e-5,
            v_g: 1.0,
            omega_0: 314.0,
            omega_g: 314.0,
        };
        let pre = PreFaultPoint {
            id_c: 1.0,
            iq_c: 0.0,
            n_turbines: 15.0,
            delta: 0.26,
            start: 0.0,
            end: 5.0,
        };
        let fault = FaultSpec {
            apply_at: 1.5,
            clear_at: 1.5,
            z_f: Complex64::new(0.0, 0.0),
            k_factor: 2.0,
            i_max: 1.0,
            ramp_rate: 2.0,
        };
        assert!(matches!(
            build_schedule(&grid, &fault, &pre),
            Err(Error::InvalidFaultWindow { .. })
        ));
    }

    #[test]
    fn ramp_arithmetic() {
        assert!((ramp_duration(0.6, 1.0, 2.0) - 0.2).abs() < 1e-15);
        assert_eq!(1.6 + ramp_duration(0.6, 1.0, 2.0), 1.8);
    }

    #[test]
    fn event_schedule_validation() {
        let clear_first = EventSchedule::new(vec![Event {
            t: 1.0,
            kind: EventKind::FaultClear,
        }]);
        assert!(clear_first.is_err());
        let unordered = EventSchedule::new(vec![
            Event {
                t: 1.0,
                kind: EventKind::FaultApply {
                    z_f: Complex64::new(0.0, 0.0),
                },
            },
            Event {
                t: 1.0,
                kind: EventKind::FaultClear,
            },
        ]);
        assert!(unordered.is_err());
    }
}
