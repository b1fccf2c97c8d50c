//! Scenario files: one TOML document describing plant, grid, fault, solver
//! and boundary settings, plus the per-unit study built from it.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    build_schedule, fault_segment, integrate_forward, FaultSpec, PreFaultPoint, RomSystem,
    Schedule, SolverSettings, Trajectory,
};
use crate::model::{segment_coefficients, GridEquivalent, PllParams, RomState, Segment};
use crate::network::{
    aggregate, fit_impedance, referred_to_lv, FitResult, ImpedanceScan, PlantAggregation,
};
use crate::roa::{
    brute_force_roa, compute_tlroa, critical_clearing_time, find_equilibrium, seed_with_auto_level,
    CctOutcome, CctSettings, Equilibrium, LyapunovSeed, OracleGrid, RefineSettings, Regime,
    SeedSettings, Stability, StateBox, TlroaBoundary,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Ohm, henry, volt, and PLL gains per volt.
    Si,
    /// Everything already on the turbine base.
    Pu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub n_turbines: u32,
    /// Rating of one turbine (VA).
    pub s_base_va: f64,
    /// Peak phase voltage base (V).
    pub v_base_v: f64,
    pub omega_0: f64,
    pub kp: f64,
    pub ki: f64,
    pub x2_max: f64,
    /// Single-turbine transformer resistance and inductance.
    pub r_ls: f64,
    pub l_s: f64,
    /// Add the aggregated turbine transformer in series with the grid equivalent.
    #[serde(default)]
    pub include_transformer: bool,
    /// Pre-fault per-turbine currents (pu).
    pub id_c: f64,
    pub iq_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineGrid {
    pub r_lg: f64,
    pub l_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    /// Scan CSV in ohms, relative to the scenario file.
    pub file: PathBuf,
    pub f_nominal_hz: f64,
    #[serde(default = "default_half_window")]
    pub half_window_hz: f64,
    #[serde(default = "one")]
    pub turns_ratio: f64,
}

fn default_half_window() -> f64 {
    crate::network::DEFAULT_HALF_WINDOW_HZ
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub v_g: f64,
    pub omega_g: f64,
    /// Multiplies both series elements; values above 1 weaken the grid.
    #[serde(default = "one")]
    pub impedance_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<InlineGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanGrid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub apply_s: f64,
    pub clear_s: f64,
    #[serde(default)]
    pub z_f_re: f64,
    #[serde(default)]
    pub z_f_im: f64,
    pub k_factor: f64,
    pub i_max: f64,
    pub ramp_pu_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub start_s: f64,
    pub end_s: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            start_s: 0.0,
            end_s: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoaConfig {
    pub horizon_s: f64,
    pub seed: SeedSettings,
    pub refine: RefineSettings,
    pub cct: CctSettings,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self {
            horizon_s: 2.25,
            seed: SeedSettings::default(),
            refine: RefineSettings::default(),
            cct: CctSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub units: Units,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantConfig,
    pub grid: GridConfig,
    pub fault: FaultConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub roa: RoaConfig,
}

fn line_of(src: &str, offset: usize) -> u64 {
    src[..offset.min(src.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count() as u64
        + 1
}

impl ScenarioConfig {
    pub fn from_toml_str(src: &str, context: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: e.span().map_or(0, |s| line_of(src, s.start)),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        for (name, v) in [
            ("plant.s_base_va", p.s_base_va),
            ("plant.v_base_v", p.v_base_v),
            ("plant.omega_0", p.omega_0),
            ("plant.l_s", p.l_s),
            ("grid.v_g", self.grid.v_g),
            ("grid.impedance_multiplier", self.grid.impedance_multiplier),
            ("fault.i_max", self.fault.i_max),
            ("fault.ramp_pu_per_s", self.fault.ramp_pu_per_s),
            ("roa.refine.max_arc", self.roa.refine.max_arc),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if !(p.r_ls >= 0.0) {
            return Err(Error::invalid("plant.r_ls", "must be >= 0"));
        }
        match (&self.grid.inline, &self.grid.scan) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "grid needs exactly one of [grid.inline] or [grid.scan]".into(),
                ))
            }
        }
        let f = &self.fault;
        let s = &self.simulation;
        if !(s.end_s > s.start_s) {
            return Err(Error::invalid("simulation.end_s", "must exceed start_s"));
        }
        if !(f.clear_s > f.apply_s) || !(f.apply_s > s.start_s) || !(f.clear_s < s.end_s) {
            return Err(Error::InvalidFaultWindow {
                apply: f.apply_s,
                clear: f.clear_s,
            });
        }
        if !(self.roa.horizon_s >= 0.0) {
            return Err(Error::invalid("roa.horizon_s", "must be >= 0"));
        }
        PllParams::new(1.0, 1.0, p.x2_max)?;
        self.solver.validate()?;
        self.roa.seed.validate()?;
        self.roa.refine.validate()?;
        Ok(())
    }
}

/// Base quantities of one turbine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub s: f64,
    pub v: f64,
    pub i: f64,
    pub z: f64,
}

impl Bases {
    /// Three-phase power with peak phase voltage: `S = 3/2 V I`.
    pub fn new(s_va: f64, v_peak: f64) -> Self {
        let i = 2.0 * s_va / (3.0 * v_peak);
        Self {
            s: s_va,
            v: v_peak,
            i,
            z: v_peak / i,
        }
    }
}

/// Everything needed to simulate and analyse one scenario, on the turbine base.
#[derive(Clone, Debug)]
pub struct Study {
    pub config: ScenarioConfig,
    pub bases: Bases,
    pub pll: PllParams,
    pub grid: GridEquivalent,
    pub fit: Option<FitResult>,
    pub pre: PreFaultPoint,
    pub fault: FaultSpec,
    /// Steady regime before the fault, and after clearing once any ramp ends.
    pub post_regime: Regime,
    pub fault_regime: Regime,
    pub equilibrium: Equilibrium,
}

impl Study {
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let pc = &config.plant;
        let bases = Bases::new(pc.s_base_va, pc.v_base_v);
        let (kz, kv, kgain) = match config.units {
            Units::Si => (1.0 / bases.z, 1.0 / bases.v, bases.v),
            Units::Pu => (1.0, 1.0, 1.0),
        };
        let pll = PllParams::new(pc.kp * kgain, pc.ki * kgain, pc.x2_max)?;

        let (fit, r_si, l_si) = match (&config.grid.inline, &config.grid.scan) {
            (Some(g), _) => (None, g.r_lg, g.l_g),
            (_, Some(s)) => {
                let path = base_dir.join(&s.file);
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "scan file {} does not exist",
                        path.display()
                    )));
                }
                let scan = ImpedanceScan::from_path(&path)?;
                let fit = fit_impedance(&scan, s.f_nominal_hz, s.half_window_hz)?;
                let lv = referred_to_lv(&fit, s.turns_ratio)?;
                // Scans are always in ohm.
                let to_cfg = if config.units == Units::Pu {
                    1.0 / bases.z
                } else {
                    1.0
                };
                (Some(fit), lv.r_lg * to_cfg, lv.l_g * to_cfg)
            }
            _ => unreachable!("validated"),
        };
        let agg = aggregate(&PlantAggregation {
            n_turbines: pc.n_turbines,
            r_ls: pc.r_ls,
            l_s: pc.l_s,
            id_c: pc.id_c,
            iq_c: pc.iq_c,
        });
        let (mut r, mut l) = (r_si, l_si);
        if pc.include_transformer {
            r += agg.r_ls_eq;
            l += agg.l_s_eq;
        }
        let grid = GridEquivalent {
            r_lg: r * kz,
            l_g: l * kz,
            v_g: config.grid.v_g * kv,
            omega_0: pc.omega_0,
            omega_g: config.grid.omega_g,
        }
        .with_impedance_multiplier(config.grid.impedance_multiplier);
        grid.validate()?;

        let n = f64::from(pc.n_turbines);
        let sim = &config.simulation;
        let steady = Segment::constant(sim.start_s, agg.id_eq, agg.iq_eq, grid.v_g);
        let post = segment_coefficients(&pll, &grid, &steady, sim.start_s)?;
        let post_regime = Regime::new(post, pll);
        let ratio = post.t_m_eq / (post.te_amp_ki + post.te_amp_kp);
        let guess = RomState::new(ratio.clamp(-1.0, 1.0).asin(), 0.0);
        let equilibrium = find_equilibrium(&post, &pll, guess)?;
        if equilibrium.stability != Stability::Stable {
            return Err(Error::NotHurwitz {
                re1: equilibrium.eigenvalues[0].re,
                re2: equilibrium.eigenvalues[1].re,
            });
        }

        let pre = PreFaultPoint {
            id_c: pc.id_c,
            iq_c: pc.iq_c,
            n_turbines: n,
            delta: equilibrium.state.x1,
            start: sim.start_s,
            end: sim.end_s,
        };
        let fc = &config.fault;
        let fault = FaultSpec {
            apply_at: fc.apply_s,
            clear_at: fc.clear_s,
            z_f: Complex64::new(fc.z_f_re, fc.z_f_im) * kz,
            k_factor: fc.k_factor,
            i_max: fc.i_max,
            ramp_rate: fc.ramp_pu_per_s,
        };
        let fseg = fault_segment(&grid, &fault, &pre, fc.apply_s)?;
        let fault_regime = Regime::new(segment_coefficients(&pll, &grid, &fseg, fc.apply_s)?, pll);

        Ok(Self {
            config,
            bases,
            pll,
            grid,
            fit,
            pre,
            fault,
            post_regime,
            fault_regime,
            equilibrium,
        })
    }

    /// Loads a scenario file, resolving relative paths against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg = ScenarioConfig::from_path(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(cfg, base)
    }

    pub fn solver(&self) -> &SolverSettings {
        &self.config.solver
    }

    pub fn schedule(&self) -> Result<Schedule> {
        build_schedule(&self.grid, &self.fault, &self.pre)
    }

    /// Pre-fault steady state, fault, clearing and recovery.
    pub fn simulate(&self) -> Result<Trajectory> {
        let sched = self.schedule()?;
        let system = RomSystem {
            pll: self.pll,
            grid: self.grid,
        };
        integrate_forward(
            self.equilibrium.state,
            self.pre.start,
            self.pre.end,
            &system,
            &sched,
            self.solver(),
        )
    }

    pub fn seed(&self) -> Result<LyapunovSeed> {
        seed_with_auto_level(
            &self.equilibrium,
            &self.post_regime,
            self.solver(),
            &self.config.roa.seed,
        )
    }

    pub fn tlroa(&self, seed: &LyapunovSeed, horizon: f64) -> Result<TlroaBoundary> {
        compute_tlroa(
            seed,
            &self.equilibrium,
            &self.post_regime,
            horizon,
            self.solver(),
            &self.config.roa.refine,
        )
    }

    pub fn cct(&self, boundary: &TlroaBoundary) -> Result<CctOutcome> {
        critical_clearing_time(
            self.equilibrium.state,
            &self.fault_regime,
            boundary,
            self.solver(),
            &self.config.roa.cct,
        )
    }

    pub fn oracle(&self, region: StateBox, n: [usize; 2], horizon: f64) -> Result<OracleGrid> {
        brute_force_roa(
            region,
            n,
            horizon,
            &self.equilibrium,
            &self.post_regime,
            self.solver(),
            &self.config.roa.seed.criterion,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CASE1: &str = r#"
units = "si"

[plant]
n_turbines = 15
s_base_va = 12e6
v_base_v = 563.382640840131
omega_0 = 314.0
kp = 0.025
ki = 1.5
x2_max = 31.4
r_ls = 249e-6
l_s = 18.45e-6
id_c = 1.0
iq_c = 0.0

[grid]
v_g = 563.382640840131
omega_g = 314.0

[grid.inline]
r_lg = 98.5e-6
l_g = 2.17e-6

[fault]
apply_s = 1.5
clear_s = 1.6
k_factor = 2.0
i_max = 1.0
ramp_pu_per_s = 2.0
"#;

    #[test]
    fn round_trip() {
        let cfg = ScenarioConfig::from_toml_str(CASE1, "case1").unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text, "round trip").unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_toml_string().unwrap());
    }

    #[test]
    fn per_unit_values() {
        let cfg = ScenarioConfig::from_toml_str(CASE1, "case1").unwrap();
        let st = Study::from_config(cfg, Path::new(".")).unwrap();
        assert!((st.bases.z - 0.039675).abs() < 1e-5);
        assert!((st.pll.kp - 14.0846).abs() < 1e-3);
        assert!((st.grid.v_g - 1.0).abs() < 1e-12);
        // M = 1 - kp L id with id = 15 pu.
        let m = 1.0 - st.pll.kp * st.grid.l_g * 15.0;
        assert!((st.post_regime.coeffs.m_eq - m).abs() < 1e-15);
        assert_eq!(st.equilibrium.stability, Stability::Stable);
        // Bolted fault: no retained voltage, full active current.
        assert_eq!(st.fault_regime.coeffs.te_amp_ki, 0.0);
        assert_eq!(st.fault_regime.coeffs.m_eq, st.post_regime.coeffs.m_eq);
    }

    #[test]
    fn rejects_bad_configs() {
        let both = CASE1.replace(
            "[grid.inline]",
            "[grid.scan]\nfile = \"x.csv\"\nf_nominal_hz = 50\n[grid.inline]",
        );
        assert!(matches!(
            ScenarioConfig::from_toml_str(&both, "t"),
            Err(Error::Config(_))
        ));
        let swapped = CASE1.replace("clear_s = 1.6", "clear_s = 1.4");
        assert!(matches!(
            ScenarioConfig::from_toml_str(&swapped, "t"),
            Err(Error::InvalidFaultWindow { .. })
        ));
        let unknown = CASE1.replace("iq_c = 0.0", "iq_c = 0.0\nbogus = 1");
        match ScenarioConfig::from_toml_str(&unknown, "t") {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("{other:?}"),
        }
        let missing = CASE1.replace("r_lg = 98.5e-6\nl_g = 2.17e-6", "").replace(
            "[grid.inline]",
            "[grid.scan]\nfile = \"nowhere.csv\"\nf_nominal_hz = 50",
        );
        let cfg = ScenarioConfig::from_toml_str(&missing, "t").unwrap();
        assert!(matches!(
            Study::from_config(cfg, Path::new("/nonexistent")),
            Err(Error::Config(_))
        ));
    }
}
