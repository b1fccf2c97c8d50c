//! Browser demo. Three operations on the bundled normal-operation scenario:
//! the fault trajectory for a chosen clearing time, the stability boundary
//! for a chosen horizon and grid strength, and the clearing time it implies.

use std::path::Path;

use serde::Serialize;
use tlroa_core::roa::{CctOutcome, RefineSettings};
use tlroa_core::scenario::{ScenarioConfig, Study};
use tlroa_core::Result;
use wasm_bindgen::prelude::*;

pub const CASE1_TOML: &str = include_str!("../../cli/examples/case1.toml");

/// Most points sent back for one trajectory.
const MAX_PLOT_POINTS: usize = 2000;

#[derive(Debug, Serialize)]
pub struct TrajectoryPlot {
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub x3: Vec<f64>,
    pub apply_s: f64,
    pub clear_s: f64,
    /// Equilibrium the post-fault trajectory should settle on, branch 0.
    pub equilibrium: [f64; 2],
}

#[derive(Debug, Serialize)]
pub struct BoundaryPlot {
    pub x1: Vec<f64>,
    pub x3: Vec<f64>,
    pub equilibrium: [f64; 2],
    pub horizon_s: f64,
    pub impedance_multiplier: f64,
    /// Scaled units, so comparable across grid strengths.
    pub area: f64,
    pub is_simple: bool,
    /// `None` when the sustained fault never leaves the boundary.
    pub cct_s: Option<f64>,
    /// Sustained-fault trajectory up to its exit, for the overlay.
    pub fault_x1: Vec<f64>,
    pub fault_x3: Vec<f64>,
}

/// Coarser than the batch defaults so a boundary takes a second or two in
/// the browser.
pub fn demo_refinement() -> RefineSettings {
    RefineSettings {
        max_arc: 0.1,
        chord_tolerance: 1e-3,
        ..RefineSettings::default()
    }
}

#[derive(Clone, Debug)]
pub struct Demo {
    config: ScenarioConfig,
}

impl Demo {
    pub fn new(toml: &str) -> Result<Self> {
        let mut config = ScenarioConfig::from_toml_str(toml, "scenario")?;
        config.roa.refine = demo_refinement();
        config.roa.seed.n_points = 128;
        Ok(Self { config })
    }

    fn study(&self, edit: impl FnOnce(&mut ScenarioConfig)) -> Result<Study> {
        let mut cfg = self.config.clone();
        edit(&mut cfg);
        cfg.validate()?;
        Study::from_config(cfg, Path::new("."))
    }

    pub fn trajectory(&self, clear_s: f64) -> Result<TrajectoryPlot> {
        let study = self.study(|c| c.fault.clear_s = clear_s)?;
        let tr = study.simulate()?;
        let stride = tr.samples.len().div_ceil(MAX_PLOT_POINTS).max(1);
        let picked: Vec<_> = tr
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || i + 1 == tr.samples.len())
            .map(|(_, s)| *s)
            .collect();
        Ok(TrajectoryPlot {
            t: picked.iter().map(|s| s.t).collect(),
            x1: picked.iter().map(|s| s.state.x1).collect(),
            x3: picked.iter().map(|s| s.state.x3).collect(),
            apply_s: study.fault.apply_at,
            clear_s: study.fault.clear_at,
            equilibrium: [study.equilibrium.state.x1, study.equilibrium.state.x3],
        })
    }

    pub fn boundary(&self, horizon_s: f64, multiplier: f64) -> Result<BoundaryPlot> {
        let study = self.study(|c| c.grid.impedance_multiplier = multiplier)?;
        let seed = study.seed()?;
        let b = study.tlroa(&seed, horizon_s)?;
        let outcome = study.cct(&b)?;
        let cct_s = match outcome {
            CctOutcome::Finite { cct, .. } => Some(cct),
            CctOutcome::Infinite { .. } => None,
        };
        let until = cct_s.unwrap_or(study.config.roa.cct.window);
        let fault = tlroa_core::integrate::integrate_autonomous(
            study.equilibrium.state,
            until,
            &study.fault_regime.coeffs,
            &study.fault_regime.pll,
            study.solver(),
        )?;
        Ok(BoundaryPlot {
            x1: b.vertices.iter().map(|v| v.x1).collect(),
            x3: b.vertices.iter().map(|v| v.x3).collect(),
            equilibrium: [b.equilibrium.state.x1, b.equilibrium.state.x3],
            horizon_s,
            impedance_multiplier: multiplier,
            area: b.stats.area,
            is_simple: b.stats.is_simple,
            cct_s,
            fault_x1: fault.samples.iter().map(|s| s.state.x1).collect(),
            fault_x3: fault.samples.iter().map(|s| s.state.x3).collect(),
        })
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

/// JavaScript handle. Every method returns a JSON string.
#[wasm_bindgen]
pub struct WebDemo {
    inner: Demo,
}

#[wasm_bindgen]
impl WebDemo {
    /// Loads the bundled scenario.
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<WebDemo, JsValue> {
        Self::from_toml(CASE1_TOML)
    }

    #[wasm_bindgen(js_name = fromToml)]
    pub fn from_toml(toml: &str) -> Result<WebDemo, JsValue> {
        Demo::new(toml)
            .map(|inner| WebDemo { inner })
            .map_err(|e| JsValue::from_str(&e.to_string()))
    }

    pub fn trajectory(&self, clear_s: f64) -> Result<String, JsValue> {
        to_js(self.inner.trajectory(clear_s))
    }

    pub fn boundary(&self, horizon_s: f64, multiplier: f64) -> Result<String, JsValue> {
        to_js(self.inner.boundary(horizon_s, multiplier))
    }
}
