use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tlroa_core::integrate::SolverSettings;
use tlroa_core::network::{fit_impedance, FitResult, ImpedanceScan, DEFAULT_HALF_WINDOW_HZ};
use tlroa_core::roa::{
    read_polyline_csv, CctOutcome, Equilibrium, RefineSettings, RefinementStats, SeedSettings,
    StateBox, TlroaBoundary,
};
use tlroa_core::scenario::{ScenarioConfig, Study};
use tlroa_core::{Error, StateScale};

use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, ArtifactWriter, RunManifest};
use crate::{CctArgs, CommonArgs, FitArgs, RoaGridArgs, TlroaArgs};

const DEFAULT_F_NOMINAL_HZ: f64 = 50.0;

/// Hash of the canonical re-serialization, so formatting and comments in the
/// scenario file do not change it.
pub fn config_hash(cfg: &ScenarioConfig) -> CliResult<String> {
    Ok(sha256_hex(cfg.to_toml_string()?.as_bytes()))
}

/// Hash of everything a boundary depends on through the post-fault dynamics.
pub fn regime_hash(study: &Study) -> String {
    let text = serde_json::to_string(&(study.post_regime, study.equilibrium.state))
        .expect("plain numbers serialize");
    sha256_hex(text.as_bytes())
}

struct Loaded {
    study: Study,
    hash: String,
    out: PathBuf,
}

fn load(args: &CommonArgs) -> CliResult<Loaded> {
    let study = Study::from_path(&args.config).map_err(|e| match e {
        Error::Io(source) => CliError::Io {
            path: args.config.clone(),
            source,
        },
        e => e.into(),
    })?;
    let hash = config_hash(&study.config)?;
    let out = args
        .out
        .clone()
        .or_else(|| study.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded { study, hash, out })
}

fn writer(l: &Loaded, command: &str, config: &Path) -> CliResult<ArtifactWriter> {
    let mut w = ArtifactWriter::new(&l.out, command, Some(l.hash.clone()))?;
    w.record_input(config)?;
    Ok(w)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub r_lg_ohm: f64,
    pub l_g_h: f64,
    pub f_corner_hz: f64,
    pub slope_ohm_per_hz: f64,
    pub window_hz: [f64; 2],
    pub residual_ohm: f64,
    pub n_points: usize,
    pub corner_clamped: bool,
}

impl From<&FitResult> for FitReport {
    fn from(f: &FitResult) -> Self {
        Self {
            r_lg_ohm: f.r_lg,
            l_g_h: f.l_g,
            f_corner_hz: f.f_corner,
            slope_ohm_per_hz: f.slope_m,
            window_hz: [f.window.0, f.window.1],
            residual_ohm: f.residual,
            n_points: f.n_points,
            corner_clamped: f.corner_clamped,
        }
    }
}

pub fn fit(args: &FitArgs) -> CliResult<RunManifest> {
    let cfg = args
        .config
        .as_deref()
        .map(|p| ScenarioConfig::from_path(p).map(|c| (c, p)))
        .transpose()?;
    let scan_cfg = cfg
        .as_ref()
        .and_then(|(c, p)| c.grid.scan.clone().map(|s| (s, *p)));
    let scan_path = match (&args.scan, &scan_cfg) {
        (Some(p), _) => p.clone(),
        (None, Some((s, p))) => p.parent().unwrap_or(Path::new(".")).join(&s.file),
        (None, None) => {
            return Err(CliError::Usage(
                "fit needs --scan or a --config with a [grid.scan] table".into(),
            ))
        }
    };
    let f_nominal = args
        .f_nominal
        .or(scan_cfg.as_ref().map(|(s, _)| s.f_nominal_hz))
        .unwrap_or(DEFAULT_F_NOMINAL_HZ);
    let half_window = args
        .half_window
        .or(scan_cfg.as_ref().map(|(s, _)| s.half_window_hz))
        .unwrap_or(DEFAULT_HALF_WINDOW_HZ);

    let text = fs::read(&scan_path).map_err(CliError::io(&scan_path))?;
    let scan = ImpedanceScan::read_csv(text.as_slice(), &scan_path.display().to_string())?;
    let result = fit_impedance(&scan, f_nominal, half_window)?;

    let hash = cfg.as_ref().map(|(c, _)| config_hash(c)).transpose()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|(c, _)| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut w = ArtifactWriter::new(&out, "fit", hash)?;
    if let Some(p) = &args.config {
        w.record_input(p)?;
    }
    w.record_input(&scan_path)?;
    w.write_json("fit.json", &FitReport::from(&result))?;
    let plot = csv_bytes(|buf| {
        use std::io::Write;
        writeln!(buf, "f_hz,im_ohm,fitted_im_ohm")?;
        for (f, z) in scan
            .points
            .iter()
            .filter(|(f, _)| *f >= result.window.0 && *f <= result.window.1)
        {
            writeln!(buf, "{},{},{}", f, z.im, result.line(*f))?;
        }
        Ok(())
    });
    w.write("fit_plot.csv", &plot)?;
    w.finish()
}

pub fn simulate(args: &CommonArgs) -> CliResult<RunManifest> {
    let l = load(args)?;
    let tr = l.study.simulate()?;
    let mut w = writer(&l, "simulate", &args.config)?;
    let x2_max = l.study.pll.x2_max;
    w.write(
        "trajectory.csv",
        &csv_bytes(|buf| tr.write_csv(buf, x2_max)),
    )?;
    w.write_json(
        "simulation.json",
        &json!({
            "equilibrium": l.study.equilibrium,
            "solver_stats": tr.stats,
            "samples": tr.samples.len(),
            "saturation_violations": tr.saturation_violations(x2_max),
        }),
    )?;
    w.finish()
}

/// JSON written next to a boundary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySidecar {
    pub horizon_s: f64,
    pub equilibrium: Equilibrium,
    pub seed_settings: SeedSettings,
    pub level_c: f64,
    pub seed_halvings: usize,
    pub refine: RefineSettings,
    pub refinement_stats: RefinementStats,
    pub solver: SolverSettings,
    pub scale: StateScale,
    pub n_vertices: usize,
    pub regime_hash: String,
    pub config_hash: String,
}

pub fn tlroa(args: &TlroaArgs) -> CliResult<RunManifest> {
    let l = load(&args.common)?;
    let horizon = args.horizon.unwrap_or(l.study.config.roa.horizon_s);
    let seed = l.study.seed()?;
    let mut w = writer(&l, "tlroa", &args.common.config)?;
    let boundary = match l.study.tlroa(&seed, horizon) {
        Ok(b) => b,
        Err(Error::RefinementDepthExceeded {
            unresolved,
            max_gap,
            partial,
        }) => {
            // Keep the partial polyline for diagnosis, then report the failure.
            w.write(
                "boundary_partial.csv",
                &csv_bytes(|buf| partial.write_csv(buf)),
            )?;
            w.finish()?;
            return Err(Error::RefinementDepthExceeded {
                unresolved,
                max_gap,
                partial,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    w.write("boundary.csv", &csv_bytes(|buf| boundary.write_csv(buf)))?;
    w.write_json(
        "boundary.json",
        &BoundarySidecar {
            horizon_s: horizon,
            equilibrium: boundary.equilibrium,
            seed_settings: l.study.config.roa.seed,
            level_c: seed.level_c,
            seed_halvings: seed.halvings,
            refine: boundary.refine,
            refinement_stats: boundary.stats,
            solver: boundary.solver,
            scale: boundary.scale,
            n_vertices: boundary.vertices.len(),
            regime_hash: regime_hash(&l.study),
            config_hash: l.hash.clone(),
        },
    )?;
    w.finish()
}

/// Reads a boundary CSV and its sidecar (same path, `.json` extension).
pub fn load_boundary(path: &Path) -> CliResult<(TlroaBoundary, BoundarySidecar)> {
    let text = fs::read(path).map_err(CliError::io(path))?;
    let vertices = read_polyline_csv(text.as_slice(), &path.display().to_string())?;
    let side_path = path.with_extension("json");
    let side_text = fs::read(&side_path).map_err(CliError::io(&side_path))?;
    let side: BoundarySidecar =
        serde_json::from_slice(&side_text).map_err(|source| CliError::Json {
            path: side_path.clone(),
            source,
        })?;
    let boundary = TlroaBoundary {
        seed_angles: Vec::new(),
        horizon: side.horizon_s,
        equilibrium: side.equilibrium,
        level_c: side.level_c,
        n_seeds: side.seed_settings.n_points,
        solver: side.solver,
        refine: side.refine,
        scale: side.scale,
        stats: side.refinement_stats,
        vertices,
    };
    Ok((boundary, side))
}

pub fn cct(args: &CctArgs) -> CliResult<RunManifest> {
    let l = load(&args.common)?;
    let (boundary, side) = load_boundary(&args.boundary)?;
    let expected = regime_hash(&l.study);
    if side.regime_hash != expected {
        return Err(CliError::RegimeMismatch {
            path: args.boundary.clone(),
            expected,
            found: side.regime_hash,
        });
    }
    let outcome = l.study.cct(&boundary)?;
    let mut w = writer(&l, "cct", &args.common.config)?;
    w.record_input(&args.boundary)?;
    w.record_input(&args.boundary.with_extension("json"))?;
    let report = match outcome {
        CctOutcome::Finite { cct, exit_point } => json!({
            "cct_s": cct,
            "exit_point": { "x1_rad": exit_point.x1, "x3_rad_per_s": exit_point.x3 },
            "horizon_s": side.horizon_s,
        }),
        CctOutcome::Infinite { window } => json!({
            "cct_s": "infinite",
            "exit_point": null,
            "window_s": window,
            "horizon_s": side.horizon_s,
        }),
    };
    w.write_json("cct.json", &report)?;
    w.finish()
}

pub fn roa_grid(args: &RoaGridArgs) -> CliResult<RunManifest> {
    for (flag, len) in [
        ("--x1", args.x1.len()),
        ("--x3", args.x3.len()),
        ("--n", args.n.len()),
    ] {
        if len != 2 {
            return Err(CliError::Usage(format!(
                "{flag} takes two comma-separated values, got {len}"
            )));
        }
    }
    let l = load(&args.common)?;
    let region = StateBox {
        x1: [args.x1[0], args.x1[1]],
        x3: [args.x3[0], args.x3[1]],
    };
    let horizon = args.horizon.unwrap_or(l.study.config.roa.horizon_s + 0.5);
    let grid = l.study.oracle(region, [args.n[0], args.n[1]], horizon)?;
    let mut w = writer(&l, "roa-grid", &args.common.config)?;
    w.write("roa_grid.csv", &csv_bytes(|buf| grid.write_csv(buf)))?;
    w.finish()
}
