//! Network side of the plant: turbine aggregation and the series R-L fit of
//! an impedance frequency scan around the PLL nominal frequency.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCAN_HEADER: [&str; 3] = ["f_hz", "re_ohm", "im_ohm"];
pub const DEFAULT_HALF_WINDOW_HZ: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceScan {
    /// `(frequency Hz, impedance ohm)`, strictly increasing in frequency.
    pub points: Vec<(f64, Complex64)>,
    pub reference_node: String,
}

impl ImpedanceScan {
    pub fn new(points: Vec<(f64, Complex64)>, reference_node: impl Into<String>) -> Result<Self> {
        if points
            .iter()
            .any(|(f, z)| !(f.is_finite() && *f > 0.0 && z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::invalid(
                "scan",
                "frequencies must be positive and impedances finite",
            ));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid(
                "scan",
                "frequencies must be strictly increasing",
            ));
        }
        Ok(Self {
            points,
            reference_node: reference_node.into(),
        })
    }

    /// Reads the `f_hz, re_ohm, im_ohm` CSV format. `context` names the
    /// source in error messages.
    pub fn read_csv<R: Read>(reader: R, context: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .has_headers(false)
            .from_reader(reader);
        let mut records = rdr.records();
        let parse_err = |line: u64, reason: String| Error::Parse {
            context: context.to_string(),
            line,
            reason,
        };

        let header = records
            .next()
            .ok_or_else(|| {
                parse_err(
                    1,
                    format!("empty file, expected header `{}`", SCAN_HEADER.join(", ")),
                )
            })?
            .map_err(|e| parse_err(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != SCAN_HEADER {
            return Err(parse_err(
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    SCAN_HEADER.join(", "),
                    header.iter().collect::<Vec<_>>().join(", ")
                ),
            ));
        }

        let mut points = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 3 {
                return Err(parse_err(
                    line,
                    format!("expected 3 fields, found {}", rec.len()),
                ));
            }
            let mut v = [0.0; 3];
            for (slot, field) in v.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("`{field}`: {e}")))?;
            }
            points.push((v[0], Complex64::new(v[1], v[2])));
        }
        Self::new(points, context).map_err(|e| parse_err(0, e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, &path.display().to_string())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", SCAN_HEADER.join(","))?;
        for (f, z) in &self.points {
            writeln!(w, "{},{},{}", f, z.re, z.im)?;
        }
        Ok(())
    }

    /// Linear interpolation of `Re{Z}` at `f`, clamped to the scan range.
    /// Returns the value and whether clamping happened.
    pub fn resistance_at(&self, f: f64) -> (f64, bool) {
        let pts = &self.points;
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if f <= first.0 {
            return (first.1.re, f < first.0);
        }
        if f >= last.0 {
            return (last.1.re, f > last.0);
        }
        let i = pts.partition_point(|p| p.0 <= f);
        let (f0, z0) = pts[i - 1];
        let (f1, z1) = pts[i];
        let w = (f - f0) / (f1 - f0);
        (z0.re + w * (z1.re - z0.re), false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantAggregation {
    pub n_turbines: u32,
    /// Single-turbine transformer resistance (ohm).
    pub r_ls: f64,
    /// Single-turbine transformer inductance (H).
    pub l_s: f64,
    pub id_c: f64,
    pub iq_c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPlant {
    pub id_eq: f64,
    pub iq_eq: f64,
    pub r_ls_eq: f64,
    pub l_s_eq: f64,
}

impl PlantAggregation {
    pub fn validate(&self) -> Result<()> {
        if self.n_turbines == 0 {
            return Err(Error::invalid("n_turbines", "must be >= 1"));
        }
        if !(self.r_ls >= 0.0) {
            return Err(Error::invalid("r_ls", "must be >= 0"));
        }
        if !(self.l_s > 0.0) {
            return Err(Error::invalid("l_s", "must be > 0"));
        }
        Ok(())
    }
}

/// N identical turbines in parallel: currents add, transformer impedances divide.
pub fn aggregate(p: &PlantAggregation) -> AggregatedPlant {
    let n = f64::from(p.n_turbines);
    AggregatedPlant {
        id_eq: n * p.id_c,
        iq_eq: n * p.iq_c,
        r_ls_eq: p.r_ls / n,
        l_s_eq: p.l_s / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub r_lg: f64,
    pub l_g: f64,
    pub f_corner: f64,
    pub slope_m: f64,
    pub window: (f64, f64),
    /// RMS reactance residual of the line fit (ohm).
    pub residual: f64,
    pub n_points: usize,
    /// The corner frequency fell outside the scan and `r_lg` was taken from
    /// the nearest scan point.
    pub corner_clamped: bool,
}

impl FitResult {
    /// Reactance predicted by the fitted line.
    pub fn line(&self, f: f64) -> f64 {
        self.slope_m * (f - self.f_corner)
    }
}

/// Least-squares line through `Im{Z(f)}` on `[f_nominal - half_window,
/// f_nominal + half_window]`. The line's frequency-axis intercept is the
/// corner frequency; `L_g = m / 2 pi` and `r_Lg = Re{Z(F_C)}`.
pub fn fit_impedance(scan: &ImpedanceScan, f_nominal: f64, half_window: f64) -> Result<FitResult> {
    if !(half_window > 0.0 && f_nominal > 0.0) {
        return Err(Error::invalid(
            "half_window",
            "window and nominal frequency must be > 0",
        ));
    }
    let (lo, hi) = (f_nominal - half_window, f_nominal + half_window);
    let window: Vec<(f64, f64)> = scan
        .points
        .iter()
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .map(|(f, z)| (*f, z.im))
        .collect();
    let n = window.len();
    if n < 3 {
        return Err(Error::InsufficientData { lo, hi, found: n });
    }

    let nf = n as f64;
    let f_mean = window.iter().map(|p| p.0).sum::<f64>() / nf;
    let x_mean = window.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sff, mut sfx) = (0.0, 0.0);
    for &(f, x) in &window {
        sff += (f - f_mean) * (f - f_mean);
        sfx += (f - f_mean) * (x - x_mean);
    }
    let slope = sfx / sff;
    if !(slope > 0.0) {
        return Err(Error::NonPositiveSlope { slope });
    }
    let intercept = x_mean - slope * f_mean;
    let f_corner = -intercept / slope;

    let residual = (window
        .iter()
        .map(|&(f, x)| {
            let e = x - (intercept + slope * f);
            e * e
        })
        .sum::<f64>()
        / nf)
        .sqrt();

    let (r_lg, corner_clamped) = scan.resistance_at(f_corner);
    Ok(FitResult {
        r_lg,
        l_g: slope / std::f64::consts::TAU,
        f_corner,
        slope_m: slope,
        window: (lo, hi),
        residual,
        n_points: n,
        corner_clamped,
    })
}

/// Series R-L referred through an ideal transformer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferredImpedance {
    pub r_lg: f64,
    pub l_g: f64,
}

/// Refers a fitted impedance across a transformer with `turns_ratio = HV/LV`.
pub fn referred_to_lv(fit: &FitResult, turns_ratio: f64) -> Result<ReferredImpedance> {
    refer(fit.r_lg, fit.l_g, turns_ratio)
}

pub fn refer(r: f64, l: f64, turns_ratio: f64) -> Result<ReferredImpedance> {
    if !(turns_ratio > 0.0 && turns_ratio.is_finite()) {
        return Err(Error::invalid("turns_ratio", "must be > 0"));
    }
    let k = turns_ratio * turns_ratio;
    Ok(ReferredImpedance {
        r_lg: r / k,
        l_g: l / k,
    })
}

pub fn refer_voltage(v: f64, turns_ratio: f64) -> f64 {
    v / turns_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    const R: f64 = 98.5e-6;
    const L: f64 = 2.17e-6;

    fn rl_scan(f_lo: u32, f_hi: u32) -> ImpedanceScan {
        let pts = (f_lo..=f_hi)
            .map(|f| {
                let f = f as f64;
                (f, Complex64::new(R, TAU * f * L))
            })
            .collect();
        ImpedanceScan::new(pts, "test").unwrap()
    }

    #[test]
    fn aggregation_examples() {
        let p = PlantAggregation {
            n_turbines: 1,
            r_ls: 2.0,
            l_s: 3.0,
            id_c: 0.7,
            iq_c: 0.1,
        };
        assert_eq!(
            aggregate(&p),
            AggregatedPlant {
                id_eq: 0.7,
                iq_eq: 0.1,
                r_ls_eq: 2.0,
                l_s_eq: 3.0
            }
        );

        let p = PlantAggregation {
            n_turbines: 15,
            r_ls: 15.0 * 16.6e-6,
            l_s: 18.45e-6,
            id_c: 1.0,
            iq_c: 0.0,
        };
        let a = aggregate(&p);
        assert_eq!(a.id_eq, 15.0);
        assert!((a.l_s_eq - 1.23e-6).abs() < 1e-20);
        assert!((a.r_ls_eq - 16.6e-6).abs() < 1e-20);
        let back = (a.id_eq / 15.0, a.l_s_eq * 15.0, a.r_ls_eq * 15.0);
        assert!((back.0 - p.id_c).abs() <= 1e-15);
        assert!((back.1 - p.l_s).abs() <= 1e-15 * p.l_s);
        assert!((back.2 - p.r_ls).abs() <= 1e-15 * p.r_ls);
    }

    #[test]
    fn recovers_fitted_grid() {
        let fit = fit_impedance(&rl_scan(1, 400), 50.0, DEFAULT_HALF_WINDOW_HZ).unwrap();
        assert_eq!(fit.n_points, 11);
        assert!(((fit.r_lg - R) / R).abs() < 1e-3);
        assert!(((fit.l_g - L) / L).abs() < 1e-3);
        assert!((fit.l_g - fit.slope_m / TAU).abs() == 0.0);
    }

    #[test]
    fn exact_on_noiseless_data() {
        let fit = fit_impedance(&rl_scan(1, 400), 50.0, 5.0).unwrap();
        assert!(((fit.l_g - L) / L).abs() < 1e-10);
        assert!(((fit.r_lg - R) / R).abs() < 1e-10);
        assert!(fit.residual <= 1e-12 * TAU * 50.0 * L);
        assert!(fit.f_corner.abs() < 1e-6);
        assert!(fit.corner_clamped);
    }

    #[test]
    fn corner_interpolation() {
        // X = m (f - 40) so F_C = 40 Hz; R grows linearly with f.
        let pts = (30..=60)
            .map(|f| {
                let f = f as f64;
                (
                    f + 0.5,
                    Complex64::new(1e-4 * (f + 0.5), 2e-5 * (f + 0.5 - 40.0)),
                )
            })
            .collect();
        let scan = ImpedanceScan::new(pts, "x").unwrap();
        let fit = fit_impedance(&scan, 50.0, 5.0).unwrap();
        assert!((fit.f_corner - 40.0).abs() < 1e-9);
        assert!((fit.r_lg - 4e-3).abs() < 1e-12);
        assert!(!fit.corner_clamped);
    }

    #[test]
    fn zero_reactance_rejected() {
        let pts = (40..=60)
            .map(|f| (f as f64, Complex64::new(1e-4, 0.0)))
            .collect();
        let scan = ImpedanceScan::new(pts, "flat").unwrap();
        assert!(matches!(
            fit_impedance(&scan, 50.0, 5.0),
            Err(Error::NonPositiveSlope { .. })
        ));
    }

    #[test]
    fn too_few_points() {
        let scan = ImpedanceScan::new(
            vec![
                (10.0, Complex64::new(R, 1.0)),
                (49.0, Complex64::new(R, 2.0)),
                (51.0, Complex64::new(R, 3.0)),
                (90.0, Complex64::new(R, 4.0)),
            ],
            "sparse",
        )
        .unwrap();
        assert!(matches!(
            fit_impedance(&scan, 50.0, 5.0),
            Err(Error::InsufficientData { found: 2, .. })
        ));
    }

    #[test]
    fn resonance_far_from_window_is_ignored() {
        // Parallel R-L-C tank resonating at 300 Hz in series with the grid R-L.
        let (rp, q, f0) = (2e-3, 100.0, 300.0);
        let w0 = TAU * f0;
        let lp = rp / (q * w0);
        let cp = 1.0 / (w0 * w0 * lp);
        let z = |f: f64| {
            let w = TAU * f;
            let y = Complex64::new(1.0 / rp, w * cp - 1.0 / (w * lp));
            Complex64::new(R, w * L) + y.inv()
        };
        let pts = (1..=600).map(|f| (f as f64, z(f as f64))).collect();
        let scan = ImpedanceScan::new(pts, "resonant").unwrap();
        let fit = fit_impedance(&scan, 50.0, 5.0).unwrap();

        // Below resonance the tank is inductive with an effective inductance
        // lp / (1 - (f/f0)^2); its 50 Hz contribution bounds the slope error.
        let tank_share = lp / (1.0 - (50.0f64 / f0).powi(2)) / L;
        assert!(tank_share < 0.01);
        assert!(((fit.l_g - L) / L).abs() < 0.01);
        assert!(fit.residual < 1e-3 * TAU * 50.0 * L);
    }

    #[test]
    fn referral() {
        let fit = fit_impedance(&rl_scan(1, 100), 50.0, 5.0).unwrap();
        let same = referred_to_lv(&fit, 1.0).unwrap();
        assert_eq!((same.r_lg, same.l_g), (fit.r_lg, fit.l_g));
        let r = refer(1.0, 1.0, 10.0).unwrap();
        assert!((r.r_lg - 0.01).abs() < 1e-18);
        let lv = refer(3.3, 7.7e-3, 33.0).unwrap();
        let hv = refer(lv.r_lg, lv.l_g, 1.0 / 33.0).unwrap();
        assert!(((hv.r_lg - 3.3) / 3.3).abs() <= 1e-15);
        assert!(((hv.l_g - 7.7e-3) / 7.7e-3).abs() <= 1e-15);
        assert!((refer_voltage(33e3, 33e3 / 690.0) - 690.0).abs() < 1e-9);
        assert!(refer(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let scan = rl_scan(45, 55);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let back = ImpedanceScan::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.points, scan.points);

        let spaced = "f_hz, re_ohm, im_ohm\n50, 1e-4, 2e-4\n";
        assert_eq!(
            ImpedanceScan::read_csv(spaced.as_bytes(), "m")
                .unwrap()
                .points
                .len(),
            1
        );

        let err = ImpedanceScan::read_csv("50,1,2\n51,1,3\n".as_bytes(), "noheader").unwrap_err();
        assert!(err.to_string().contains("f_hz, re_ohm, im_ohm"), "{err}");
        assert!(err.is_input_error());

        let err = ImpedanceScan::read_csv("f_hz,re_ohm,im_ohm\n50,1,2\n51,x,3\n".as_bytes(), "bad")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn aggregation_composes(a in 1u32..10, b in 1u32..10, id in 0.0f64..1.2, iq in -1.0f64..1.0) {
            let p = PlantAggregation { n_turbines: a * b, r_ls: 2.5e-4, l_s: 1.8e-5, id_c: id, iq_c: iq };
            let whole = aggregate(&p);
            let first = aggregate(&PlantAggregation { n_turbines: a, ..p });
            let second = aggregate(&PlantAggregation {
                n_turbines: b, r_ls: first.r_ls_eq, l_s: first.l_s_eq, id_c: first.id_eq, iq_c: first.iq_eq,
            });
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-14 * x.abs().max(y.abs()).max(1e-300);
            prop_assert!(close(whole.id_eq, second.id_eq));
            prop_assert!(close(whole.iq_eq, second.iq_eq));
            prop_assert!(close(whole.r_ls_eq, second.r_ls_eq));
            prop_assert!(close(whole.l_s_eq, second.l_s_eq));
        }

        #[test]
        fn fit_ignores_points_outside_window(extra in proptest::collection::vec((100.0f64..1000.0, -1.0f64..1.0, -1.0f64..1.0), 0..20)) {
            let base = rl_scan(30, 70);
            let fit = fit_impedance(&base, 50.0, 5.0).unwrap();
            let mut pts = base.points.clone();
            for (f, re, im) in extra {
                if pts.iter().all(|p| (p.0 - f).abs() > 1e-9) {
                    pts.push((f, Complex64::new(re, im)));
                }
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let widened = ImpedanceScan::new(pts, "w").unwrap();
            let fit2 = fit_impedance(&widened, 50.0, 5.0).unwrap();
            prop_assert_eq!(fit.slope_m, fit2.slope_m);
            prop_assert_eq!(fit.f_corner, fit2.f_corner);
            prop_assert_eq!(fit.n_points, fit2.n_points);
        }
    }
}
