//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any binding criterion fails. Everything runs inside one test so
//! the timings are not polluted by other tests sharing the machine.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlroa_core::integrate::{flow, Direction};
use tlroa_core::linalg::Matrix2;
use tlroa_core::network::{fit_impedance, ImpedanceScan};
use tlroa_core::roa::{
    converges, find_equilibrium, lyapunov_residual, polygon, solve_lyapunov, LyapunovSeed,
    StateBox, TlroaBoundary,
};
use tlroa_core::scenario::Study;
use tlroa_core::RomState;

const CCT_TARGET_S: f64 = 0.89;

fn study(name: &str) -> Study {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../cli/examples/{name}.toml"));
    Study::from_path(&path).expect("bundled scenario loads")
}

struct Report {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, binding: bool, detail: String) {
        let line = format!(
            "{} criterion {id}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        println!("{line}");
        if !pass && binding {
            self.failed.push(line.clone());
        }
        self.lines.push(line);
    }
}

/// Largest |x2| seen by any integration, against the saturation bound.
#[derive(Default)]
struct Saturation {
    integrations: usize,
    violations: usize,
}

impl Saturation {
    fn observe(&mut self, max_abs_x2: f64, x2_max: f64) {
        self.integrations += 1;
        if max_abs_x2 > x2_max {
            self.violations += 1;
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn impedance_fit(report: &mut Report) {
    let (r, l) = (98.5e-6, 2.17e-6);
    let t = Instant::now();
    let points = (1..=100)
        .map(|k| {
            let f = k as f64;
            (f, Complex64::new(r, TAU * f * l))
        })
        .collect();
    let scan = ImpedanceScan::new(points, "synthetic").unwrap();
    let fit = fit_impedance(&scan, 50.0, 5.0).unwrap();
    let elapsed = t.elapsed();
    let (er, el) = ((fit.r_lg - r).abs() / r, (fit.l_g - l).abs() / l);
    report.record(
        "1 impedance fit",
        er < 1e-3 && el < 1e-3 && secs(elapsed) < 1.0,
        true,
        format!(
            "r_lg rel err {er:.2e}, l_g rel err {el:.2e} (< 1e-3), {:.3} s (< 1 s)",
            secs(elapsed)
        ),
    );
}

/// Uniform draw from the filled seed ellipse.
fn inside_seed(seed: &LyapunovSeed, rng: &mut impl Rng) -> RomState {
    let theta = rng.gen_range(0.0..TAU);
    let rho = rng.gen::<f64>().sqrt() * 0.999;
    let on = seed.point_at(theta);
    RomState::new(
        seed.center.x1 + rho * (on.x1 - seed.center.x1),
        seed.center.x3 + rho * (on.x3 - seed.center.x3),
    )
}

fn round_trip(report: &mut Report, st: &Study, seed: &LyapunovSeed, sat: &mut Saturation) {
    let horizon = 2.25;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (c, p, s) = (&st.post_regime.coeffs, &st.post_regime.pll, st.solver());
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = inside_seed(seed, &mut rng);
        let (back, sb) = flow(x, horizon, c, p, s, Direction::Reverse).unwrap();
        let (again, sf) = flow(back, horizon, c, p, s, Direction::Forward).unwrap();
        sat.observe(sb.max_abs_x2, p.x2_max);
        sat.observe(sf.max_abs_x2, p.x2_max);
        worst = worst
            .max((again.x1 - x.x1).abs())
            .max((again.x3 - x.x3).abs());
    }
    let elapsed = t.elapsed();
    report.record(
        "2 reverse/forward round trip",
        worst < 1e-6 && secs(elapsed) < 30.0,
        true,
        format!(
            "200 states, max per-coordinate error {worst:.2e} (< 1e-6), {:.2} s (< 30 s)",
            secs(elapsed)
        ),
    );
}

fn lyapunov(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Instant::now();
    let (mut worst, mut min_eig, mut drawn) = (0.0f64, f64::INFINITY, 0);
    while drawn < 1000 {
        let a = Matrix2::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        if !a.eigenvalues().iter().all(|l| l.re < -0.1) {
            continue;
        }
        drawn += 1;
        let p = solve_lyapunov(&a, &Matrix2::IDENTITY).unwrap();
        worst = worst.max(lyapunov_residual(&a, &p, &Matrix2::IDENTITY).norm_inf());
        let e = p.symmetric_eigenvalues();
        min_eig = min_eig.min(e[0].min(e[1]));
    }
    let elapsed = t.elapsed();
    report.record(
        "3 Lyapunov solver",
        worst < 1e-10 && min_eig > 0.0 && secs(elapsed) < 5.0,
        true,
        format!(
            "1000 draws, max residual {worst:.2e} (< 1e-10), min eig(P) {min_eig:.2e} (> 0), {:.3} s (< 5 s)",
            secs(elapsed)
        ),
    );
}

fn violations(outer: &TlroaBoundary, inner: &TlroaBoundary) -> usize {
    outer
        .contains_all(&inner.vertices)
        .iter()
        .filter(|&&c| !c)
        .count()
}

fn nesting(
    report: &mut Report,
    st: &Study,
    seed: &LyapunovSeed,
    sat: &mut Saturation,
) -> Vec<TlroaBoundary> {
    let t = Instant::now();
    let bs: Vec<TlroaBoundary> = [0.5, 1.25, 2.25]
        .iter()
        .map(|&h| st.tlroa(seed, h).unwrap())
        .collect();
    let v01 = violations(&bs[1], &bs[0]);
    let v12 = violations(&bs[2], &bs[1]);
    let elapsed = t.elapsed();
    for b in &bs {
        sat.observe(b.stats.solver.max_abs_x2, st.pll.x2_max);
    }
    let simple = bs.iter().all(|b| b.stats.is_simple);
    let areas: Vec<String> = bs.iter().map(|b| format!("{:.3}", b.area())).collect();
    report.record(
        "4 nesting",
        v01 == 0 && v12 == 0 && simple && secs(elapsed) < 120.0,
        true,
        format!(
            "violations 0.5s->1.25s {v01}, 1.25s->2.25s {v12} (= 0), simple {simple}, areas [{}], {:.1} s (< 120 s)",
            areas.join(", "),
            secs(elapsed)
        ),
    );
    bs
}

fn bounding_box(b: &TlroaBoundary, margin: f64) -> StateBox {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &b.vertices {
        lo = [lo[0].min(v.x1), lo[1].min(v.x3)];
        hi = [hi[0].max(v.x1), hi[1].max(v.x3)];
    }
    let pad = |i: usize| margin * (hi[i] - lo[i]);
    StateBox {
        x1: [lo[0] - pad(0), hi[0] + pad(0)],
        x3: [lo[1] - pad(1), hi[1] + pad(1)],
    }
}

/// Inward nudges tried on a vertex that misses the seed set.
const NUDGES: [f64; 4] = [1e-12, 1e-10, 1e-8, 1e-6];

/// Moves vertex `i` of the scaled polygon a distance `d` along its inward
/// normal. `side` is the sign of the polygon's signed area.
fn nudge(b: &TlroaBoundary, poly: &[polygon::Point], side: f64, i: usize, d: f64) -> RomState {
    let n = poly.len();
    let (prev, next, v) = (poly[(i + n - 1) % n], poly[(i + 1) % n], poly[i]);
    let t = [next[0] - prev[0], next[1] - prev[1]];
    let len = t[0].hypot(t[1]);
    // Counter-clockwise vertices have the interior on the left.
    b.scale
        .unscaled([v[0] - side * d * t[1] / len, v[1] + side * d * t[0] / len])
}

fn oracle(
    report: &mut Report,
    st: &Study,
    seed: &LyapunovSeed,
    b: &TlroaBoundary,
    sat: &mut Saturation,
) {
    let (c, p, s) = (&st.post_regime.coeffs, &st.post_regime.pll, st.solver());
    let crit = &st.config.roa.seed.criterion;
    let settle = st.config.roa.seed.verify_horizon;
    let reach = 2.5;
    let t = Instant::now();

    // Every vertex must reach the certified seed set within `reach`, and from
    // there the equilibrium ball.
    let (mut missed_seed, mut missed_ball) = (0, 0);
    let mut misses = Vec::new();
    for (i, &v) in b.vertices.iter().enumerate() {
        let (end, stats) = flow(v, reach, c, p, s, Direction::Forward).unwrap();
        sat.observe(stats.max_abs_x2, p.x2_max);
        if !seed.contains(end) {
            missed_seed += 1;
            misses.push(i);
        }
        if !converges(end, &st.equilibrium, &st.post_regime, settle, s, crit) {
            missed_ball += 1;
        }
    }

    // Grid agreement away from the boundary: inside points converge once the
    // seed has had time to settle; outside points do not converge within the
    // horizon itself.
    let region = bounding_box(b, 0.05);
    let n = [61, 61];
    let long = st.oracle(region, n, b.horizon + settle).unwrap();
    let short = st.oracle(region, n, b.horizon).unwrap();
    let band = 2.0 * b.refine.max_arc;
    let (mut compared, mut agree) = (0, 0);
    let inside = b.contains_all(&long.points);
    for (k, &x) in long.points.iter().enumerate() {
        if b.distance_to_boundary(x) <= band {
            continue;
        }
        compared += 1;
        let ok = if inside[k] {
            long.converged[k]
        } else {
            !short.converged[k]
        };
        agree += usize::from(ok);
    }
    let elapsed = t.elapsed();
    let agreement = agree as f64 / compared as f64;
    if missed_seed > 0 {
        // Not part of the criterion or its timing: how far each miss is from
        // the separatrix, as the smallest nudge along the inward normal that reaches the seed.
        let mut rescued = [0usize; NUDGES.len()];
        let poly = b.scaled_vertices();
        let side = polygon::signed_area(&poly).signum();
        for &i in &misses {
            let hit = NUDGES.iter().position(|&d| {
                let (end, stats) = flow(
                    nudge(b, &poly, side, i, d),
                    reach,
                    c,
                    p,
                    s,
                    Direction::Forward,
                )
                .unwrap();
                sat.observe(stats.max_abs_x2, p.x2_max);
                seed.contains(end)
            });
            if let Some(i) = hit {
                rescued[i] += 1;
            }
        }
        let parts: Vec<String> = NUDGES
            .iter()
            .zip(rescued)
            .map(|(d, n)| format!("{n} at {d:.0e}"))
            .collect();
        println!(
            "note: vertices missing the seed set that reach it after a nudge along the inward normal (scaled units): {}; {} not rescued",
            parts.join(", "),
            missed_seed - rescued.iter().sum::<usize>()
        );
    }
    report.record(
        "5 boundary inside oracle region",
        missed_seed == 0 && missed_ball == 0 && agreement >= 0.99 && secs(elapsed) < 300.0,
        true,
        format!(
            "{} vertices: {missed_seed} miss the seed set within {reach} s, {missed_ball} then miss the ball (= 0); \
             grid agreement {:.2}% over {compared} points outside the {band} band (>= 99%), {:.1} s (< 300 s)",
            b.vertices.len(),
            100.0 * agreement,
            secs(elapsed)
        ),
    );
}

fn cct_and_area(
    report: &mut Report,
    case1: &Study,
    seed1: &LyapunovSeed,
    b1: &TlroaBoundary,
    sat: &mut Saturation,
) {
    let case2 = study("case2");
    let seed2 = case2.seed().unwrap();
    let b2 = case2.tlroa(&seed2, b1.horizon).unwrap();
    sat.observe(b2.stats.solver.max_abs_x2, case2.pll.x2_max);
    let cct1 = case1.cct(b1).unwrap().seconds();
    let cct2 = case2.cct(&b2).unwrap().seconds();
    let rel = (cct1 - CCT_TARGET_S).abs() / CCT_TARGET_S;
    report.record(
        "6 CCT value (case-1 0.89 s +/- 20%)",
        rel <= 0.2,
        false,
        format!(
            "case-1 {cct1:.4} s, {:.0}% from target; not binding when missed",
            100.0 * rel
        ),
    );
    report.record(
        "6 CCT ordering",
        cct2 < cct1,
        true,
        format!("case-2 {cct2:.4} s < case-1 {cct1:.4} s"),
    );
    let seed_only = case1.tlroa(seed1, 0.0).unwrap();
    let cct0 = case1.cct(&seed_only).unwrap().seconds();
    report.record(
        "6 CCT monotonicity",
        cct0 < cct1,
        true,
        format!("seed ellipse {cct0:.4} s < 2.25 s boundary {cct1:.4} s"),
    );
    let (a1, a2) = (b1.area(), b2.area());
    report.record(
        "7 weak-grid shrinkage",
        a2 < a1,
        true,
        format!("area case-2 {a2:.3} < case-1 {a1:.3} (scaled units, 2.25 s)"),
    );
}

fn periodicity(report: &mut Report, st: &Study) {
    let (c, p) = (&st.post_regime.coeffs, &st.post_regime.pll);
    let base = st.equilibrium;
    let mut worst_x3: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut branches = Vec::new();
    for k in [-1i64, 0, 1] {
        let guess = RomState::new(base.state.x1 + k as f64 * TAU, base.state.x3);
        let e = find_equilibrium(c, p, guess).unwrap();
        worst_x3 = worst_x3.max((e.state.x3 - base.state.x3).abs());
        worst_res = worst_res.max((e.residual_norm - base.residual_norm).abs());
        branches.push(e.branch_index - base.branch_index);
    }
    report.record(
        "8 equilibrium periodicity",
        worst_x3 <= 1e-9 && worst_res <= 1e-9 && branches == [-1, 0, 1],
        true,
        format!("x3 diff {worst_x3:.1e}, residual diff {worst_res:.1e} (<= 1e-9), branch offsets {branches:?}"),
    );
}

#[test]
fn acceptance() {
    let mut report = Report {
        lines: Vec::new(),
        failed: Vec::new(),
    };
    let mut sat = Saturation::default();

    impedance_fit(&mut report);

    let case1 = study("case1");
    let seed1 = case1.seed().unwrap();
    let tr = case1.simulate().unwrap();
    sat.observe(tr.stats.max_abs_x2, case1.pll.x2_max);
    let sample_violations = tr.saturation_violations(case1.pll.x2_max);

    round_trip(&mut report, &case1, &seed1, &mut sat);
    lyapunov(&mut report);
    let bs = nesting(&mut report, &case1, &seed1, &mut sat);
    oracle(&mut report, &case1, &seed1, &bs[2], &mut sat);
    cct_and_area(&mut report, &case1, &seed1, &bs[2], &mut sat);
    periodicity(&mut report, &case1);

    report.record(
        "9 saturation",
        sat.violations == 0 && sample_violations == 0,
        true,
        format!(
            "{} integrations over the bound, {sample_violations} trajectory samples over the bound (= 0), {} integrations checked",
            sat.violations, sat.integrations
        ),
    );

    assert!(report.failed.is_empty(), "failed: {:#?}", report.failed);
    assert!(!report.lines.is_empty());
}
