use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::polygon::{self, Point};
use super::{par_map, Equilibrium, LyapunovSeed, Regime};
use crate::error::{Error, Result};
use crate::integrate::{flow, integrate_reverse, Direction, SolverSettings, SolverStats};
use crate::model::{RomState, StateScale};

/// Default distance (scaled units) within which a point counts as on the boundary.
pub const DEFAULT_EDGE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    /// Largest allowed gap between neighbouring vertices, scaled units.
    pub max_arc: f64,
    /// Largest distance (scaled units) an edge may stray from the curve it
    /// replaces, judged at the image of the edge's parameter midpoint.
    pub chord_tolerance: f64,
    /// Bisections of one edge before its parametrisation is restarted.
    pub max_depth: u32,
    /// Separation (scaled units) of the two end trajectories at which a
    /// restarted stage begins.
    pub restart_span: f64,
    pub max_restarts: u32,
    pub edge_tolerance: f64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            max_arc: 0.05,
            chord_tolerance: 2.5e-7,
            max_depth: 40,
            restart_span: 1e-4,
            max_restarts: 8,
            edge_tolerance: DEFAULT_EDGE_TOLERANCE,
        }
    }
}

impl RefineSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_arc > 0.0 && self.edge_tolerance >= 0.0) {
            return Err(Error::invalid(
                "refine",
                "max_arc must be > 0 and edge_tolerance >= 0",
            ));
        }
        if !(self.chord_tolerance > 0.0 && self.chord_tolerance < self.max_arc) {
            return Err(Error::invalid(
                "refine",
                "chord_tolerance must lie in (0, max_arc)",
            ));
        }
        if !(self.restart_span > 0.0 && self.restart_span < self.max_arc && self.max_depth > 0) {
            return Err(Error::invalid(
                "refine",
                "restart_span must lie in (0, max_arc) and max_depth must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementStats {
    pub seeds: usize,
    pub evaluations: usize,
    /// Deepest bisection within one stage.
    pub deepest: u32,
    /// Stages started from an intermediate time slice.
    pub restarts: usize,
    pub max_gap: f64,
    /// Edges longer than `max_arc` that could not be split.
    pub unresolved: usize,
    /// Short edges that could not be brought within the chord tolerance.
    pub coarse: usize,
    pub is_simple: bool,
    /// Polygon area in scaled units.
    pub area: f64,
    pub solver: SolverStats,
}

impl RefinementStats {
    fn merge(&mut self, o: &RefinementStats) {
        self.evaluations += o.evaluations;
        self.deepest = self.deepest.max(o.deepest);
        self.restarts += o.restarts;
        self.unresolved += o.unresolved;
        self.coarse += o.coarse;
        self.solver.merge(&o.solver);
    }
}

/// Reverse-time image of the seed ellipse, as a closed polyline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlroaBoundary {
    pub vertices: Vec<RomState>,
    /// Whitened ellipse angle each vertex descends from. Approximate for
    /// vertices from restarted stages, which start off the ellipse.
    pub seed_angles: Vec<f64>,
    pub horizon: f64,
    pub equilibrium: Equilibrium,
    pub level_c: f64,
    pub n_seeds: usize,
    pub solver: SolverSettings,
    pub refine: RefineSettings,
    pub scale: StateScale,
    pub stats: RefinementStats,
}

impl TlroaBoundary {
    pub fn scaled_vertices(&self) -> Vec<Point> {
        self.vertices
            .iter()
            .map(|&v| self.scale.scaled(v))
            .collect()
    }

    pub fn contains(&self, x: RomState) -> bool {
        polygon::contains(
            &self.scaled_vertices(),
            self.scale.scaled(x),
            self.refine.edge_tolerance,
        )
    }

    /// Index for repeated containment queries, in scaled coordinates.
    pub fn index(&self) -> polygon::PolygonIndex {
        polygon::PolygonIndex::new(self.scaled_vertices(), self.refine.edge_tolerance)
    }

    /// Scaled distance from `x` to the polyline.
    pub fn distance_to_boundary(&self, x: RomState) -> f64 {
        polygon::boundary_distance(&self.scaled_vertices(), self.scale.scaled(x))
    }

    pub fn area(&self) -> f64 {
        polygon::area(&self.scaled_vertices())
    }

    /// Containment against many points, reusing the scaled polygon.
    pub fn contains_all(&self, xs: &[RomState]) -> Vec<bool> {
        let index = self.index();
        xs.iter()
            .map(|&x| index.contains(self.scale.scaled(x)))
            .collect()
    }

    /// Closed polyline CSV, first vertex repeated at the end.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", BOUNDARY_HEADER.join(","))?;
        for v in self.vertices.iter().chain(self.vertices.first()) {
            writeln!(w, "{:.12e},{:.12e}", v.x1, v.x3)?;
        }
        Ok(())
    }
}

pub const BOUNDARY_HEADER: [&str; 2] = ["x1_rad", "x3_rad_per_s"];

/// Reads a closed polyline written by [`TlroaBoundary::write_csv`], dropping
/// the repeated closing vertex.
pub fn read_polyline_csv<R: std::io::Read>(reader: R, context: &str) -> Result<Vec<RomState>> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        context: context.to_string(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != BOUNDARY_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", BOUNDARY_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in records {
        let rec =
            rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        let mut v = [0.0; 2];
        for (slot, field) in v.iter_mut().zip(rec.iter()) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(line, format!("`{field}` is not a finite number")))?;
        }
        out.push(RomState::new(v[0], v[1]));
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    if out.len() < 3 {
        return Err(parse_err(
            0,
            format!(
                "a closed boundary needs at least 3 vertices, found {}",
                out.len()
            ),
        ));
    }
    Ok(out)
}

/// The start points an edge is parametrised over.
#[derive(Clone, Copy)]
enum Stage<'a> {
    /// Seed ellipse, parametrised by whitened angle.
    Ellipse(&'a LyapunovSeed),
    /// Straight segment between two states at an intermediate time, with the
    /// seed angles of its ends.
    Segment {
        from: RomState,
        to: RomState,
        angles: (f64, f64),
    },
}

impl Stage<'_> {
    fn point(&self, p: f64) -> RomState {
        match *self {
            Stage::Ellipse(seed) => seed.point_at(p),
            Stage::Segment { from, to, .. } => RomState::new(
                from.x1 + p * (to.x1 - from.x1),
                from.x3 + p * (to.x3 - from.x3),
            ),
        }
    }

    fn angle(&self, p: f64) -> f64 {
        match *self {
            Stage::Ellipse(_) => p.rem_euclid(TAU),
            Stage::Segment { angles: (a, b), .. } => a + p * (b - a),
        }
    }
}

struct Ctx<'a> {
    regime: &'a Regime,
    solver: &'a SolverSettings,
    refine: &'a RefineSettings,
    scale: StateScale,
}

impl Ctx<'_> {
    fn image(&self, x: RomState, remaining: f64, stats: &mut RefinementStats) -> Result<RomState> {
        let (y, st) = flow(
            x,
            remaining,
            &self.regime.coeffs,
            &self.regime.pll,
            self.solver,
            Direction::Reverse,
        )?;
        stats.evaluations += 1;
        stats.solver.merge(&st);
        Ok(y)
    }

    /// Appends the vertices strictly between parameters `p0` and `p1`.
    #[allow(clippy::too_many_arguments)]
    fn refine_edge(
        &self,
        stage: Stage,
        remaining: f64,
        (p0, i0): (f64, RomState),
        (p1, i1): (f64, RomState),
        depth: u32,
        restarts: u32,
        out: &mut Vec<(f64, RomState)>,
        stats: &mut RefinementStats,
    ) -> Result<()> {
        let r = self.refine;
        let chord = self.scale.distance(i0, i1);
        let short = chord <= r.max_arc;
        // Below this the parameter's end points are a few rounding steps apart
        // and the order of their images is no longer reliable.
        let unresolvable =
            self.scale.distance(stage.point(p0), stage.point(p1)) < MIN_PARAMETER_SEPARATION;
        if depth >= r.max_depth || unresolvable {
            return self.restart(stage, remaining, (p0, i0), (p1, i1), restarts, out, stats);
        }
        let pm = 0.5 * (p0 + p1);
        let im = self.image(stage.point(pm), remaining, stats)?;
        stats.deepest = stats.deepest.max(depth + 1);
        // A probe near the middle of a short edge's chord settles the edge. One
        // that lands by an end point says nothing about the rest of the arc,
        // which happens where the image races along the flow as the parameter
        // approaches a saddle's stable manifold.
        let balanced = self.scale.distance(i0, im).min(self.scale.distance(im, i1)) >= 0.25 * chord;
        let deviation = polygon::segment_distance(
            self.scale.scaled(i0),
            self.scale.scaled(i1),
            self.scale.scaled(im),
        );
        if short && balanced && deviation <= r.chord_tolerance {
            out.push((stage.angle(pm), im));
            return Ok(());
        }
        self.refine_edge(
            stage,
            remaining,
            (p0, i0),
            (pm, im),
            depth + 1,
            restarts,
            out,
            stats,
        )?;
        out.push((stage.angle(pm), im));
        self.refine_edge(
            stage,
            remaining,
            (pm, im),
            (p1, i1),
            depth + 1,
            restarts,
            out,
            stats,
        )
    }

    /// Continues an edge whose parameter interval is exhausted.
    ///
    /// Close to a saddle's stable manifold the image of a parameter interval
    /// narrower than rounding can still be long. The two end trajectories stay
    /// together for a while before the saddle pulls them apart, so the edge is
    /// re-parametrised along the straight segment joining them at the last
    /// common sample where they are within `restart_span`, and bisection
    /// resumes there with the remaining reverse time.
    #[allow(clippy::too_many_arguments)]
    fn restart(
        &self,
        stage: Stage,
        remaining: f64,
        (p0, i0): (f64, RomState),
        (p1, i1): (f64, RomState),
        restarts: u32,
        out: &mut Vec<(f64, RomState)>,
        stats: &mut RefinementStats,
    ) -> Result<()> {
        let r = self.refine;
        let short = self.scale.distance(i0, i1) <= r.max_arc;
        let give_up = |stats: &mut RefinementStats| {
            if short {
                stats.coarse += 1;
            } else {
                stats.unresolved += 1;
            }
            Ok(())
        };
        if restarts >= r.max_restarts {
            return give_up(stats);
        }
        let fine = SolverSettings {
            sample_interval: self.solver.sample_interval.min(RESTART_SAMPLE_INTERVAL),
            ..*self.solver
        };
        let run = |x| integrate_reverse(x, remaining, &self.regime.coeffs, &self.regime.pll, &fine);
        let (ta, tb) = (run(stage.point(p0))?, run(stage.point(p1))?);
        stats.evaluations += 2;
        stats.solver.merge(&ta.stats);
        stats.solver.merge(&tb.stats);
        let (sa, sb) = (&ta.samples, &tb.samples);
        let n = sa.len().min(sb.len());
        // Ends that never separate restart one sample short of the horizon,
        // where the remaining map is close to the identity.
        let Some(k) = (1..n.saturating_sub(1))
            .take_while(|&k| self.scale.distance(sa[k].state, sb[k].state) <= r.restart_span)
            .last()
        else {
            return give_up(stats);
        };
        let elapsed = -sa[k].t;
        if !(elapsed > 0.0 && elapsed < remaining) {
            return give_up(stats);
        }
        stats.restarts += 1;
        // Dense samples are interpolated; the restart states must sit on the
        // trajectories to integrator accuracy or the continuation drifts away
        // from the end images.
        let from = self.image(stage.point(p0), elapsed, stats)?;
        let to = self.image(stage.point(p1), elapsed, stats)?;
        let next = Stage::Segment {
            from,
            to,
            angles: (stage.angle(p0), stage.angle(p1)),
        };
        self.refine_edge(
            next,
            remaining - elapsed,
            (0.0, i0),
            (1.0, i1),
            0,
            restarts + 1,
            out,
            stats,
        )
    }
}

const RESTART_SAMPLE_INTERVAL: f64 = 1e-4;
/// Scaled distance between the end points of a parameter interval below which
/// bisection hands over to a restart.
const MIN_PARAMETER_SEPARATION: f64 = 1e-10;

/// Propagates the seed ellipse backwards for `horizon` and bisects each edge
/// in seed angle until it is no longer than `max_arc` and the image of its
/// middle angle lies within `chord_tolerance` of the chord.
pub fn compute_tlroa(
    seed: &LyapunovSeed,
    eq: &Equilibrium,
    regime: &Regime,
    horizon: f64,
    solver: &SolverSettings,
    refine: &RefineSettings,
) -> Result<TlroaBoundary> {
    solver.validate()?;
    refine.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be finite and >= 0"));
    }
    let n = seed.angles.len();
    if n < 3 {
        return Err(Error::invalid("seed", "needs at least 3 points"));
    }
    let ctx = Ctx {
        regime,
        solver,
        refine,
        scale: regime.pll.scale(),
    };
    let mut stats = RefinementStats {
        seeds: n,
        ..Default::default()
    };

    let images = par_map(&seed.angles, |&th| {
        let mut st = RefinementStats::default();
        ctx.image(seed.point_at(th), horizon, &mut st)
            .map(|y| (y, st))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    for (_, st) in &images {
        stats.merge(st);
    }
    let edges: Vec<usize> = (0..n).collect();
    let pieces = par_map(&edges, |&i| {
        let j = (i + 1) % n;
        let theta_b = if j == 0 {
            seed.angles[0] + TAU
        } else {
            seed.angles[j]
        };
        let mut out = vec![(seed.angles[i], images[i].0)];
        let mut st = RefinementStats::default();
        ctx.refine_edge(
            Stage::Ellipse(seed),
            horizon,
            (seed.angles[i], images[i].0),
            (theta_b, images[j].0),
            0,
            0,
            &mut out,
            &mut st,
        )
        .map(|()| (out, st))
    });

    let mut verts: Vec<(f64, RomState)> = Vec::new();
    for piece in pieces {
        let (out, st) = piece?;
        stats.merge(&st);
        verts.extend(out);
    }
    stats.max_gap = (0..verts.len())
        .map(|i| {
            ctx.scale
                .distance(verts[i].1, verts[(i + 1) % verts.len()].1)
        })
        .fold(0.0, f64::max);

    let mut boundary = TlroaBoundary {
        vertices: verts.iter().map(|v| v.1).collect(),
        seed_angles: verts.iter().map(|v| v.0).collect(),
        horizon,
        equilibrium: *eq,
        level_c: seed.level_c,
        n_seeds: n,
        solver: *solver,
        refine: *refine,
        scale: ctx.scale,
        stats,
    };
    let poly = boundary.scaled_vertices();
    boundary.stats.is_simple = polygon::is_simple(&poly);
    boundary.stats.area = polygon::area(&poly);

    if boundary.stats.unresolved > 0 {
        return Err(Error::RefinementDepthExceeded {
            unresolved: boundary.stats.unresolved,
            max_gap: boundary.stats.max_gap,
            partial: Box::new(boundary),
        });
    }
    Ok(boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PllParams;
    use crate::model::RomCoefficients;
    use crate::roa::{find_equilibrium, seed_with_auto_level, SeedSettings};

    fn setup() -> (Equilibrium, Regime, LyapunovSeed, SolverSettings) {
        let coeffs = RomCoefficients {
            m_eq: 0.988,
            t_m_eq: 218.0,
            te_amp_ki: 845.0,
            te_amp_kp: 0.0,
            te_offset: 0.0,
            d_eq_const: -0.69,
            d_eq_cos_amp: 14.1,
        };
        let regime = Regime::new(coeffs, PllParams::new(14.1, 845.0, 31.4).unwrap());
        let eq = find_equilibrium(&regime.coeffs, &regime.pll, RomState::new(0.0, 0.0)).unwrap();
        let solver = SolverSettings::default();
        let settings = SeedSettings {
            n_points: 64,
            ..SeedSettings::default()
        };
        let seed = seed_with_auto_level(&eq, &regime, &solver, &settings).unwrap();
        (eq, regime, seed, solver)
    }

    fn coarse() -> RefineSettings {
        RefineSettings {
            chord_tolerance: 1e-4,
            ..RefineSettings::default()
        }
    }

    #[test]
    fn zero_horizon_is_the_seed_ellipse() {
        let (eq, regime, seed, solver) = setup();
        let b = compute_tlroa(&seed, &eq, &regime, 0.0, &solver, &coarse()).unwrap();
        assert!(b.vertices.len() >= seed.angles.len());
        for v in &b.vertices {
            assert!((seed.value(*v) - seed.level_c).abs() <= 1e-9 * seed.level_c);
        }
        assert!(b.stats.is_simple);
        assert!(b.contains(eq.state));
    }

    #[test]
    fn short_horizon_contains_seed_and_rejects_outside_points() {
        let (eq, regime, seed, solver) = setup();
        let b = compute_tlroa(&seed, &eq, &regime, 0.3, &solver, &coarse()).unwrap();
        assert_eq!(b.stats.unresolved, 0);
        assert!(b.stats.is_simple);
        assert!(b.stats.max_gap <= b.refine.max_arc);
        assert!(b.contains_all(&seed.points).into_iter().all(|c| c));

        // Nudge edge midpoints outward along the normal of a clockwise or
        // counter-clockwise polygon alike.
        let poly = b.scaled_vertices();
        let orient = polygon::signed_area(&poly).signum();
        let push = 10.0 * b.refine.edge_tolerance;
        for i in (0..poly.len()).step_by(97) {
            let (a, c) = (poly[i], poly[(i + 1) % poly.len()]);
            let (dx, dy) = (c[0] - a[0], c[1] - a[1]);
            let len = dx.hypot(dy);
            let normal = [orient * dy / len, -orient * dx / len];
            let p = [
                0.5 * (a[0] + c[0]) + push * normal[0],
                0.5 * (a[1] + c[1]) + push * normal[1],
            ];
            if polygon::boundary_distance(&poly, p) > 5.0 * b.refine.edge_tolerance {
                assert!(
                    !polygon::contains(&poly, p, b.refine.edge_tolerance),
                    "edge {i}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_horizon() {
        let (eq, regime, seed, solver) = setup();
        for h in [-1.0, f64::NAN, f64::INFINITY] {
            assert!(compute_tlroa(&seed, &eq, &regime, h, &solver, &coarse()).is_err());
        }
    }

    #[test]
    fn csv_round_trip() {
        let (eq, regime, seed, solver) = setup();
        let b = compute_tlroa(&seed, &eq, &regime, 0.2, &solver, &coarse()).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().nth(1), text.lines().last());
        let back = read_polyline_csv(buf.as_slice(), "boundary").unwrap();
        assert_eq!(back.len(), b.vertices.len());
        for (u, v) in back.iter().zip(&b.vertices) {
            assert!((u.x1 - v.x1).abs() <= 1e-11 * v.x1.abs().max(1.0));
            assert!((u.x3 - v.x3).abs() <= 1e-11 * v.x3.abs().max(1.0));
        }
    }

    #[test]
    fn csv_errors_name_the_problem() {
        let err = read_polyline_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes(), "b.csv").unwrap_err();
        assert!(err.to_string().contains("x1_rad,x3_rad_per_s"), "{err}");
        let err = read_polyline_csv("x1_rad,x3_rad_per_s\n1,2\n3,4\n1,2\n".as_bytes(), "b.csv")
            .unwrap_err();
        assert!(err.to_string().contains("at least 3"), "{err}");
        let err = read_polyline_csv("x1_rad,x3_rad_per_s\n1,2\n3,x\n5,6\n".as_bytes(), "b.csv")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn refine_settings_are_checked() {
        let bad = [
            RefineSettings {
                max_arc: 0.0,
                ..RefineSettings::default()
            },
            RefineSettings {
                chord_tolerance: 0.1,
                ..RefineSettings::default()
            },
            RefineSettings {
                restart_span: 0.0,
                ..RefineSettings::default()
            },
            RefineSettings {
                max_depth: 0,
                ..RefineSettings::default()
            },
        ];
        for r in bad {
            assert!(r.validate().is_err(), "{r:?}");
        }
        assert!(RefineSettings::default().validate().is_ok());
    }
}
