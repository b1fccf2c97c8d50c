//! Planar polygon geometry on scaled coordinates.

pub type Point = [f64; 2];

/// Even-odd ray casting. Points within `edge_tolerance` of an edge count as inside.
pub fn contains(poly: &[Point], p: Point, edge_tolerance: f64) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[j], poly[i]);
        if segment_distance(a, b, p) <= edge_tolerance {
            return true;
        }
        if (b[1] > p[1]) != (a[1] > p[1]) {
            let x_cross = b[0] + (p[1] - b[1]) * (a[0] - b[0]) / (a[1] - b[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Horizontal strips over a closed polyline, each listing the edges that come
/// within `edge_tolerance` of it. Only the edges in a point's strip can cross
/// its horizontal ray or lie within tolerance of it, so `contains` gives the
/// same answer as the free function at a fraction of the cost.
#[derive(Clone, Debug)]
pub struct PolygonIndex {
    poly: Vec<Point>,
    edge_tolerance: f64,
    y0: f64,
    dy: f64,
    strips: Vec<Vec<u32>>,
}

impl PolygonIndex {
    pub fn new(poly: Vec<Point>, edge_tolerance: f64) -> Self {
        let n = poly.len();
        let (lo, hi) = poly
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[1]), hi.max(p[1]))
            });
        let n_strips = (n / 4).clamp(1, 1 << 16);
        let (y0, y1) = (lo - edge_tolerance, hi + edge_tolerance);
        let dy = if y1 > y0 {
            (y1 - y0) / n_strips as f64
        } else {
            1.0
        };
        let mut index = Self {
            poly,
            edge_tolerance,
            y0,
            dy,
            strips: vec![Vec::new(); if n >= 3 { n_strips } else { 0 }],
        };
        if n >= 3 {
            for k in 0..n {
                let (a, b) = (index.poly[k], index.poly[(k + 1) % n]);
                let first = index.strip(a[1].min(b[1]) - edge_tolerance);
                let last = index.strip(a[1].max(b[1]) + edge_tolerance);
                for strip in &mut index.strips[first..=last] {
                    strip.push(k as u32);
                }
            }
        }
        index
    }

    fn strip(&self, y: f64) -> usize {
        (((y - self.y0) / self.dy).floor().max(0.0) as usize)
            .min(self.strips.len().saturating_sub(1))
    }

    pub fn vertices(&self) -> &[Point] {
        &self.poly
    }

    pub fn contains(&self, p: Point) -> bool {
        if self.strips.is_empty()
            || !(p[1] >= self.y0 && p[1] <= self.y0 + self.dy * self.strips.len() as f64)
        {
            return false;
        }
        let n = self.poly.len();
        let mut inside = false;
        for &k in &self.strips[self.strip(p[1])] {
            let (a, b) = (self.poly[k as usize], self.poly[(k as usize + 1) % n]);
            if segment_distance(a, b, p) <= self.edge_tolerance {
                return true;
            }
            if (b[1] > p[1]) != (a[1] > p[1]) {
                let x_cross = b[0] + (p[1] - b[1]) * (a[0] - b[0]) / (a[1] - b[1]);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// Signed shoelace area; positive for counter-clockwise vertices.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

pub fn area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

pub fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Distance from `p` to the closed polyline.
pub fn boundary_distance(poly: &[Point], p: Point) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(poly[i], poly[(i + 1) % n], p))
        .fold(f64::INFINITY, f64::min)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Whether no two non-adjacent edges of the closed polyline touch.
///
/// Edges are sorted by their left end so only x-overlapping pairs are tested.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut edges: Vec<(usize, f64, f64)> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (i, a[0].min(b[0]), a[0].max(b[0]))
        })
        .collect();
    edges.sort_by(|x, y| x.1.total_cmp(&y.1));
    for (k, &(i, _, hi)) in edges.iter().enumerate() {
        for &(j, lo2, _) in &edges[k + 1..] {
            if lo2 > hi {
                break;
            }
            let adjacent = (i + 1) % n == j || (j + 1) % n == i;
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}
