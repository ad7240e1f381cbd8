//! Closed 2D garment outlines made of cubic Bézier and circular-arc pieces.

use nalgebra::{Point2, Vector2};

/// One piece of a boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    /// Cubic Bézier `[start, control1, control2, end]`.
    Bezier([Point2<f64>; 4]),
    /// Circular arc swept from `start_angle` by `sweep` radians
    /// (positive = counter-clockwise).
    Arc {
        center: Point2<f64>,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Segment {
    pub fn line(a: Point2<f64>, b: Point2<f64>) -> Self {
        let d = b - a;
        Segment::Bezier([a, a + d / 3.0, a + d * (2.0 / 3.0), b])
    }

    pub fn start(&self) -> Point2<f64> {
        self.point_at(0.0)
    }

    pub fn end(&self) -> Point2<f64> {
        self.point_at(1.0)
    }

    /// Point at curve parameter `t` in `[0, 1]`.
    pub fn point_at(&self, t: f64) -> Point2<f64> {
        match self {
            Segment::Bezier([p0, p1, p2, p3]) => {
                let s = 1.0 - t;
                let c = p0.coords * (s * s * s)
                    + p1.coords * (3.0 * s * s * t)
                    + p2.coords * (3.0 * s * t * t)
                    + p3.coords * (t * t * t);
                Point2::from(c)
            }
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let a = start_angle + sweep * t;
                center + Vector2::new(a.cos(), a.sin()) * *radius
            }
        }
    }

    fn derivative_at(&self, t: f64) -> Vector2<f64> {
        match self {
            Segment::Bezier([p0, p1, p2, p3]) => {
                let s = 1.0 - t;
                (p1 - p0) * (3.0 * s * s) + (p2 - p1) * (6.0 * s * t) + (p3 - p2) * (3.0 * t * t)
            }
            Segment::Arc {
                radius,
                start_angle,
                sweep,
                ..
            } => {
                let a = start_angle + sweep * t;
                Vector2::new(-a.sin(), a.cos()) * (radius * sweep)
            }
        }
    }

    /// Arc length.
    pub fn length(&self) -> f64 {
        match self {
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
            Segment::Bezier(_) => {
                // 8 panels of 5-point Gauss-Legendre
                const NODES: [f64; 5] = [
                    0.0,
                    -0.538_469_310_105_683_1,
                    0.538_469_310_105_683_1,
                    -0.906_179_845_938_664,
                    0.906_179_845_938_664,
                ];
                const WEIGHTS: [f64; 5] = [
                    0.568_888_888_888_888_9,
                    0.478_628_670_499_366_5,
                    0.478_628_670_499_366_5,
                    0.236_926_885_056_189_1,
                    0.236_926_885_056_189_1,
                ];
                let panels = 8;
                let h = 1.0 / panels as f64;
                let mut total = 0.0;
                for p in 0..panels {
                    let mid = (p as f64 + 0.5) * h;
                    for (x, w) in NODES.iter().zip(WEIGHTS) {
                        total += w * 0.5 * h * self.derivative_at(mid + 0.5 * h * x).norm();
                    }
                }
                total
            }
        }
    }

    /// Samples `[start, ..)` (end point excluded) so that no chord exceeds
    /// `max_len` and the chordal deviation stays below `tolerance`.
    fn sample_into(&self, tolerance: f64, max_len: f64, out: &mut Vec<Point2<f64>>) {
        match self {
            Segment::Arc { radius, sweep, .. } => {
                let len = radius * sweep.abs();
                let by_len = (len / max_len).ceil() as usize;
                // sagitta r(1 - cos(θ/2)) <= tol
                let by_tol = if *radius > tolerance {
                    let max_step = 2.0 * (1.0 - tolerance / radius).acos();
                    (sweep.abs() / max_step).ceil() as usize
                } else {
                    1
                };
                let mut n = by_len.max(by_tol).max(2);
                // even count puts a sample on the arc midpoint
                if n % 2 == 1 {
                    n += 1;
                }
                for k in 0..n {
                    out.push(self.point_at(k as f64 / n as f64));
                }
            }
            Segment::Bezier([p0, p1, p2, p3]) => {
                let curvature = ((p0.coords - p1.coords * 2.0 + p2.coords).norm())
                    .max((p1.coords - p2.coords * 2.0 + p3.coords).norm())
                    * 6.0;
                let by_tol = (curvature / (8.0 * tolerance)).sqrt().ceil() as usize;

                const TABLE: usize = 512;
                let mut cumulative = Vec::with_capacity(TABLE + 1);
                cumulative.push(0.0);
                let mut prev = *p0;
                for j in 1..=TABLE {
                    let p = self.point_at(j as f64 / TABLE as f64);
                    cumulative.push(cumulative[j - 1] + (p - prev).norm());
                    prev = p;
                }
                let total = cumulative[TABLE];
                let by_len = (total / max_len).ceil() as usize;
                let n = by_len.max(by_tol).max(1);
                out.push(*p0);
                for k in 1..n {
                    let s = total * k as f64 / n as f64;
                    let j = cumulative.partition_point(|&c| c < s).clamp(1, TABLE);
                    let (c0, c1) = (cumulative[j - 1], cumulative[j]);
                    let frac = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
                    out.push(self.point_at((j as f64 - 1.0 + frac) / TABLE as f64));
                }
            }
        }
    }
}

/// Ordered closed outline. Segment `i` ends where segment `i + 1` starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub segments: Vec<Segment>,
}

impl Boundary {
    pub fn perimeter(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Flattens to a closed polyline (last point not repeated). Chords are
    /// at most `max_len` long and deviate from the curve by at most
    /// `tolerance`; every segment endpoint and every arc midpoint is a
    /// polyline vertex.
    pub fn flatten(&self, tolerance: f64, max_len: f64) -> Vec<Point2<f64>> {
        let mut out = Vec::new();
        for seg in &self.segments {
            seg.sample_into(tolerance, max_len, &mut out);
        }
        out
    }

    /// Twice the signed area of the default flattening; positive for
    /// counter-clockwise outlines.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.flatten(1e-4, f64::INFINITY))
    }
}

/// Shoelace area, positive for counter-clockwise loops.
pub fn signed_area(loop_pts: &[Point2<f64>]) -> f64 {
    let n = loop_pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = loop_pts[i];
        let q = loop_pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    0.5 * a
}

fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point2<f64>, q: Point2<f64>, r: Point2<f64>, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// True when the closed polyline has no intersections between
/// non-adjacent edges and no repeated vertices.
pub fn is_simple_loop(pts: &[Point2<f64>]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            // skip neighbours sharing an endpoint
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            let lo = Point2::new(a.x.min(b.x), a.y.min(b.y));
            let hi = Point2::new(a.x.max(b.x), a.y.max(b.y));
            if c.x.max(d.x) < lo.x || c.x.min(d.x) > hi.x || c.y.max(d.y) < lo.y || c.y.min(d.y) > hi.y {
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}
