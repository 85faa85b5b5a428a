//! Planar polylines and polygons.

use cab_core::Point2;

/// Closed simple polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
    bbox: [f64; 4],
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &vertices {
            bbox[0] = bbox[0].min(p[0]);
            bbox[1] = bbox[1].min(p[1]);
            bbox[2] = bbox[2].max(p[0]);
            bbox[3] = bbox[3].max(p[1]);
        }
        Self { vertices, bbox }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Even-odd ray casting. Points on an edge may fall on either side.
    pub fn contains(&self, p: Point2) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        if p[0] < x0 || p[0] > x1 || p[1] < y0 || p[1] > y1 {
            return false;
        }
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// No two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return false;
                }
            }
        }
        true
    }

    pub fn transformed(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self::new(self.vertices.iter().map(|&p| f(p)).collect())
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point2>,
    pub s: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Self {
        let mut s = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += dist(points[i - 1], *p);
            }
            s.push(acc);
        }
        Self { points, s }
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    /// Point and unit tangent at arc length `s`, clamped to the ends.
    pub fn at(&self, s: f64) -> (Point2, Point2) {
        let n = self.points.len();
        let s = s.clamp(0.0, self.length());
        let i = match self.s.partition_point(|&v| v <= s) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.s[i + 1] - self.s[i];
        let t = if seg > 0.0 { (s - self.s[i]) / seg } else { 0.0 };
        let dir = [(b[0] - a[0]) / seg, (b[1] - a[1]) / seg];
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], dir)
    }

    /// Arc length of the closest point, searching segments from `hint`
    /// onward until they start more than `window` metres past the best match.
    pub fn project(&self, p: Point2, hint: usize, window: f64) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0.0, hint);
        let hint = hint.min(self.s.len().saturating_sub(2));
        best.1 = self.s[hint];
        for i in hint..self.points.len().saturating_sub(1) {
            if self.s[i] > best.1 + window {
                break;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d = dist(p, q);
            if d < best.0 {
                best = (d, self.s[i] + t * (self.s[i + 1] - self.s[i]), i);
            }
        }
        (best.1, best.2)
    }

    /// Signed turning angle at each interior vertex, positive to the left.
    pub fn turning(&self) -> Vec<f64> {
        self.points
            .windows(3)
            .map(|w| {
                let h1 = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
                let h2 = (w[2][1] - w[1][1]).atan2(w[2][0] - w[1][0]);
                cab_core::kinematics::angle_diff(h2, h1)
            })
            .collect()
    }

    /// Band between lateral offsets `lo < hi` (left positive) as a polygon.
    pub fn band(&self, lo: f64, hi: f64) -> Polygon {
        let normals = self.vertex_normals();
        let mut out: Vec<Point2> =
            self.points.iter().zip(&normals).map(|(p, n)| [p[0] + hi * n[0], p[1] + hi * n[1]]).collect();
        out.extend(self.points.iter().zip(&normals).rev().map(|(p, n)| [p[0] + lo * n[0], p[1] + lo * n[1]]));
        Polygon::new(out)
    }

    /// Left unit normals, averaged over adjacent segments and scaled so that
    /// offset polylines stay parallel at corners.
    fn vertex_normals(&self) -> Vec<Point2> {
        let p = &self.points;
        let n = p.len();
        let seg_normal = |i: usize| {
            let (a, b) = (p[i], p[i + 1]);
            let l = dist(a, b);
            [-(b[1] - a[1]) / l, (b[0] - a[0]) / l]
        };
        (0..n)
            .map(|i| {
                if i == 0 {
                    seg_normal(0)
                } else if i == n - 1 {
                    seg_normal(n - 2)
                } else {
                    let (a, b) = (seg_normal(i - 1), seg_normal(i));
                    let k = 1.0 + a[0] * b[0] + a[1] * b[1];
                    [(a[0] + b[0]) / k, (a[1] + b[1]) / k]
                }
            })
            .collect()
    }
}

pub fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Builds a centreline from a start pose by appending straight runs and
/// circular arcs. Arcs are sampled every `ARC_STEP` radians.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    points: Vec<Point2>,
    heading: f64,
}

const ARC_STEP: f64 = 0.05;

impl PathBuilder {
    pub fn new(start: Point2, heading: f64) -> Self {
        Self { points: vec![start], heading }
    }

    fn last(&self) -> Point2 {
        *self.points.last().expect("non-empty")
    }

    pub fn straight(mut self, len: f64) -> Self {
        let p = self.last();
        self.points.push([p[0] + len * self.heading.cos(), p[1] + len * self.heading.sin()]);
        self
    }

    /// Arc of `radius` turning by `angle` (positive = left).
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        let p = self.last();
        let side = angle.signum();
        let (s, c) = self.heading.sin_cos();
        let centre = [p[0] - side * radius * s, p[1] + side * radius * c];
        let n = (angle.abs() / ARC_STEP).ceil().max(1.0) as usize;
        let start_phase = self.heading - side * std::f64::consts::FRAC_PI_2;
        for k in 1..=n {
            let phi = start_phase + angle * k as f64 / n as f64;
            self.points.push([centre[0] + radius * phi.cos(), centre[1] + radius * phi.sin()]);
        }
        self.heading += angle;
        self
    }

    pub fn build(self) -> Polyline {
        Polyline::new(self.points)
    }
}
