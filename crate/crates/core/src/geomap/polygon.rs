//! Planar polygon primitives.

pub type Point = [f64; 2];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1]
}

/// Whether `p` lies on segment [a, b] within `tol`.
pub fn on_segment(p: Point, a: Point, b: Point, tol: f64) -> bool {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist2(p, a) <= tol * tol;
    }
    let t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return false;
    }
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    dist2(p, q) <= tol * tol
}

/// Whether closed segments [a, b] and [c, d] share any point.
pub fn segments_touch(a: Point, b: Point, c: Point, d: Point, tol: f64) -> bool {
    if segments_cross(a, b, c, d) {
        return true;
    }
    on_segment(a, c, d, tol) || on_segment(b, c, d, tol) || on_segment(c, a, b, tol) || on_segment(d, a, b, tol)
}

/// Whether segments [a, b] and [c, d] cross at a single interior point of both.
pub fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| cross(a, b)).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point {
        let a = self.signed_area();
        if a.abs() < 1e-300 {
            let n = self.vertices.len() as f64;
            let s = self.vertices.iter().fold([0.0, 0.0], |s, p| [s[0] + p[0], s[1] + p[1]]);
            return [s[0] / n, s[1] / n];
        }
        let mut c = [0.0, 0.0];
        for (p, q) in self.edges() {
            let w = cross(p, q);
            c[0] += (p[0] + q[0]) * w;
            c[1] += (p[1] + q[1]) * w;
        }
        [c[0] / (6.0 * a), c[1] / (6.0 * a)]
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Characteristic length used to scale tolerances.
    pub fn scale(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300)
    }

    pub fn to_ccw(mut self) -> Self {
        if self.signed_area() < 0.0 {
            self.vertices.reverse();
        }
        self
    }

    pub fn to_cw(mut self) -> Self {
        if self.signed_area() > 0.0 {
            self.vertices.reverse();
        }
        self
    }

    /// Signed cross-product convexity test for a counter-clockwise polygon.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        n >= 3
            && (0..n).all(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                let c = self.vertices[(i + 2) % n];
                orient(a, b, c) >= 0.0
            })
    }

    /// Simple-polygon check: at least three distinct vertices, non-zero area,
    /// no two non-adjacent edges touching and no adjacent edges overlapping.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 || self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return false;
        }
        let tol = 1e-12 * self.scale();
        if self.area() <= tol * tol {
            return false;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if dist2(self.vertices[i], self.vertices[j]) <= tol * tol {
                    return false;
                }
            }
        }
        let e: Vec<(Point, Point)> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (shared, a_far, b_far) =
                        if j == i + 1 { (e[i].1, e[i].0, e[j].1) } else { (e[i].0, e[i].1, e[j].0) };
                    if orient(a_far, shared, b_far).abs() <= tol * self.scale() {
                        let d = sub(a_far, shared);
                        let f = sub(b_far, shared);
                        if d[0] * f[0] + d[1] * f[1] > 0.0 {
                            return false;
                        }
                    }
                    continue;
                }
                if segments_touch(e[i].0, e[i].1, e[j].0, e[j].1, tol) {
                    return false;
                }
            }
        }
        true
    }

    /// Point-in-polygon by crossing number; points within `tol` of an edge
    /// count as inside.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        if self.edges().any(|(a, b)| on_segment(p, a, b, tol)) {
            return true;
        }
        self.contains_strict(p)
    }

    /// Crossing-number test without boundary handling.
    pub fn contains_strict(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Interior test excluding a `tol` band around the boundary.
    pub fn contains_interior(&self, p: Point, tol: f64) -> bool {
        !self.edges().any(|(a, b)| on_segment(p, a, b, tol)) && self.contains_strict(p)
    }

    /// Drop vertices whose neighbors are collinear with them.
    pub fn without_collinear(&self, tol: f64) -> Polygon {
        let mut v = self.vertices.clone();
        let mut changed = true;
        while changed && v.len() > 3 {
            changed = false;
            let n = v.len();
            for i in 0..n {
                let a = v[(i + n - 1) % n];
                let b = v[i];
                let c = v[(i + 1) % n];
                let len = dist2(a, c).sqrt().max(1e-300);
                if (orient(a, b, c) / len).abs() <= tol {
                    v.remove(i);
                    changed = true;
                    break;
                }
            }
        }
        Polygon::new(v)
    }
}
