use serde::{Deserialize, Serialize};

use super::{azimuth, convex_hull, fold_to_cardinal, Point};

/// Minimum-area oriented bounding rectangle.
///
/// Corners `p1..p4` are in counter-clockwise ring order; `a = |p1p2|` lies
/// along the hull edge the rectangle was fitted to and `b = |p1p4|` is the
/// perpendicular side incident to `p1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub corners: [Point; 4],
    pub a: f64,
    pub b: f64,
}

impl OrientedBox {
    pub fn area(&self) -> f64 {
        self.a * self.b
    }

    pub fn elongation(&self) -> f64 {
        if self.a <= self.b {
            self.a / self.b
        } else {
            self.b / self.a
        }
    }

    /// Deviation of the longer side from the cardinal axes, `[0, 45]`.
    /// Ties (`a == b`) use the `p1p2` side.
    pub fn orientation(&self) -> f64 {
        let [p1, p2, _, p4] = self.corners;
        let target = if self.a >= self.b { p2 } else { p4 };
        azimuth(p1, target).map(fold_to_cardinal).unwrap_or(0.0)
    }
}

/// Minimum-area enclosing rectangle via rotating calipers over the convex
/// hull: one side of the optimum is collinear with a hull edge.
pub fn min_area_bounding_box(points: &[Point]) -> OrientedBox {
    let hull = convex_hull(points);
    let h = hull.len();
    assert!(h >= 3, "bounding box of a degenerate point set");
    let origin = hull[0];
    let hull: Vec<Point> = hull.iter().map(|&p| p - origin).collect();

    let at = |i: usize| hull[i % h];
    let mut best: Option<(f64, OrientedBox)> = None;
    // Caliper indices: farthest along the edge, farthest from it, and
    // farthest against it.
    let (mut right, mut top, mut left) = (1usize, 1usize, 1usize);
    for i in 0..h {
        let base = at(i);
        let e = at(i + 1) - base;
        let len = e.norm();
        let u = e * (1.0 / len);
        let n = Point::new(-u.y, u.x);
        right = right.max(i + 1);
        while (at(right + 1) - base).dot(u) > (at(right) - base).dot(u) {
            right += 1;
        }
        top = top.max(right);
        while (at(top + 1) - base).dot(n) > (at(top) - base).dot(n) {
            top += 1;
        }
        left = left.max(top);
        while (at(left + 1) - base).dot(u) < (at(left) - base).dot(u) {
            left += 1;
        }
        let max_u = (at(right) - base).dot(u);
        let min_u = (at(left) - base).dot(u).min(0.0);
        let height = (at(top) - base).dot(n);
        let width = max_u - min_u;
        let area = width * height;
        // Equal-area boxes (e.g. every edge of an acute triangle) are
        // disambiguated by the smaller perimeter.
        let better = best.as_ref().map_or(true, |(a, b)| {
            let tol = 1e-9 * a.max(area);
            area < a - tol || ((area - a).abs() <= tol && width + height < b.a + b.b - tol)
        });
        if better {
            let p1 = base + u * min_u;
            let p2 = base + u * max_u;
            let p3 = p2 + n * height;
            let p4 = p1 + n * height;
            best = Some((
                area,
                OrientedBox {
                    corners: [p1 + origin, p2 + origin, p3 + origin, p4 + origin],
                    a: width,
                    b: height,
                },
            ));
        }
    }
    best.expect("non-empty hull").1
}

/// Exhaustive O(h²) sweep over hull-edge directions; test oracle for the
/// caliper implementation.
#[doc(hidden)]
pub fn brute_force_min_box_area(points: &[Point]) -> f64 {
    let hull = convex_hull(points);
    let h = hull.len();
    let mut best = f64::INFINITY;
    for i in 0..h {
        let e = hull[(i + 1) % h] - hull[i];
        let u = e * (1.0 / e.norm());
        let n = Point::new(-u.y, u.x);
        let (mut lo_u, mut hi_u, mut lo_n, mut hi_n) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &p in &hull {
            let d = p - hull[i];
            lo_u = lo_u.min(d.dot(u));
            hi_u = hi_u.max(d.dot(u));
            lo_n = lo_n.min(d.dot(n));
            hi_n = hi_n.max(d.dot(n));
        }
        best = best.min((hi_u - lo_u) * (hi_n - lo_n));
    }
    best
}
