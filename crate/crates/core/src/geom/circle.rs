use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: Point, eps: f64) -> bool {
        self.center.dist(p) <= self.radius + eps
    }

    fn diameter(a: Point, b: Point) -> Circle {
        Circle {
            center: (a + b) * 0.5,
            radius: a.dist(b) / 2.0,
        }
    }

    fn through(a: Point, b: Point, c: Point) -> Circle {
        let bx = b.x - a.x;
        let by = b.y - a.y;
        let cx = c.x - a.x;
        let cy = c.y - a.y;
        let d = 2.0 * (bx * cy - by * cx);
        if d.abs() < 1e-18 {
            // Collinear triple: the widest pair spans the other point.
            let cands = [Circle::diameter(a, b), Circle::diameter(a, c), Circle::diameter(b, c)];
            return cands
                .into_iter()
                .max_by(|x, y| x.radius.total_cmp(&y.radius))
                .expect("three candidates");
        }
        let b2 = bx * bx + by * by;
        let c2 = cx * cx + cy * cy;
        let ux = (cy * b2 - by * c2) / d;
        let uy = (bx * c2 - cx * b2) / d;
        Circle {
            center: Point::new(a.x + ux, a.y + uy),
            radius: ux.hypot(uy),
        }
    }
}

/// Smallest enclosing circle of a point set (Welzl's algorithm, iterative
/// form with a fixed-seed shuffle so results are reproducible).
pub fn min_enclosing_circle(points: &[Point]) -> Circle {
    assert!(!points.is_empty(), "enclosing circle of an empty point set");
    let origin = points[0];
    let mut pts: Vec<Point> = points.iter().map(|&p| p - origin).collect();
    let scale = pts.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-12 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(0x00c1_7c1e);
    pts.shuffle(&mut rng);

    let mut c = Circle { center: pts[0], radius: 0.0 };
    for i in 1..pts.len() {
        if c.contains(pts[i], eps) {
            continue;
        }
        c = Circle { center: pts[i], radius: 0.0 };
        for j in 0..i {
            if c.contains(pts[j], eps) {
                continue;
            }
            c = Circle::diameter(pts[i], pts[j]);
            for k in 0..j {
                if !c.contains(pts[k], eps) {
                    c = Circle::through(pts[i], pts[j], pts[k]);
                }
            }
        }
    }
    Circle {
        center: c.center + origin,
        radius: c.radius,
    }
}

/// Brute-force enclosing circle over all 2- and 3-point candidates (O(n⁴)
/// overall); used as a test oracle.
#[doc(hidden)]
pub fn brute_force_enclosing_circle(points: &[Point]) -> Circle {
    let n = points.len();
    if n == 1 {
        return Circle { center: points[0], radius: 0.0 };
    }
    let origin = points[0];
    let pts: Vec<Point> = points.iter().map(|&p| p - origin).collect();
    let eps = 1e-9;
    let mut best: Option<Circle> = None;
    let mut consider = |c: Circle| {
        if pts.iter().all(|&p| c.center.dist(p) <= c.radius + eps)
            && best.map_or(true, |b| c.radius < b.radius)
        {
            best = Some(c);
        }
    };
    for i in 0..n {
        for j in i + 1..n {
            consider(Circle::diameter(pts[i], pts[j]));
            for k in j + 1..n {
                consider(Circle::through(pts[i], pts[j], pts[k]));
            }
        }
    }
    let b = best.expect("some candidate encloses all points");
    Circle { center: b.center + origin, radius: b.radius }
}
