//! Planar geometry over building footprints in a projected metric CRS.
//!
//! Every shape indicator used as a building-level or block-level feature
//! lives here. Coordinates are meters; polygons are stored with a
//! counter-clockwise exterior ring and clockwise holes, without the closing
//! vertex.

pub(crate) mod adjacency;
mod bbox;
mod circle;
mod hull;
mod outline;

pub use adjacency::{adjacency_stats, AdjacencyStats, SHARED_WALL_MIN_LEN, SNAP_GRID};
pub use bbox::{brute_force_min_box_area, min_area_bounding_box, OrientedBox};
pub use circle::{brute_force_enclosing_circle, min_enclosing_circle, Circle};
pub use hull::convex_hull;
pub use outline::{merge_outlines, MergedOutline};

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

/// Axis-aligned bounding rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn of(points: &[Point]) -> Rect {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Rect { min, max }
    }

    pub fn expand(self, by: f64) -> Rect {
        Rect {
            min: Point::new(self.min.x - by, self.min.y - by),
            max: Point::new(self.max.x + by, self.max.y + by),
        }
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// A simple polygon with optional holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

/// Signed shoelace area of a ring, evaluated relative to its first vertex.
pub fn signed_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let o = ring[0];
    let mut acc = 0.0;
    for i in 1..ring.len() - 1 {
        acc += (ring[i] - o).cross(ring[i + 1] - o);
    }
    acc / 2.0
}

fn clean_ring(points: &[Point], what: &str) -> Result<Vec<Point>> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGeometry(format!("{what} has non-finite coordinates")));
    }
    let mut ring: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if ring.last() != Some(&p) {
            ring.push(p);
        }
    }
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::InvalidGeometry(format!(
            "{what} has fewer than 3 distinct points"
        )));
    }
    let scale = Rect::of(&ring).area().max(1e-300);
    if signed_area(&ring).abs() <= 1e-12 * scale {
        return Err(Error::InvalidGeometry(format!("{what} is degenerate (collinear points)")));
    }
    Ok(ring)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    robust::orient2d(
        robust::Coord { x: a.x, y: a.y },
        robust::Coord { x: b.x, y: b.y },
        robust::Coord { x: c.x, y: c.y },
    )
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test with exact orientation predicates.
pub(crate) fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn ring_is_simple(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if adjacent {
                // Adjacent edges share exactly one vertex; they must not fold back.
                let shared = if j == i + 1 { b } else { a };
                let (other_ab, other_cd) = if j == i + 1 { (a, d) } else { (b, c) };
                if orient(other_ab, shared, other_cd) == 0.0
                    && (other_cd - shared).dot(other_ab - shared) > 0.0
                {
                    return false;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

impl Polygon {
    /// Validates and normalizes a polygon: drops the closing vertex and
    /// consecutive duplicates, rejects degenerate or self-intersecting rings,
    /// and reorients the exterior counter-clockwise and holes clockwise.
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Polygon> {
        let mut ext = clean_ring(&exterior, "exterior ring")?;
        if !ring_is_simple(&ext) {
            return Err(Error::InvalidGeometry("exterior ring self-intersects".into()));
        }
        if signed_area(&ext) < 0.0 {
            ext.reverse();
        }
        let mut hs = Vec::with_capacity(holes.len());
        for (k, h) in holes.iter().enumerate() {
            let mut ring = clean_ring(h, &format!("hole {k}"))?;
            if !ring_is_simple(&ring) {
                return Err(Error::InvalidGeometry(format!("hole {k} self-intersects")));
            }
            if signed_area(&ring) > 0.0 {
                ring.reverse();
            }
            hs.push(ring);
        }
        Ok(Polygon { exterior: ext, holes: hs })
    }

    pub fn from_exterior(points: Vec<Point>) -> Result<Polygon> {
        Polygon::new(points, Vec::new())
    }

    /// Axis-aligned rectangle `[x0,x1]×[y0,y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Polygon> {
        Polygon::from_exterior(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn bbox(&self) -> Rect {
        Rect::of(&self.exterior)
    }

    /// Applies `f` to every vertex and re-validates.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(
            self.exterior.iter().map(|&p| f(p)).collect(),
            self.holes.iter().map(|h| h.iter().map(|&p| f(p)).collect()).collect(),
        )
    }

    pub fn translate(&self, t: Point) -> Polygon {
        self.map_points(|p| p + t).expect("translation preserves validity")
    }

    /// Rotation by `deg` degrees counter-clockwise about `pivot`.
    pub fn rotate(&self, deg: f64, pivot: Point) -> Polygon {
        let (s, c) = deg.to_radians().sin_cos();
        self.map_points(|p| {
            let d = p - pivot;
            pivot + Point::new(c * d.x - s * d.y, s * d.x + c * d.y)
        })
        .expect("rotation preserves validity")
    }

    pub fn scale(&self, s: f64) -> Polygon {
        self.map_points(|p| p * s).expect("positive scaling preserves validity")
    }

    /// Area-weighted centroid (holes subtracted).
    pub fn centroid(&self) -> Point {
        let o = self.exterior[0];
        let mut a_sum = 0.0;
        let mut c = Point::default();
        for ring in self.rings() {
            let n = ring.len();
            for i in 0..n {
                let p = ring[i] - o;
                let q = ring[(i + 1) % n] - o;
                let w = p.cross(q);
                a_sum += w;
                c = c + (p + q) * w;
            }
        }
        o + c * (1.0 / (3.0 * a_sum))
    }

    /// Point-in-polygon by ray casting; boundary points count as inside
    /// only incidentally.
    pub fn contains(&self, p: Point) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    /// Whether the polygon (interior or boundary) intersects the closed disc.
    pub fn intersects_circle(&self, center: Point, radius: f64) -> bool {
        if self.contains(center) {
            return true;
        }
        self.rings().any(|ring| {
            let n = ring.len();
            (0..n).any(|i| point_segment_dist(center, ring[i], ring[(i + 1) % n]) <= radius)
        })
    }
}

pub fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
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

pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Footprint area in m²: exterior shoelace area minus hole areas.
pub fn footprint_area(p: &Polygon) -> f64 {
    signed_area(&p.exterior) - p.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
}

fn ring_length(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].dist(ring[(i + 1) % n])).sum()
}

/// Exterior perimeter in m (hole rings are not part of the outline).
pub fn perimeter(p: &Polygon) -> f64 {
    ring_length(&p.exterior)
}

/// Interior angles of a counter-clockwise ring in degrees, in `(0, 360)`.
pub fn interior_angles(ring: &[Point]) -> Vec<f64> {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[(i + n - 1) % n];
            let b = ring[i];
            let c = ring[(i + 1) % n];
            let d1 = b - a;
            let d2 = c - b;
            let turn = d1.cross(d2).atan2(d1.dot(d2)).to_degrees();
            180.0 - turn
        })
        .collect()
}

/// Lower and upper bounds of the "near-straight" band; vertices whose
/// interior angle lies strictly inside it are not corners.
pub const CORNER_MAX_ANGLE: f64 = 170.0;
pub const CORNER_MIN_REFLEX: f64 = 190.0;

pub fn is_corner_angle(alpha: f64) -> bool {
    const EPS: f64 = 1e-9;
    alpha <= CORNER_MAX_ANGLE + EPS || alpha >= CORNER_MIN_REFLEX - EPS
}

/// Number of exterior vertices that deviate at least 10° from straight.
pub fn count_corners(p: &Polygon) -> usize {
    count_ring_corners(&p.exterior)
}

pub fn count_ring_corners(ring: &[Point]) -> usize {
    interior_angles(ring).into_iter().filter(|&a| is_corner_angle(a)).count()
}

/// Area of the footprint over the area of its minimal circumscribed circle.
pub fn anisotropy_index(p: &Polygon) -> f64 {
    let c = min_enclosing_circle(&p.exterior);
    let circle_area = std::f64::consts::PI * c.radius * c.radius;
    (footprint_area(p) / circle_area).min(1.0)
}

/// Diameter of the minimal circumscribed circle.
pub fn longest_axis_length(p: &Polygon) -> f64 {
    2.0 * min_enclosing_circle(&p.exterior).radius
}

/// Short over long side of the minimum-area bounding box.
pub fn elongation(p: &Polygon) -> f64 {
    min_area_bounding_box(&p.exterior).elongation()
}

/// Footprint area over convex-hull area.
pub fn convexity(p: &Polygon) -> f64 {
    let hull = convex_hull(&p.exterior);
    (footprint_area(p) / signed_area(&hull)).min(1.0)
}

/// Azimuth of `to` seen from `from`: clockwise angle from north (+y) in
/// degrees, in `[0, 360)`.
pub fn azimuth(from: Point, to: Point) -> Result<f64> {
    let d = to - from;
    if d.x == 0.0 && d.y == 0.0 {
        return Err(Error::InvalidInput("azimuth of coincident points".into()));
    }
    let az = d.x.atan2(d.y).to_degrees().rem_euclid(360.0);
    Ok(if az >= 360.0 { 0.0 } else { az })
}

/// Folds an azimuth into the deviation from the nearest cardinal axis, `[0, 45]`.
pub fn fold_to_cardinal(az: f64) -> f64 {
    (((az + 45.0).rem_euclid(90.0)) - 45.0).abs()
}

/// Deviation in degrees (`[0, 45]`) of the minimum bounding box's longer
/// side from the cardinal axes.
pub fn orientation(p: &Polygon) -> f64 {
    orientation_of_points(&p.exterior)
}

pub(crate) fn orientation_of_points(points: &[Point]) -> f64 {
    min_area_bounding_box(points).orientation()
}
