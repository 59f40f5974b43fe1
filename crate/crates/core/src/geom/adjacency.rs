use super::{Point, Polygon, Rect};

/// Boundaries are snapped to this grid (m) before wall matching.
pub const SNAP_GRID: f64 = 1e-3;
/// Overlap pieces shorter than this (m) are ignored.
pub const SHARED_WALL_MIN_LEN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdjacencyStats {
    /// Number of candidates sharing at least one wall segment.
    pub count: usize,
    /// Total length of shared wall segments (m).
    pub shared_wall_length: f64,
}

fn snap(p: Point) -> Point {
    Point::new((p.x / SNAP_GRID).round() * SNAP_GRID, (p.y / SNAP_GRID).round() * SNAP_GRID)
}

fn snapped_edges(ring: &[Point]) -> Vec<(Point, Point)> {
    let n = ring.len();
    (0..n)
        .map(|i| (snap(ring[i]), snap(ring[(i + 1) % n])))
        .filter(|(a, b)| a != b)
        .collect()
}

/// Length of the collinear overlap between segment `a→b` and `c→d`.
/// Segments count as collinear when both endpoints of `c→d` lie within
/// one snapping cell of the line through `a→b`.
fn collinear_overlap(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let ab = b - a;
    let len = ab.norm();
    let u = ab * (1.0 / len);
    let off_c = (c - a).cross(u).abs();
    let off_d = (d - a).cross(u).abs();
    if off_c > SNAP_GRID || off_d > SNAP_GRID {
        return 0.0;
    }
    let tc = (c - a).dot(u);
    let td = (d - a).dot(u);
    let lo = tc.min(td).max(0.0);
    let hi = tc.max(td).min(len);
    (hi - lo).max(0.0)
}

/// Total length of `p`'s exterior boundary lying on `q`'s boundary.
pub(crate) fn shared_length(p: &Polygon, q: &Polygon) -> f64 {
    let pe = snapped_edges(p.exterior());
    let qe: Vec<(Point, Point)> = q.rings().flat_map(snapped_edges).collect();
    let mut total = 0.0;
    for &(a, b) in &pe {
        for &(c, d) in &qe {
            let o = collinear_overlap(a, b, c, d);
            if o >= SHARED_WALL_MIN_LEN {
                total += o;
            }
        }
    }
    total
}

/// Number of directly adjacent candidates and the summed shared wall
/// length. `candidates` must not contain `p` itself.
pub fn adjacency_stats<'a>(p: &Polygon, candidates: impl IntoIterator<Item = &'a Polygon>) -> AdjacencyStats {
    let bb: Rect = p.bbox().expand(SNAP_GRID * 2.0);
    let mut stats = AdjacencyStats::default();
    for q in candidates {
        if !bb.intersects(&q.bbox()) {
            continue;
        }
        let len = shared_length(p, q);
        if len > 0.0 {
            stats.count += 1;
            stats.shared_wall_length += len;
        }
    }
    stats
}
