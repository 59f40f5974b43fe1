//! Union of edge-sharing footprints into block outlines.
//!
//! Buildings in a block touch along walls but do not overlap, so the union
//! boundary is the set of boundary segments that are not shared by two
//! members. Coordinates are snapped to the wall-matching grid and handled as
//! integers, walls are split at every vertex lying on them, opposite
//! segment pairs cancel, and the remaining segments are chained into rings.

use std::collections::{BTreeMap, HashMap};

use super::{
    convex_hull, count_ring_corners, min_area_bounding_box, min_enclosing_circle, ring_contains,
    signed_area, Point, Polygon, SNAP_GRID,
};

type GridPt = (i64, i64);

/// Union of a block's member footprints; usually a single polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedOutline {
    pub parts: Vec<Polygon>,
}

/// Union failure, naming the member indices involved.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlineError {
    pub members: Vec<usize>,
    pub reason: String,
}

impl MergedOutline {
    pub fn area(&self) -> f64 {
        self.parts.iter().map(super::footprint_area).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.parts.iter().map(super::perimeter).sum()
    }

    pub fn corners(&self) -> usize {
        self.parts.iter().map(|p| count_ring_corners(p.exterior())).sum()
    }

    pub fn exterior_points(&self) -> Vec<Point> {
        self.parts.iter().flat_map(|p| p.exterior().iter().copied()).collect()
    }

    pub fn longest_axis_length(&self) -> f64 {
        2.0 * min_enclosing_circle(&self.exterior_points()).radius
    }

    /// Elongation and orientation of the minimum bounding box around the
    /// convex hull of all parts.
    pub fn elongation(&self) -> f64 {
        min_area_bounding_box(&self.exterior_points()).elongation()
    }

    pub fn orientation(&self) -> f64 {
        super::orientation_of_points(&self.exterior_points())
    }

    pub fn convexity(&self) -> f64 {
        let hull = convex_hull(&self.exterior_points());
        (self.area() / signed_area(&hull)).min(1.0)
    }
}

fn to_grid(p: Point) -> GridPt {
    ((p.x / SNAP_GRID).round() as i64, (p.y / SNAP_GRID).round() as i64)
}

fn from_grid(g: GridPt) -> Point {
    Point::new(g.0 as f64 * SNAP_GRID, g.1 as f64 * SNAP_GRID)
}

fn sub(a: GridPt, b: GridPt) -> (i128, i128) {
    ((a.0 - b.0) as i128, (a.1 - b.1) as i128)
}

/// Splits segment `a→b` at grid vertices lying on it (within one grid cell).
fn split_points(a: GridPt, b: GridPt, vertices: &[GridPt]) -> Vec<GridPt> {
    let (dx, dy) = sub(b, a);
    let len2 = dx * dx + dy * dy;
    let (minx, maxx) = (a.0.min(b.0) - 1, a.0.max(b.0) + 1);
    let start = vertices.partition_point(|v| v.0 < minx);
    let mut cuts: Vec<(i128, GridPt)> = Vec::new();
    for &v in vertices[start..].iter().take_while(|v| v.0 <= maxx) {
        if v == a || v == b {
            continue;
        }
        let (vx, vy) = sub(v, a);
        let t = vx * dx + vy * dy;
        if t <= 0 || t >= len2 {
            continue;
        }
        let cross = dx * vy - dy * vx;
        // |cross| / |ab| <= 1 cell
        if cross * cross <= len2 {
            cuts.push((t, v));
        }
    }
    cuts.sort();
    cuts.dedup_by_key(|c| c.1);
    let mut out = Vec::with_capacity(cuts.len() + 2);
    out.push(a);
    out.extend(cuts.into_iter().map(|c| c.1));
    out.push(b);
    out
}

fn turn_angle(incoming: (i128, i128), outgoing: (i128, i128)) -> f64 {
    let (ax, ay) = (incoming.0 as f64, incoming.1 as f64);
    let (bx, by) = (outgoing.0 as f64, outgoing.1 as f64);
    (ax * by - ay * bx).atan2(ax * bx + ay * by)
}

/// Unions member footprints that touch along walls.
pub fn merge_outlines(members: &[&Polygon]) -> Result<MergedOutline, OutlineError> {
    if members.len() == 1 {
        return Ok(MergedOutline { parts: vec![members[0].clone()] });
    }
    // Directed edges with interior on the left (exterior CCW, holes CW).
    let mut raw: Vec<(GridPt, GridPt, usize)> = Vec::new();
    for (k, poly) in members.iter().enumerate() {
        for ring in poly.rings() {
            let n = ring.len();
            for i in 0..n {
                let a = to_grid(ring[i]);
                let b = to_grid(ring[(i + 1) % n]);
                if a != b {
                    raw.push((a, b, k));
                }
            }
        }
    }
    let mut vertices: Vec<GridPt> = raw.iter().flat_map(|e| [e.0, e.1]).collect();
    vertices.sort_unstable();
    vertices.dedup();

    // Multiset of split directed segments.
    let mut segs: HashMap<(GridPt, GridPt), Vec<usize>> = HashMap::new();
    for &(a, b, k) in &raw {
        let pts = split_points(a, b, &vertices);
        for w in pts.windows(2) {
            segs.entry((w[0], w[1])).or_default().push(k);
        }
    }
    let mut keys: Vec<(GridPt, GridPt)> = segs.keys().copied().collect();
    keys.sort_unstable();
    for &key in &keys {
        let owners = &segs[&key];
        if owners.len() > 1 {
            let mut m = owners.clone();
            m.sort_unstable();
            m.dedup();
            return Err(OutlineError {
                members: m,
                reason: "overlapping footprints".into(),
            });
        }
    }
    let mut remaining: BTreeMap<GridPt, Vec<GridPt>> = BTreeMap::new();
    for &(a, b) in &keys {
        if segs.contains_key(&(b, a)) {
            continue;
        }
        remaining.entry(a).or_default().push(b);
    }

    // Chain into rings, taking the sharpest left turn at branch vertices so
    // parts touching at a single point stay separate.
    let mut rings: Vec<Vec<GridPt>> = Vec::new();
    while let Some((&start, _)) = remaining.iter().find(|(_, outs)| !outs.is_empty()) {
        let first = remaining.get_mut(&start).expect("present").remove(0);
        let mut ring = vec![start];
        let mut prev = start;
        let mut cur = first;
        let mut guard = 0usize;
        while cur != start {
            ring.push(cur);
            let incoming = sub(cur, prev);
            let outs = remaining.get_mut(&cur).filter(|o| !o.is_empty()).ok_or_else(|| OutlineError {
                members: (0..members.len()).collect(),
                reason: "open boundary chain".into(),
            })?;
            let best = (0..outs.len())
                .max_by(|&i, &j| {
                    turn_angle(incoming, sub(outs[i], cur))
                        .total_cmp(&turn_angle(incoming, sub(outs[j], cur)))
                        .then(j.cmp(&i))
                })
                .expect("non-empty");
            let next = outs.remove(best);
            prev = cur;
            cur = next;
            guard += 1;
            if guard > keys.len() + 1 {
                return Err(OutlineError {
                    members: (0..members.len()).collect(),
                    reason: "boundary chaining did not terminate".into(),
                });
            }
        }
        rings.push(ring);
    }

    let mut exteriors: Vec<Vec<Point>> = Vec::new();
    let mut holes: Vec<Vec<Point>> = Vec::new();
    for ring in rings {
        let n = ring.len();
        // Drop exactly collinear vertices.
        let simplified: Vec<GridPt> = (0..n)
            .filter(|&i| {
                let (a, b, c) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
                let (x1, y1) = sub(b, a);
                let (x2, y2) = sub(c, b);
                x1 * y2 - y1 * x2 != 0
            })
            .map(|i| ring[i])
            .collect();
        if simplified.len() < 3 {
            continue;
        }
        let pts: Vec<Point> = simplified.into_iter().map(from_grid).collect();
        if signed_area(&pts) > 0.0 {
            exteriors.push(pts);
        } else {
            holes.push(pts);
        }
    }
    let mut assigned: Vec<Vec<Vec<Point>>> = vec![Vec::new(); exteriors.len()];
    for h in holes {
        let owner = exteriors
            .iter()
            .enumerate()
            .filter(|(_, e)| ring_contains(e, h[0]) || h.iter().any(|&p| ring_contains(e, p)))
            .min_by(|a, b| signed_area(a.1).total_cmp(&signed_area(b.1)))
            .map(|(i, _)| i)
            .ok_or_else(|| OutlineError {
                members: (0..members.len()).collect(),
                reason: "hole outside every outline part".into(),
            })?;
        assigned[owner].push(h);
    }
    let parts = exteriors
        .into_iter()
        .zip(assigned)
        .map(|(e, hs)| {
            Polygon::new(e, hs).map_err(|err| OutlineError {
                members: (0..members.len()).collect(),
                reason: err.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MergedOutline { parts })
}
