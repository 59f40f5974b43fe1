//! Delaunay edges by lexicographic sweep with Lawson flips.
//!
//! Points are inserted in (x, y) order, so every new point lies outside the
//! hull of the points before it. It is joined to the hull edges it sees and
//! the new triangles are legalized by flipping. Predicates are exact. An edge
//! is flipped only when the opposite point lies strictly inside the
//! circumcircle, so for cocircular points the triangulation produced by the
//! sweep order is kept.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::geom::Point;

/// Points closer than this (m) are treated as one site.
pub const DUPLICATE_TOL: f64 = 1e-6;

fn c(p: Point) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

fn orient(a: Point, b: Point, p: Point) -> f64 {
    orient2d(c(a), c(b), c(p))
}

fn lex(a: Point, b: Point) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// Undirected Delaunay edges `(i, j)` with `i < j`, sorted.
///
/// Near-duplicate points (within [`DUPLICATE_TOL`]) collapse onto the first
/// one in sort order and are attached to it by an extra edge. Collinear
/// input yields the path through the points in sort order.
pub fn delaunay_edges(points: &[Point]) -> Result<Vec<(usize, usize)>> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex(points[a], points[b]).then(a.cmp(&b)));

    // Collapse near-duplicates onto a representative.
    let mut sites: Vec<usize> = Vec::new();
    let mut extra: Vec<(usize, usize)> = Vec::new();
    for &i in &order {
        let p = points[i];
        let dup = sites
            .iter()
            .rev()
            .take_while(|&&s| p.x - points[s].x <= DUPLICATE_TOL)
            .find(|&&s| points[s].dist(p) <= DUPLICATE_TOL)
            .copied();
        match dup {
            Some(s) => extra.push((s.min(i), s.max(i))),
            None => sites.push(i),
        }
    }
    if sites.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "triangulation needs at least 2 distinct points, got {}",
            sites.len()
        )));
    }
    let site_pts: Vec<Point> = sites.iter().map(|&i| points[i]).collect();
    let mut edges: Vec<(usize, usize)> = sweep(&site_pts)
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (sites[a], sites[b]);
            (a.min(b), a.max(b))
        })
        .collect();
    edges.extend(extra);
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

/// Triangulation state: directed edge `(a, b)` maps to the third vertex of
/// the counter-clockwise triangle containing it.
struct Mesh<'a> {
    pts: &'a [Point],
    tri: HashMap<(u32, u32), u32>,
    next: Vec<u32>,
    prev: Vec<u32>,
}

impl<'a> Mesh<'a> {
    fn add_tri(&mut self, a: u32, b: u32, c: u32) {
        self.tri.insert((a, b), c);
        self.tri.insert((b, c), a);
        self.tri.insert((c, a), b);
    }

    fn remove_tri(&mut self, a: u32, b: u32, c: u32) {
        self.tri.remove(&(a, b));
        self.tri.remove(&(b, c));
        self.tri.remove(&(c, a));
    }

    fn p(&self, i: u32) -> Point {
        self.pts[i as usize]
    }

    /// Hull edge `a -> next[a]` is strictly visible from `p`.
    fn visible(&self, a: u32, p: Point) -> bool {
        orient(self.p(a), self.p(self.next[a as usize]), p) < 0.0
    }

    /// Restores the Delaunay property around edge `(u, v)` of triangle
    /// `(u, v, p)`.
    fn legalize(&mut self, u: u32, v: u32, p: u32) {
        let mut stack = vec![(u, v)];
        while let Some((u, v)) = stack.pop() {
            let Some(&d) = self.tri.get(&(v, u)) else { continue };
            if self.tri.get(&(u, v)) != Some(&p) {
                continue;
            }
            if incircle(c(self.p(u)), c(self.p(v)), c(self.p(p)), c(self.p(d))) > 0.0 {
                self.remove_tri(u, v, p);
                self.remove_tri(v, u, d);
                self.add_tri(u, d, p);
                self.add_tri(d, v, p);
                stack.push((u, d));
                stack.push((d, v));
            }
        }
    }
}

fn sweep(pts: &[Point]) -> Vec<(usize, usize)> {
    let n = pts.len();
    let path = || (0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>();
    if n == 2 {
        return path();
    }
    let mut k = 2;
    while k < n && orient(pts[0], pts[1], pts[k]) == 0.0 {
        k += 1;
    }
    if k == n {
        return path();
    }
    let mut m = Mesh {
        pts,
        tri: HashMap::with_capacity(6 * n),
        next: vec![u32::MAX; n],
        prev: vec![u32::MAX; n],
    };
    let apex = k as u32;
    let ccw = orient(pts[0], pts[1], pts[k]) > 0.0;
    for i in 0..k as u32 - 1 {
        if ccw {
            m.add_tri(i, i + 1, apex);
        } else {
            m.add_tri(i + 1, i, apex);
        }
    }
    let mut ring: Vec<u32> = (0..k as u32).collect();
    if ccw {
        ring.push(apex);
    } else {
        ring.reverse();
        ring.push(apex);
    }
    for w in 0..ring.len() {
        let (a, b) = (ring[w], ring[(w + 1) % ring.len()]);
        m.next[a as usize] = b;
        m.prev[b as usize] = a;
    }

    let mut last = apex;
    for q in k as u32 + 1..n as u32 {
        let p = m.p(q);
        // Find a visible hull edge, starting near the previous insertion.
        let mut start = if m.visible(last, p) {
            Some(last)
        } else if m.visible(m.prev[last as usize], p) {
            Some(m.prev[last as usize])
        } else {
            None
        };
        if start.is_none() {
            let mut v = m.next[last as usize];
            while v != last {
                if m.visible(v, p) {
                    start = Some(v);
                    break;
                }
                v = m.next[v as usize];
            }
        }
        let start = start.expect("a point outside the hull sees a hull edge");
        let mut first = start;
        while m.visible(m.prev[first as usize], p) {
            first = m.prev[first as usize];
        }
        let mut end = start;
        while m.visible(end, p) {
            end = m.next[end as usize];
        }
        // Visible chain first -> ... -> end.
        let mut a = first;
        let mut created = Vec::new();
        while a != end {
            let b = m.next[a as usize];
            m.add_tri(b, a, q);
            created.push((b, a));
            a = b;
        }
        m.next[first as usize] = q;
        m.prev[q as usize] = first;
        m.next[q as usize] = end;
        m.prev[end as usize] = q;
        for (u, v) in created {
            m.legalize(u, v, q);
        }
        last = q;
    }
    let mut edges: Vec<(usize, usize)> = m
        .tri
        .keys()
        .map(|&(a, b)| (a.min(b) as usize, a.max(b) as usize))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// All triangles `(i, j, k)` whose circumcircle holds no other point in
/// its interior; O(n⁴). `strict` excludes points on the circle as well.
#[doc(hidden)]
pub fn brute_force_delaunay_edges(points: &[Point], strict: bool) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let o = orient(points[i], points[j], points[k]);
                if o == 0.0 {
                    continue;
                }
                let (a, b) = if o > 0.0 { (i, j) } else { (j, i) };
                let empty = (0..n).filter(|&l| l != i && l != j && l != k).all(|l| {
                    let s = incircle(c(points[a]), c(points[b]), c(points[k]), c(points[l]));
                    if strict {
                        s < 0.0
                    } else {
                        s <= 0.0
                    }
                });
                if empty {
                    edges.extend([(i, j), (j, k), (i, k)]);
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}
