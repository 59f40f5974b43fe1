use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use crate::error::{Error, Result};
use crate::geom::{Point, Polygon, Rect};

type Entry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// R-tree over footprint bounding boxes. Entries are indices into the
/// polygon slice the index was built from.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: RTree<Entry>,
    len: usize,
}

impl SpatialIndex {
    pub fn build<'a>(polygons: impl IntoIterator<Item = &'a Polygon>) -> SpatialIndex {
        let entries: Vec<Entry> = polygons
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let b = p.bbox();
                GeomWithData::new(Rectangle::from_corners([b.min.x, b.min.y], [b.max.x, b.max.y]), i)
            })
            .collect();
        let len = entries.len();
        SpatialIndex { tree: RTree::bulk_load(entries), len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Indices whose bounding boxes intersect `rect`, in ascending order.
    pub fn query_rect(&self, rect: Rect) -> Vec<usize> {
        let env = AABB::from_corners([rect.min.x, rect.min.y], [rect.max.x, rect.max.y]);
        let mut out: Vec<usize> = self.tree.locate_in_envelope_intersecting(&env).map(|e| e.data).collect();
        out.sort_unstable();
        out
    }

    /// Indices of polygons intersecting the closed disc, in ascending order.
    /// `polygon` resolves an index to the polygon it was built from.
    pub fn query_circle<'a>(&self, polygon: impl Fn(usize) -> &'a Polygon, center: Point, radius: f64) -> Vec<usize> {
        let rect = Rect { min: center, max: center }.expand(radius);
        self.query_rect(rect)
            .into_iter()
            .filter(|&i| polygon(i).intersects_circle(center, radius))
            .collect()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::InvalidState("spatial index is empty".into()))
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn circle_query_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let polys: Vec<Polygon> = (0..300)
            .map(|_| {
                let x = rng.gen_range(0.0..200.0);
                let y = rng.gen_range(0.0..200.0);
                Polygon::rect(x, y, x + rng.gen_range(1.0..15.0), y + rng.gen_range(1.0..15.0)).unwrap()
            })
            .collect();
        let index = SpatialIndex::build(&polys);
        for _ in 0..50 {
            let c = Point::new(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0));
            let r = rng.gen_range(1.0..60.0);
            let fast = index.query_circle(|i| &polys[i], c, r);
            let slow: Vec<usize> = (0..polys.len()).filter(|&i| polys[i].intersects_circle(c, r)).collect();
            assert_eq!(fast, slow);
        }
    }
}
