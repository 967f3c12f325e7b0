//! Kd-tree over 3D points for radius and nearest-neighbour queries.

use crate::cloud::{dist2, Point3};

const LEAF_SIZE: usize = 8;

/// Implicit kd-tree: `order` is a permutation of point indices arranged so that each
/// subtree occupies a contiguous range, with the splitting point at the range midpoint.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl SpatialIndex {
    pub fn new(points: &[Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        build(points, &mut order, &mut axis);
        Self {
            points: points.to_vec(),
            order,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Indices `i` with `‖pᵢ − q‖ ≤ r`, ascending.
    pub fn radius_query(&self, q: &Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(q, r, &mut out);
        out
    }

    /// Like [`radius_query`](Self::radius_query) but reuses `out` (cleared first).
    pub fn radius_query_into(&self, q: &Point3, r: f64, out: &mut Vec<usize>) {
        out.clear();
        if r < 0.0 {
            return;
        }
        self.radius_rec(0, self.order.len(), q, r * r, out);
        out.sort_unstable();
    }

    fn radius_rec(&self, lo: usize, hi: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                if dist2(&self.points[i], q) <= r2 {
                    out.push(i);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let a = self.axis[mid] as usize;
        let p = &self.points[i];
        if dist2(p, q) <= r2 {
            out.push(i);
        }
        // Squared comparison keeps pruning consistent with the rounding of `dist2`.
        let diff = q[a] - p[a];
        if diff <= 0.0 || diff * diff <= r2 {
            self.radius_rec(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_rec(mid + 1, hi, q, r2, out);
        }
    }

    /// Nearest point to `q` as `(index, squared distance)`; ties resolve to the lower index.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, self.order.len(), q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, lo: usize, hi: usize, q: &Point3, best: &mut (usize, f64)) {
        let consider = |i: usize, best: &mut (usize, f64)| {
            let d = dist2(&self.points[i], q);
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                consider(i, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let a = self.axis[mid] as usize;
        consider(i, best);
        let diff = q[a] - self.points[i][a];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, q, best);
        // `<=` keeps equidistant candidates with lower indices reachable.
        if diff * diff <= best.1 {
            self.nearest_rec(far.0, far.1, q, best);
        }
    }
}

fn build(points: &[Point3], order: &mut [usize], axis: &mut [u8]) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    // Split on the axis of largest extent.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let a = (0..3)
        .max_by(|&x, &y| (hi[x] - lo[x]).total_cmp(&(hi[y] - lo[y])))
        .unwrap();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&x, &y| points[x][a].total_cmp(&points[y][a]));
    axis[mid] = a as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (laxis, raxis) = axis.split_at_mut(mid);
    build(points, left, laxis);
    build(points, &mut rest[1..], &mut raxis[1..]);
}
