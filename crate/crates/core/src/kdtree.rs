//! Exact nearest-neighbour search over 3D points.
//!
//! Squared distances are computed exactly as a linear scan would compute
//! them, and ties resolve to the lowest point index, so results are
//! bit-identical to brute force.

use crate::geom::Vec3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree: the node of `order[lo..hi]` sits at the middle.
    order: Vec<u32>,
    axis: Vec<u8>,
}

#[inline]
pub fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for the index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axis = vec![0u8; points.len()];
        build(points, &mut order, &mut axis, 0);
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

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d = squared_distance(q, p);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, first.0, first.1, best);
        if diff * diff <= best.1 {
            self.search(q, second.0, second.1, best);
        }
    }

    /// The `k` nearest points sorted by (distance, index).
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut found: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search_k(q, 0, self.order.len(), k, &mut found);
        }
        found
    }

    fn search_k(&self, q: &Vec3, lo: usize, hi: usize, k: usize, found: &mut Vec<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d = squared_distance(q, p);
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 > b.0);
        if found.len() < k || worse(found.last().unwrap(), &(idx, d)) {
            let pos = found.partition_point(|e| !worse(e, &(idx, d)));
            found.insert(pos, (idx, d));
            found.truncate(k);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_k(q, first.0, first.1, k, found);
        if found.len() < k || diff * diff <= found.last().unwrap().1 {
            self.search_k(q, second.0, second.1, k, found);
        }
    }
}

fn build(points: &[Vec3], order: &mut [u32], axis: &mut [u8], depth: usize) {
    if order.is_empty() {
        return;
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        let p = &points[i as usize];
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let ax = if ext.iter().all(|e| *e == 0.0) {
        depth % 3
    } else {
        ext.imax()
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][ax]
            .total_cmp(&points[*b as usize][ax])
            .then(a.cmp(b))
    });
    axis[mid] = ax as u8;
    let (left, right) = order.split_at_mut(mid);
    let (laxis, raxis) = axis.split_at_mut(mid);
    build(points, left, laxis, depth + 1);
    build(points, &mut right[1..], &mut raxis[1..], depth + 1);
}
