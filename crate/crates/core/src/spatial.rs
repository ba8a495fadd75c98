//! Static nearest-neighbour index over points.
//!
//! Queries return the minimum of `(squared distance, index)` in lexicographic
//! order, which is exactly what a linear scan returns, independent of the tree
//! shape.

#[derive(Debug, Clone)]
pub struct PointIndex<const D: usize> {
    points: Vec<[f64; D]>,
    /// Tree nodes in implicit layout: `order[lo..hi]` with the median as the
    /// split point.
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl<const D: usize> PointIndex<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        assert!(points.len() < u32::MAX as usize);
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(&points, &mut order, &mut axes);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, q: &[f64; D]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(q, 0, self.order.len(), &mut best);
        Some((best.1 as usize, best.0))
    }

    fn search(&self, q: &[f64; D], lo: usize, hi: usize, best: &mut (f64, u32)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let d2 = dist2(p, q);
        if (d2, idx) < *best {
            *best = (d2, idx);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        // `<=` keeps equal-distance candidates with smaller indices reachable
        if delta * delta <= best.0 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    (0..D).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn build<const D: usize>(points: &[[f64; D]], order: &mut [u32], axes: &mut [u8]) {
    if order.len() <= 1 {
        if let Some(a) = axes.first_mut() {
            *a = 0;
        }
        return;
    }
    let mut axis = 0;
    let mut widest = -1.0;
    #[allow(clippy::needless_range_loop)]
    for a in 0..D {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in order.iter() {
            let v = points[i as usize][a];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > widest {
            widest = hi - lo;
            axis = a;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(points, left, left_axes);
    build(points, &mut rest[1..], &mut rest_axes[1..]);
}
