//! Static k-d tree for nearest-neighbour and fixed-radius queries.

use ndarray::ArrayView2;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable k-d tree over a fixed point set of any dimension.
///
/// Nearest-neighbour ties are resolved towards the lowest point index, which
/// makes lookups agree exactly with a brute-force scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: ArrayView2<'_, f64>) -> Self {
        let dim = points.ncols();
        let coords: Vec<f64> = points.iter().copied().collect();
        let mut order: Vec<usize> = (0..points.nrows()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let n = order.len();
            build(&coords, dim, &mut order, 0, n, &mut nodes);
        }
        Self { dim, coords, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn dist2(&self, i: usize, q: &[f64]) -> f64 {
        self.point(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Index of the closest point and its squared distance.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, q, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: &[f64], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = self.dist2(i, q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// Indices of all points with `‖p − q‖ ≤ radius`, in ascending order.
    pub fn within_radius(&self, q: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() && radius >= 0.0 {
            self.radius_in(0, q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_in(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| self.dist2(i, q) <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_in(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_in(right, q, r2, out);
                }
            }
        }
    }
}

fn build(
    coords: &[f64],
    dim: usize,
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let axis = (0..dim)
        .max_by(|&a, &b| {
            spread(coords, dim, slice, a).total_cmp(&spread(coords, dim, slice, b))
        })
        .unwrap_or(0);
    if spread(coords, dim, slice, axis) == 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
    });
    let value = coords[slice[mid] * dim + axis];
    nodes.push(Node::Leaf { start, end });
    let left = build(coords, dim, order, start, start + mid, nodes);
    let right = build(coords, dim, order, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

fn spread(coords: &[f64], dim: usize, idx: &[usize], axis: usize) -> f64 {
    let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let v = coords[i * dim + axis];
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(p: &Array2<f64>, q: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, row) in p.rows().into_iter().enumerate() {
            let d: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=4 {
            let n = 300;
            let p = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
            let tree = KdTree::new(p.view());
            for _ in 0..200 {
                let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&p, &q));
                let r = 0.2;
                let expect: Vec<usize> = (0..n)
                    .filter(|&i| {
                        p.row(i).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r * r
                    })
                    .collect();
                assert_eq!(tree.within_radius(&q, r), expect);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // many duplicates on a lattice force equal distances
        let p = Array2::from_shape_fn((40, 2), |(i, j)| ((i / 2) % 5) as f64 + j as f64);
        let tree = KdTree::new(p.view());
        for q in [[0.5, 1.0], [2.0, 2.5], [4.0, 5.0]] {
            assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&p, &q));
        }
    }

    #[test]
    fn empty_tree() {
        let p = Array2::<f64>::zeros((0, 3));
        let tree = KdTree::new(p.view());
        assert!(tree.nearest(&[0.0, 0.0, 0.0]).is_none());
        assert!(tree.within_radius(&[0.0, 0.0, 0.0], 1.0).is_empty());
    }
}
