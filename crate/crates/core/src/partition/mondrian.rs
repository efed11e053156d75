//! Mondrian trees: recursive axis-aligned random partitions driven by an
//! exponential cut clock.

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{EsiError, Result};
use crate::geometry::{Domain, LocationSet};

/// One node of a Mondrian tree, stored in an arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MondrianNode {
    Leaf {
        #[serde(rename = "box")]
        bounds: Domain,
        cell: usize,
    },
    Split {
        #[serde(rename = "box")]
        bounds: Domain,
        /// Box the cut was drawn on: the node box itself, or the data
        /// bounding box `θ*` for trained trees.
        active: Domain,
        cut_dim: usize,
        cut_pos: f64,
        birth_time: f64,
        lower: usize,
        upper: usize,
    },
}

impl MondrianNode {
    pub fn bounds(&self) -> &Domain {
        match self {
            MondrianNode::Leaf { bounds, .. } | MondrianNode::Split { bounds, .. } => bounds,
        }
    }
}

/// A sampled Mondrian tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianTree {
    lifetime: f64,
    trained: bool,
    nodes: Vec<MondrianNode>,
    n_leaves: usize,
}

impl MondrianTree {
    pub fn nodes(&self) -> &[MondrianNode] {
        &self.nodes
    }

    pub fn domain(&self) -> &Domain {
        self.nodes[0].bounds()
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Leaf containing `x`. Coordinates equal to a cut go to the upper child.
    pub fn cell_id(&self, x: &[f64]) -> Result<usize> {
        if !self.domain().contains(x) {
            return Err(EsiError::OutOfDomain(x.to_vec()));
        }
        Ok(self.descend(x))
    }

    pub(crate) fn descend(&self, x: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                MondrianNode::Leaf { cell, .. } => return *cell,
                MondrianNode::Split { cut_dim, cut_pos, lower, upper, .. } => {
                    node = if x[*cut_dim] < *cut_pos { *lower } else { *upper };
                }
            }
        }
    }
}

struct Builder<'a, R> {
    rng: &'a mut R,
    lifetime: f64,
    nodes: Vec<MondrianNode>,
    n_leaves: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, bounds: Domain) -> usize {
        let id = self.nodes.len();
        self.nodes.push(MondrianNode::Leaf { bounds, cell: self.n_leaves });
        self.n_leaves += 1;
        id
    }

    /// Draws the next cut time on `active`; `None` when the clock outlives λ.
    fn next_cut(&mut self, active: &Domain, time: f64) -> Option<f64> {
        let rate = active.measure();
        if !(rate > 0.0) {
            return None;
        }
        let wait = Exp::new(rate).ok()?.sample(self.rng);
        let t = time + wait;
        (t < self.lifetime).then_some(t)
    }

    /// Dimension ∝ side length and a position strictly inside that side.
    fn draw_cut(&mut self, active: &Domain) -> (usize, f64) {
        let total = active.measure();
        let mut u = self.rng.random::<f64>() * total;
        let mut dim = active.dim() - 1;
        for (i, side) in active.sides().enumerate() {
            if u < side {
                dim = i;
                break;
            }
            u -= side;
        }
        // guard against round-off landing on a zero-length side
        if active.side(dim) <= 0.0 {
            dim = (0..active.dim())
                .max_by(|&a, &b| active.side(a).total_cmp(&active.side(b)))
                .unwrap_or(0);
        }
        let (a, b) = (active.lower()[dim], active.upper()[dim]);
        let pos = loop {
            let p = self.rng.random_range(a..b);
            if p > a {
                break p;
            }
        };
        (dim, pos)
    }

    fn push_split(
        &mut self,
        bounds: Domain,
        active: Domain,
        cut: (usize, f64),
        time: f64,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(MondrianNode::Split {
            bounds,
            active,
            cut_dim: cut.0,
            cut_pos: cut.1,
            birth_time: time,
            lower: usize::MAX,
            upper: usize::MAX,
        });
        id
    }

    fn link(&mut self, id: usize, lo: usize, hi: usize) {
        if let MondrianNode::Split { lower, upper, .. } = &mut self.nodes[id] {
            *lower = lo;
            *upper = hi;
        }
    }

    fn branch(&mut self, bounds: Domain, time: f64) -> usize {
        let Some(t) = self.next_cut(&bounds, time) else {
            return self.leaf(bounds);
        };
        let cut = self.draw_cut(&bounds);
        let (lo_box, hi_box) = bounds.split(cut.0, cut.1);
        let id = self.push_split(bounds.clone(), bounds, cut, t);
        let hi = self.branch(hi_box, t);
        let lo = self.branch(lo_box, t);
        self.link(id, lo, hi);
        id
    }

    fn trained_branch(
        &mut self,
        bounds: Domain,
        time: f64,
        points: ArrayView2<'_, f64>,
        members: Vec<usize>,
    ) -> usize {
        if members.len() <= 1 {
            return self.leaf(bounds);
        }
        let active = Domain::bounding(points, &members).expect("nonempty members");
        let Some(t) = self.next_cut(&active, time) else {
            return self.leaf(bounds);
        };
        let cut = self.draw_cut(&active);
        let (lo_box, hi_box) = bounds.split(cut.0, cut.1);
        let (lo_members, hi_members): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(|&i| points[[i, cut.0]] < cut.1);
        let id = self.push_split(bounds, active, cut, t);
        let hi = self.trained_branch(hi_box, t, points, hi_members);
        let lo = self.trained_branch(lo_box, t, points, lo_members);
        self.link(id, lo, hi);
        id
    }
}

/// Samples an untrained Mondrian tree on `domain` with lifetime `lambda`.
pub fn sample_mondrian<R: Rng>(domain: &Domain, lambda: f64, rng: &mut R) -> MondrianTree {
    let mut b = Builder { rng, lifetime: lambda, nodes: Vec::new(), n_leaves: 0 };
    if lambda > 0.0 {
        b.branch(domain.clone(), 0.0);
    } else {
        b.leaf(domain.clone());
    }
    MondrianTree { lifetime: lambda, trained: false, nodes: b.nodes, n_leaves: b.n_leaves }
}

/// Samples a Mondrian tree whose cut clock and cut positions run on the
/// bounding box of the conditioning points inside each node.
pub fn sample_trained_mondrian<R: Rng>(
    domain: &Domain,
    lambda: f64,
    points: &LocationSet,
    rng: &mut R,
) -> Result<MondrianTree> {
    if points.is_empty() {
        return Err(EsiError::Empty("training points"));
    }
    if points.dim() != domain.dim() {
        return Err(EsiError::DimensionMismatch { expected: domain.dim(), got: points.dim() });
    }
    for row in points.coords().rows() {
        let x = row.to_vec();
        if !domain.contains(&x) {
            return Err(EsiError::OutOfDomain(x));
        }
    }
    let mut b = Builder { rng, lifetime: lambda, nodes: Vec::new(), n_leaves: 0 };
    if lambda > 0.0 {
        b.trained_branch(domain.clone(), 0.0, points.coords(), (0..points.len()).collect());
    } else {
        b.leaf(domain.clone());
    }
    Ok(MondrianTree { lifetime: lambda, trained: true, nodes: b.nodes, n_leaves: b.n_leaves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Domain {
        Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    fn check_structure(tree: &MondrianTree) {
        let mut stack = vec![(0usize, 0.0f64)];
        let mut leaves = 0;
        while let Some((id, parent_time)) = stack.pop() {
            match &tree.nodes()[id] {
                MondrianNode::Leaf { .. } => leaves += 1,
                MondrianNode::Split { bounds, active, cut_dim, cut_pos, birth_time, lower, upper } => {
                    assert!(*birth_time > parent_time);
                    assert!(*birth_time < tree.lifetime());
                    assert!(active.lower()[*cut_dim] < *cut_pos);
                    assert!(*cut_pos < active.upper()[*cut_dim]);
                    let (lo, hi) = bounds.split(*cut_dim, *cut_pos);
                    assert_eq!(tree.nodes()[*lower].bounds(), &lo);
                    assert_eq!(tree.nodes()[*upper].bounds(), &hi);
                    stack.push((*lower, *birth_time));
                    stack.push((*upper, *birth_time));
                }
            }
        }
        assert_eq!(leaves, tree.n_leaves());
    }

    #[test]
    fn tiny_lifetime_is_single_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_mondrian(&unit(), 0.0, &mut rng);
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.cell_id(&[0.3, 0.9]).unwrap(), 0);
        let t = sample_mondrian(&unit(), 1e-12, &mut rng);
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn degenerate_box_is_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat = Domain::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        assert_eq!(sample_mondrian(&flat, 100.0, &mut rng).n_leaves(), 1);
    }

    #[test]
    fn structure_invariants_hold() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = sample_mondrian(&unit(), 5.0, &mut rng);
            check_structure(&t);
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let a = sample_mondrian(&unit(), 4.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_mondrian(&unit(), 4.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn point_on_cut_goes_upper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = loop {
            let t = sample_mondrian(&unit(), 2.0, &mut rng);
            if t.n_leaves() > 1 {
                break t;
            }
        };
        let MondrianNode::Split { cut_dim, cut_pos, upper, .. } = &t.nodes()[0] else {
            unreachable!()
        };
        let mut x = vec![0.5, 0.5];
        x[*cut_dim] = *cut_pos;
        let upper_box = t.nodes()[*upper].bounds();
        let cell = t.cell_id(&x).unwrap();
        // the leaf reached must lie within the upper child's box
        let leaf_box = t
            .nodes()
            .iter()
            .find_map(|n| match n {
                MondrianNode::Leaf { bounds, cell: c } if *c == cell => Some(bounds.clone()),
                _ => None,
            })
            .unwrap();
        assert!(leaf_box.lower()[*cut_dim] >= upper_box.lower()[*cut_dim]);
    }

    #[test]
    fn out_of_domain_rejected() {
        let t = sample_mondrian(&unit(), 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(t.cell_id(&[1.5, 0.5]), Err(EsiError::OutOfDomain(_))));
    }

    #[test]
    fn trained_single_point_is_leaf() {
        let p = LocationSet::from_rows(&[vec![0.2, 0.4]]).unwrap();
        let t = sample_trained_mondrian(&unit(), 100.0, &p, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn trained_cuts_stay_within_data_box() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![0.2 + 0.01 * i as f64, 0.5]).collect();
        let p = LocationSet::from_rows(&rows).unwrap();
        for seed in 0..20 {
            let t = sample_trained_mondrian(&unit(), 50.0, &p, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            check_structure(&t);
            for node in t.nodes() {
                if let MondrianNode::Split { cut_dim, cut_pos, .. } = node {
                    assert_eq!(*cut_dim, 0);
                    assert!(*cut_pos > 0.2 && *cut_pos < 0.39 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn trained_rejects_outside_points() {
        let p = LocationSet::from_rows(&[vec![0.2, 1.4]]).unwrap();
        assert!(sample_trained_mondrian(&unit(), 1.0, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
