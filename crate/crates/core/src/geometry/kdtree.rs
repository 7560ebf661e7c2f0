use super::{sq_dist, PointSet};
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;

enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Exact nearest-neighbour index over a fixed reference set.
///
/// Returns the same argmin as a linear scan, including the lowest-index rule
/// for equidistant points.
pub struct KdTree<'a, T> {
    points: &'a PointSet<T>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> KdTree<'a, T> {
    pub fn build(points: &'a PointSet<T>) -> Self {
        let mut tree = Self { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        let n = tree.order.len();
        tree.build_node(0, n, 0);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = depth % self.points.dim();
        let pts = self.points;
        self.order[start..end]
            .sort_by(|&a, &b| pts.point(a)[axis].partial_cmp(&pts.point(b)[axis]).unwrap().then(a.cmp(&b)));
        let mid = start + (end - start) / 2;
        let value = pts.point(self.order[mid])[axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid, depth + 1);
        let right = self.build_node(mid, end, depth + 1);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// `(index, squared distance)` of the nearest point to `q`.
    pub fn nearest(&self, q: &[T]) -> (usize, T) {
        let mut best = (usize::MAX, T::infinity());
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[T], best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_dist(q, self.points.point(i));
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta <= T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equality still descends: an equidistant point may have a lower index.
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}
