//! A static 3D kd-tree for k-nearest-neighbor queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    // Distance first, index as tie-breaker, so results are deterministic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    root: Node,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = build_node(points, &mut order, 0, points.len());
        Self {
            points: points.to_vec(),
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `query`, ascending by distance, skipping
    /// `exclude` when given.
    pub fn nearest(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, query, k, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        node: &Node,
        query: &Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &index in &self.order[*start..*end] {
                    if Some(index) == exclude {
                        continue;
                    }
                    let candidate = Neighbor {
                        index,
                        dist2: (self.points[index] - query).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(candidate);
                    } else if heap.peek().is_some_and(|worst| candidate < *worst) {
                        heap.pop();
                        heap.push(candidate);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, exclude, heap);
                // `<=` keeps equal-distance candidates reachable for the index tie-break.
                if heap.len() < k || heap.peek().is_some_and(|w| diff * diff <= w.dist2) {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(points: &[Point3], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    if hi[axis] - lo[axis] == 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    let split = start + mid;
    Node::Split {
        axis,
        value,
        left: Box::new(build_node(points, order, start, split)),
        right: Box::new(build_node(points, order, split, end)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Point3], q: usize, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != q)
            .map(|(index, p)| Neighbor {
                index,
                dist2: (p - points[q]).norm_squared(),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 20 + trial * 24;
            let points: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let tree = KdTree::build(&points);
            for k in [1, 5, 15] {
                for q in 0..n {
                    assert_eq!(tree.nearest(&points[q], k, Some(q)), brute_force(&points, q, k));
                }
            }
        }
    }

    #[test]
    fn duplicates_and_small_sets() {
        let points = vec![Point3::new(1.0, 1.0, 1.0); 30];
        let tree = KdTree::build(&points);
        let nn = tree.nearest(&points[3], 4, Some(3));
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2, 4]);
        let nn = tree.nearest(&points[0], 100, Some(0));
        assert_eq!(nn.len(), 29);
    }
}
