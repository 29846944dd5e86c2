//! Exact k-nearest-neighbour search over low-dimensional points.
//!
//! Ties are broken by point index so neighbour sets are a pure function of
//! the input, independent of traversal order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over `n` points stored row-major with `dim` coordinates.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<f64>,
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0, "kd-tree needs at least one dimension");
        assert_eq!(points.len() % dim, 0, "point buffer is not a multiple of dim");
        let n = points.len() / dim;
        let mut tree = Self { points, dim, order: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.points[i * self.dim + axis]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split along the axis of largest spread.
        let mut axis = 0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let c = self.coord(i, a);
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > best {
                best = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        let (points, dim) = (&self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis]).then(a.cmp(&b))
        });
        let value = self.coord(self.order[mid], axis);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn dist2(&self, i: usize, q: &[f64]) -> f64 {
        self.point(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// The `k` nearest points to `query` as `(index, distance)`, closest
    /// first. `exclude` drops one index (typically the query point itself).
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    pub fn nearest(&self, query: &[f64]) -> Option<usize> {
        self.knn(query, 1, None).first().map(|&(i, _)| i)
    }

    fn search(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate { dist2: self.dist2(i, q), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // Equal distances still matter because of the index tie-break.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[f64], dim: usize, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let n = points.len() / dim;
        let mut c: Vec<(f64, usize)> = (0..n)
            .filter(|&i| Some(i) != exclude)
            .map(|i| {
                let d: f64 = (0..dim).map(|a| (points[i * dim + a] - q[a]).powi(2)).sum();
                (d, i)
            })
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in 1..=3 {
            let n = 500;
            let pts: Vec<f64> = (0..n * dim).map(|_| rng.random()).collect();
            let tree = KdTree::new(pts.clone(), dim);
            for i in 0..n {
                let q = &pts[i * dim..(i + 1) * dim];
                let got: Vec<usize> = tree.knn(q, 7, Some(i)).into_iter().map(|(j, _)| j).collect();
                assert_eq!(got, brute(&pts, dim, q, 7, Some(i)));
            }
        }
    }

    #[test]
    fn duplicates_and_ties() {
        // A lattice has many equal distances; duplicates give zero distances.
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.extend_from_slice(&[i as f64, j as f64]);
            }
        }
        pts.extend_from_slice(&[3.0, 3.0, 3.0, 3.0]);
        let tree = KdTree::new(pts.clone(), 2);
        for i in 0..102 {
            let q = &pts[i * 2..i * 2 + 2];
            let got: Vec<usize> = tree.knn(q, 5, Some(i)).into_iter().map(|(j, _)| j).collect();
            assert_eq!(got, brute(&pts, 2, q, 5, Some(i)), "query {i}");
        }
        assert_eq!(tree.nearest(&[3.1, 2.9]), Some(33));
    }
}
