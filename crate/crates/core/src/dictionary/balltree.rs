//! Exact k-nearest-neighbour search with a ball tree.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::numerics::{squared_distance, Matrix};

pub const DEFAULT_LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub enum NodeKind {
    Leaf(Vec<usize>),
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct BallNode {
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct BallTree {
    points: Matrix,
    nodes: Vec<BallNode>,
    leaf_size: usize,
}

/// A neighbour returned by [`BallTree::knn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl BallTree {
    pub fn build(points: &Matrix) -> Result<Self> {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &Matrix, leaf_size: usize) -> Result<Self> {
        if points.rows() == 0 {
            return invalid("ball tree needs at least one point");
        }
        if leaf_size == 0 {
            return invalid("leaf size must be positive");
        }
        let mut tree = BallTree {
            points: points.clone(),
            nodes: Vec::new(),
            leaf_size,
        };
        tree.build_node((0..points.rows()).collect());
        Ok(tree)
    }

    fn build_node(&mut self, ids: Vec<usize>) -> usize {
        let dim = self.points.cols();
        let mut centroid = vec![0.0; dim];
        for &i in &ids {
            for (c, x) in centroid.iter_mut().zip(self.points.row(i)) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= ids.len() as f64);
        let radius = ids
            .iter()
            .map(|&i| squared_distance(self.points.row(i), &centroid))
            .fold(0.0, f64::max)
            .sqrt();
        let slot = self.nodes.len();
        self.nodes.push(BallNode {
            centroid,
            radius,
            kind: NodeKind::Leaf(Vec::new()),
        });
        if ids.len() <= self.leaf_size {
            self.nodes[slot].kind = NodeKind::Leaf(ids);
            return slot;
        }

        let farthest_from = |from: usize| {
            let mut best = (from, -1.0);
            for &i in &ids {
                let d = squared_distance(self.points.row(i), self.points.row(from));
                if d > best.1 {
                    best = (i, d);
                }
            }
            best.0
        };
        let a = farthest_from(ids[0]);
        let b = farthest_from(a);
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &i in &ids {
            let da = squared_distance(self.points.row(i), self.points.row(a));
            let db = squared_distance(self.points.row(i), self.points.row(b));
            if da <= db {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        if right.is_empty() {
            // every point coincides; no split separates them
            self.nodes[slot].kind = NodeKind::Leaf(left);
            return slot;
        }
        let l = self.build_node(left);
        let r = self.build_node(right);
        self.nodes[slot].kind = NodeKind::Inner { left: l, right: r };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn nodes(&self) -> &[BallNode] {
        &self.nodes
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    /// Longest root-to-leaf path, counting the root as depth 1.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[BallNode], n: usize) -> usize {
            match nodes[n].kind {
                NodeKind::Leaf(_) => 1,
                NodeKind::Inner { left, right } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Exact `m` nearest neighbours ordered by distance, then id.
    pub fn knn(&self, query: &[f64], m: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim() {
            return invalid(format!(
                "query has dimension {}, tree has {}",
                query.len(),
                self.dim()
            ));
        }
        if m > self.len() {
            return invalid(format!("asked for {m} neighbours of {} points", self.len()));
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(m + 1);
        if m > 0 {
            self.search(0, query, m, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.d2.sqrt(),
            })
            .collect())
    }

    fn search(&self, node: usize, q: &[f64], m: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        if heap.len() == m {
            let lower = squared_distance(q, &n.centroid).sqrt() - n.radius;
            let worst = heap.peek().expect("heap is full").d2.sqrt();
            // slack keeps pruning conservative under rounding
            if lower > worst * (1.0 + 1e-12) + 1e-12 {
                return;
            }
        }
        match &n.kind {
            NodeKind::Leaf(ids) => {
                for &id in ids {
                    let cand = Candidate {
                        d2: squared_distance(q, self.points.row(id)),
                        id,
                    };
                    if heap.len() < m {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            &NodeKind::Inner { left, right } => {
                let dl = squared_distance(q, &self.nodes[left].centroid);
                let dr = squared_distance(q, &self.nodes[right].centroid);
                let (first, second) = if dl <= dr { (left, right) } else { (right, left) };
                self.search(first, q, m, heap);
                self.search(second, q, m, heap);
            }
        }
    }
}

pub fn ball_tree_build(keys: &Matrix) -> Result<BallTree> {
    BallTree::build(keys)
}

pub fn ball_tree_knn(tree: &BallTree, query: &[f64], m: usize) -> Result<Vec<Neighbor>> {
    tree.knn(query, m)
}
