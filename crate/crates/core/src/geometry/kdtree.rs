//! Static kd-tree for exact nearest-neighbor queries.
//!
//! Results are identical to a brute-force scan: distance ties resolve to the
//! lowest point index.

use super::cloud::{dist2, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_range(0, points.len());
        }
        tree
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis])
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `q` as `(index, squared distance)`.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (first, second) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(first, q, best);
                if diff * diff <= best.1 {
                    self.search(second, q, best);
                }
            }
        }
    }
}

/// For each query point, the index and squared distance of its nearest point
/// in `targets`. Uses a scan for small inputs and the kd-tree otherwise.
pub fn nearest_all(queries: &[Point3], targets: &[Point3]) -> Vec<(usize, f64)> {
    if targets.is_empty() {
        return Vec::new();
    }
    if queries.len() * targets.len() <= 4096 {
        return queries
            .iter()
            .map(|q| {
                let mut best = (0, f64::INFINITY);
                for (j, t) in targets.iter().enumerate() {
                    let d = dist2(q, t);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect();
    }
    let tree = KdTree::build(targets);
    queries
        .iter()
        .map(|q| tree.nearest(q).expect("non-empty tree"))
        .collect()
}
