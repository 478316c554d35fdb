//! Exact nearest-neighbor search for conditioning sets.
//!
//! A static kd-tree over the (scaled, ordered) training points answers two
//! query shapes: "nearest predecessors of ordered point k" (for likelihood
//! conditioning sets) and "nearest training points to an arbitrary query"
//! (for prediction). Each subtree records the minimum ordered position it
//! contains, so predecessor queries prune whole branches that hold only
//! later points.
//!
//! All ties break on (distance, ordered position), a total order, which
//! makes results exactly reproducible; a brute-force twin of each query
//! exists as the test oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::RowMatrix;
use crate::vecchia::order::Ordering;

/// Conditioning sets h(k) over ordered positions: `sets[k]` lists the
/// min(m, k) nearest predecessors of ordered point k, ascending by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSets {
    sets: Vec<Vec<usize>>,
    m: usize,
}

impl NeighborSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn set(&self, k: usize) -> &[usize] {
        &self.sets[k]
    }
}

/// A candidate during search: squared distance plus the tie-breaking
/// position. The `Ord` impl is the (distance, position) lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    pos: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // d2 values are finite by construction.
        self.d2
            .partial_cmp(&other.d2)
            .unwrap()
            .then(self.pos.cmp(&other.pos))
    }
}

/// Bounded best-k collector: a max-heap keeping the k smallest candidates.
struct BestK {
    k: usize,
    heap: std::collections::BinaryHeap<Cand>,
}

impl BestK {
    fn new(k: usize) -> Self {
        BestK {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, c: Cand) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(&worst) = self.heap.peek() {
            if c < worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Current worst kept distance, or infinity while not yet full.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.d2)
        }
    }

    fn into_positions_sorted(self) -> Vec<usize> {
        let mut v: Vec<usize> = self.heap.into_iter().map(|c| c.pos).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Ordered position of the point stored at this node.
    pos: usize,
    /// Split dimension.
    dim: usize,
    /// Minimum ordered position anywhere in this subtree.
    min_pos: usize,
    left: i32,
    right: i32,
}

/// Static, balanced kd-tree over scaled points indexed by ordered position.
#[derive(Debug, Clone)]
pub struct KdTree {
    /// Scaled coordinates, row k = ordered point k.
    points: RowMatrix,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    /// Builds over pre-scaled points (row index = ordered position).
    pub fn build(points: RowMatrix) -> Self {
        let n = points.n_rows();
        let mut tree = KdTree {
            points,
            nodes: Vec::with_capacity(n),
            root: -1,
        };
        let mut idx: Vec<usize> = (0..n).collect();
        tree.root = tree.build_rec(&mut idx);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize]) -> i32 {
        if idx.is_empty() {
            return -1;
        }
        let d = self.points.n_cols();
        // Split along the widest extent (ties to the lowest dimension).
        let mut dim = 0usize;
        let mut widest = f64::NEG_INFINITY;
        for k in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in idx.iter() {
                let v = self.points.row(i)[k];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > widest {
                widest = hi - lo;
                dim = k;
            }
        }
        let mid = idx.len() / 2;
        // Total order (coordinate, position) makes the partition content
        // deterministic even though select_nth is unstable.
        idx.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points.row(a)[dim];
            let cb = self.points.row(b)[dim];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let pos = idx[mid];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node {
            pos,
            dim,
            min_pos: pos,
            left: -1,
            right: -1,
        });
        let (lo_half, rest) = idx.split_at_mut(mid);
        let hi_half = &mut rest[1..];
        let left = self.build_rec(lo_half);
        let right = self.build_rec(hi_half);
        let mut min_pos = pos;
        if left >= 0 {
            min_pos = min_pos.min(self.nodes[left as usize].min_pos);
        }
        if right >= 0 {
            min_pos = min_pos.min(self.nodes[right as usize].min_pos);
        }
        let node = &mut self.nodes[node_id as usize];
        node.left = left;
        node.right = right;
        node.min_pos = min_pos;
        node_id
    }

    /// The `k` nearest points with ordered position < `before` to `query`
    /// (scaled coordinates), ascending by position. Pass `before = n` for an
    /// unrestricted query.
    pub fn k_nearest_before(&self, query: &[f64], k: usize, before: usize) -> Vec<usize> {
        if k == 0 || before == 0 || self.root < 0 {
            return Vec::new();
        }
        let mut best = BestK::new(k.min(before.min(self.points.n_rows())));
        self.search(self.root, query, before, &mut best);
        best.into_positions_sorted()
    }

    fn search(&self, node_id: i32, query: &[f64], before: usize, best: &mut BestK) {
        let node = &self.nodes[node_id as usize];
        if node.min_pos >= before {
            return; // subtree holds only later points
        }
        if node.pos < before {
            let row = self.points.row(node.pos);
            let mut d2 = 0.0;
            for k in 0..query.len() {
                let t = row[k] - query[k];
                d2 += t * t;
            }
            best.offer(Cand { d2, pos: node.pos });
        }
        let delta = query[node.dim] - self.points.row(node.pos)[node.dim];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near >= 0 {
            self.search(near, query, before, best);
        }
        // Recurse into the far side unless the splitting plane alone is
        // strictly worse than the current k-th best; on exact ties a far
        // point could still win by the position tie rule.
        if far >= 0 && delta * delta <= best.bound() {
            self.search(far, query, before, best);
        }
    }
}

fn scaled_points(inputs: &RowMatrix, ordering: &Ordering, scales: &[f64]) -> RowMatrix {
    let n = ordering.len();
    let d = inputs.n_cols();
    assert_eq!(scales.len(), d, "one scale per input column");
    let mut data = vec![0.0; n * d];
    for (k, &orig) in ordering.perm().iter().enumerate() {
        let row = inputs.row(orig);
        for c in 0..d {
            data[k * d + c] = row[c] / scales[c];
        }
    }
    RowMatrix::new(n, d, data)
}

/// Builds the conditioning sets h(k) = min(m, k) nearest predecessors of
/// each ordered point under the scaled metric, via the kd-tree.
pub fn build_neighbors(
    inputs: &RowMatrix,
    ordering: &Ordering,
    m: usize,
    scales: &[f64],
) -> NeighborSets {
    assert!(m >= 1, "conditioning-set size m must be at least 1");
    let pts = scaled_points(inputs, ordering, scales);
    let tree = KdTree::build(pts.clone());
    let sets: Vec<Vec<usize>> = (0..pts.n_rows())
        .into_par_iter()
        .map(|k| tree.k_nearest_before(pts.row(k), m, k))
        .collect();
    NeighborSets { sets, m }
}

/// Brute-force twin of [`build_neighbors`] — the correctness oracle.
pub fn build_neighbors_brute_force(
    inputs: &RowMatrix,
    ordering: &Ordering,
    m: usize,
    scales: &[f64],
) -> NeighborSets {
    assert!(m >= 1, "conditioning-set size m must be at least 1");
    let pts = scaled_points(inputs, ordering, scales);
    let d = pts.n_cols();
    let sets: Vec<Vec<usize>> = (0..pts.n_rows())
        .map(|k| {
            let q = pts.row(k);
            let mut cands: Vec<Cand> = (0..k)
                .map(|j| {
                    let row = pts.row(j);
                    let mut d2 = 0.0;
                    for c in 0..d {
                        let t = row[c] - q[c];
                        d2 += t * t;
                    }
                    Cand { d2, pos: j }
                })
                .collect();
            cands.sort();
            cands.truncate(m);
            let mut out: Vec<usize> = cands.into_iter().map(|c| c.pos).collect();
            out.sort_unstable();
            out
        })
        .collect();
    NeighborSets { sets, m }
}

/// Scales an arbitrary query point into the tree's metric.
pub fn scale_query(query: &[f64], scales: &[f64], out: &mut [f64]) {
    for k in 0..query.len() {
        out[k] = query[k] / scales[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream_rng, Stream};

    fn random_inputs(n: usize, d: usize, seed: u64) -> RowMatrix {
        let mut rng = stream_rng(seed, Stream::Fit);
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
        RowMatrix::new(n, d, data)
    }

    #[test]
    fn tree_matches_brute_force() {
        for &(n, d, m) in &[
            (1usize, 1usize, 1usize),
            (2, 1, 1),
            (17, 2, 5),
            (100, 3, 25),
            (400, 5, 25),
            (120, 2, 119),
        ] {
            let x = random_inputs(n, d, 7 + n as u64);
            let o = Ordering::maximin(&x, &vec![1.0; d]);
            let scales = vec![0.7; d];
            let fast = build_neighbors(&x, &o, m, &scales);
            let slow = build_neighbors_brute_force(&x, &o, m, &scales);
            assert_eq!(fast, slow, "n={n} d={d} m={m}");
        }
    }

    #[test]
    fn duplicated_points_still_agree() {
        let base = random_inputs(40, 2, 99);
        let mut rows: Vec<Vec<f64>> = (0..40).map(|i| base.row(i).to_vec()).collect();
        // Duplicate a handful of rows exactly.
        for i in 0..10 {
            rows.push(rows[i * 3].clone());
        }
        let x = RowMatrix::from_rows(&rows);
        let o = Ordering::maximin(&x, &[1.0, 1.0]);
        let fast = build_neighbors(&x, &o, 7, &[1.0, 1.0]);
        let slow = build_neighbors_brute_force(&x, &o, 7, &[1.0, 1.0]);
        assert_eq!(fast, slow);
    }

    #[test]
    fn set_size_contract() {
        let x = random_inputs(50, 2, 3);
        let o = Ordering::maximin(&x, &[1.0, 1.0]);
        let ns = build_neighbors(&x, &o, 6, &[1.0, 1.0]);
        assert!(ns.set(0).is_empty());
        for k in 0..50 {
            assert_eq!(ns.set(k).len(), k.min(6));
            assert!(ns.set(k).iter().all(|&j| j < k));
            // Ascending position order.
            assert!(ns.set(k).windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn full_conditioning_is_all_predecessors() {
        let x = random_inputs(30, 3, 11);
        let o = Ordering::maximin(&x, &[1.0; 3]);
        let ns = build_neighbors(&x, &o, 29, &[1.0; 3]);
        for k in 0..30 {
            let expect: Vec<usize> = (0..k).collect();
            assert_eq!(ns.set(k), &expect[..]);
        }
    }

    #[test]
    fn anisotropic_scales_pull_neighbors_along_tight_axis() {
        // 2D lattice; with scales (0.01, 1) the x coordinate dominates the
        // metric, so neighbors of a late point share its x before its y.
        let mut rows = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                rows.push(vec![i as f64 / 11.0, j as f64 / 11.0]);
            }
        }
        let x = RowMatrix::from_rows(&rows);
        let o = Ordering::maximin(&x, &[0.01, 1.0]);
        let scales = [0.01, 1.0];
        let fast = build_neighbors(&x, &o, 8, &scales);
        let slow = build_neighbors_brute_force(&x, &o, 8, &scales);
        assert_eq!(fast, slow);

        // Check the geometry claim on the last ordered point.
        let k = 143;
        let qx = x.row(o.perm()[k])[0];
        for &j in fast.set(k) {
            let nx = x.row(o.perm()[j])[0];
            // Any neighbor differing in x by a full lattice step would be
            // 100 scaled units away and could not be among the nearest.
            assert!((nx - qx).abs() < 1.0 / 11.0 + 1e-12);
        }
    }

    #[test]
    fn unrestricted_query_finds_global_nearest() {
        let x = random_inputs(200, 3, 21);
        let o = Ordering::maximin(&x, &[1.0; 3]);
        let pts = scaled_points(&x, &o, &[1.0; 3]);
        let tree = KdTree::build(pts.clone());
        let query = [0.5, 0.5, 0.5];
        let got = tree.k_nearest_before(&query, 10, 200);
        // Brute force over all points.
        let mut cands: Vec<Cand> = (0..200)
            .map(|j| {
                let row = pts.row(j);
                let d2: f64 = row.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                Cand { d2, pos: j }
            })
            .collect();
        cands.sort();
        let mut expect: Vec<usize> = cands[..10].iter().map(|c| c.pos).collect();
        expect.sort_unstable();
        assert_eq!(got, expect);
    }
}
