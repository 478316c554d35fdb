//! Orderings of the training stack for the sparse-likelihood factorization.
//!
//! The quality of small conditioning sets depends heavily on point order;
//! the greedy farthest-point (maximin) order spreads early points over the
//! whole input domain so that every later point has close predecessors.

use serde::{Deserialize, Serialize};

use crate::linalg::RowMatrix;

/// How an ordering was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMethod {
    Maximin,
    Original,
}

/// A permutation of the training rows. `perm[k]` is the original row index
/// of the point at ordered position `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    perm: Vec<usize>,
    method: OrderMethod,
}

impl Ordering {
    /// Identity ordering.
    pub fn original(n: usize) -> Self {
        Ordering {
            perm: (0..n).collect(),
            method: OrderMethod::Original,
        }
    }

    /// Greedy farthest-point ordering under the scaled Euclidean metric
    /// (coordinate k divided by `scales[k]`).
    ///
    /// The first point is the one nearest the centroid; every subsequent
    /// point maximizes the minimum distance to the points already chosen.
    /// All ties break toward the lowest original index, making the result
    /// deterministic even with duplicated points.
    pub fn maximin(inputs: &RowMatrix, scales: &[f64]) -> Self {
        let n = inputs.n_rows();
        let d = inputs.n_cols();
        assert_eq!(scales.len(), d, "one scale per input column");
        assert!(scales.iter().all(|&s| s > 0.0), "scales must be positive");
        if n == 0 {
            return Ordering {
                perm: Vec::new(),
                method: OrderMethod::Maximin,
            };
        }

        // Pre-scale coordinates so all distances below are plain Euclidean.
        let mut pts = vec![0.0; n * d];
        for i in 0..n {
            let row = inputs.row(i);
            for k in 0..d {
                pts[i * d + k] = row[k] / scales[k];
            }
        }
        let mut centroid = vec![0.0; d];
        for i in 0..n {
            for k in 0..d {
                centroid[k] += pts[i * d + k];
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }

        let dist2 = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for k in 0..d {
                let t = a[k] - b[k];
                s += t * t;
            }
            s
        };

        let mut first = 0usize;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let di = dist2(&pts[i * d..(i + 1) * d], &centroid);
            if di < best {
                best = di;
                first = i;
            }
        }

        let mut perm = Vec::with_capacity(n);
        let mut chosen = vec![false; n];
        // min_d2[i]: squared distance from point i to the chosen set.
        let mut min_d2 = vec![f64::INFINITY; n];
        perm.push(first);
        chosen[first] = true;
        for i in 0..n {
            if !chosen[i] {
                min_d2[i] = dist2(&pts[i * d..(i + 1) * d], &pts[first * d..(first + 1) * d]);
            }
        }
        for _ in 1..n {
            let mut next = usize::MAX;
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                if !chosen[i] && min_d2[i] > best {
                    best = min_d2[i];
                    next = i;
                }
            }
            perm.push(next);
            chosen[next] = true;
            let np = &pts[next * d..(next + 1) * d];
            for i in 0..n {
                if !chosen[i] {
                    let di = dist2(&pts[i * d..(i + 1) * d], np);
                    if di < min_d2[i] {
                        min_d2[i] = di;
                    }
                }
            }
        }
        Ordering {
            perm,
            method: OrderMethod::Maximin,
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn method(&self) -> OrderMethod {
        self.method
    }

    /// Rebuilds from a stored permutation, checking bijectivity.
    pub fn from_perm(perm: Vec<usize>, method: OrderMethod) -> crate::error::Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(crate::error::Error::validation(
                    "stored ordering is not a permutation",
                ));
            }
            seen[p] = true;
        }
        Ok(Ordering { perm, method })
    }
}
