//! Farthest point sampling, kNN grouping and grouped feature assembly.
//!
//! All distance comparisons use squared Euclidean distance evaluated as
//! `dx*dx + dy*dy + dz*dz` in the point scalar type, so tie behaviour is
//! reproducible bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[inline]
pub fn squared_distance<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min selection of `s` indices starting at `start`.
///
/// Each pick maximizes the distance to the already chosen set; ties go to the
/// lowest index.
pub fn farthest_point_sampling<T: Real>(points: &[[T; 3]], s: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if s > n {
        return Err(Error::TooMany { requested: s, available: n });
    }
    if s == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(shape_err(format!("start index {start} outside {n} points")));
    }
    let taken = -T::one();
    let mut min_d: Vec<T> = points.iter().map(|p| squared_distance(p, &points[start])).collect();
    min_d[start] = taken;
    let mut picks = Vec::with_capacity(s);
    picks.push(start);
    while picks.len() < s {
        let mut best = 0;
        let mut best_d = taken;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        picks.push(best);
        let c = points[best];
        min_d[best] = taken;
        for (d, p) in min_d.iter_mut().zip(points) {
            if *d != taken {
                let nd = squared_distance(p, &c);
                if nd < *d {
                    *d = nd;
                }
            }
        }
    }
    Ok(picks)
}

/// Centers and their neighbour lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIndex {
    pub centers: Vec<usize>,
    /// Row-major `S x K`.
    pub neighbors: Vec<usize>,
    pub k: usize,
}

impl GroupIndex {
    pub fn num_groups(&self) -> usize {
        self.centers.len()
    }

    pub fn row(&self, g: usize) -> &[usize] {
        &self.neighbors[g * self.k..(g + 1) * self.k]
    }
}

/// Ordering used for neighbour lists: the center first, then by squared
/// distance, then by index.
#[inline]
fn neighbor_order<T: Real>(a: (T, bool, usize), b: (T, bool, usize)) -> Ordering {
    (!a.1)
        .cmp(&!b.1)
        .then(a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal))
        .then(a.2.cmp(&b.2))
}

/// The `k` nearest points of every center, nearest first.
pub fn knn_group<T: Real>(points: &[[T; 3]], centers: &[usize], k: usize) -> Result<GroupIndex> {
    let n = points.len();
    if k > n {
        return Err(Error::TooMany { requested: k, available: n });
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
        return Err(shape_err(format!("center {bad} outside {n} points")));
    }
    let mut neighbors = Vec::with_capacity(centers.len() * k);
    let mut keyed: Vec<(T, bool, usize)> = Vec::with_capacity(n);
    for &c in centers {
        keyed.clear();
        let cp = points[c];
        keyed.extend(points.iter().enumerate().map(|(i, p)| (squared_distance(p, &cp), i == c, i)));
        if k == 0 {
            continue;
        }
        if k < n {
            keyed.select_nth_unstable_by(k - 1, |a, b| neighbor_order(*a, *b));
        }
        let head = &mut keyed[..k];
        head.sort_unstable_by(|a, b| neighbor_order(*a, *b));
        neighbors.extend(head.iter().map(|e| e.2));
    }
    Ok(GroupIndex { centers: centers.to_vec(), neighbors, k })
}

/// Per neighbour: its `D` features followed by its offset from the center.
///
/// `features` is `[N, D]` (or `None` for `D = 0`); the result is `[S, K, D + 3]`.
pub fn gather_group_features<T: Real>(
    features: Option<&Tensor<T>>,
    points: &[[T; 3]],
    groups: &GroupIndex,
) -> Result<Tensor<T>> {
    let n = points.len();
    let (d, fdata) = match features {
        Some(f) => {
            if f.ndim() != 2 || f.shape()[0] != n {
                return Err(shape_err(format!("features {:?} for {n} points", f.shape())));
            }
            (f.shape()[1], f.data())
        }
        None => (0, &[][..]),
    };
    let (s, k) = (groups.num_groups(), groups.k);
    let w = d + 3;
    let mut out = Vec::with_capacity(s * k * w);
    for (g, &c) in groups.centers.iter().enumerate() {
        let cp = points[c];
        for &j in groups.row(g) {
            out.extend_from_slice(&fdata[j * d..(j + 1) * d]);
            let p = points[j];
            out.extend_from_slice(&[p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]]);
        }
    }
    Tensor::from_vec(&[s, k, w], out)
}

/// Gradient of [`gather_group_features`] with respect to `features`.
pub fn gather_group_features_backward<T: Real>(dy: &Tensor<T>, n: usize, groups: &GroupIndex) -> Result<Tensor<T>> {
    let (s, k) = (groups.num_groups(), groups.k);
    let shape = dy.shape();
    if shape.len() != 3 || shape[0] != s || shape[1] != k || shape[2] < 3 {
        return Err(shape_err(format!("grouped gradient {:?} for {s} x {k} groups", shape)));
    }
    let d = shape[2] - 3;
    let mut dx = vec![T::zero(); n * d];
    for (row, &j) in dy.data().chunks_exact(d + 3).zip(&groups.neighbors) {
        for (acc, &g) in dx[j * d..(j + 1) * d].iter_mut().zip(&row[..d]) {
            *acc += g;
        }
    }
    Tensor::from_vec(&[n, d], dx)
}
