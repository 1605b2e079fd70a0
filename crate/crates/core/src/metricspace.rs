//! Distance/similarity kernels shared by clustering, association, and
//! evaluation: cosine similarity matrices, k-reciprocal Jaccard distance,
//! and exact k-nearest-neighbor queries.

use serde::{Deserialize, Serialize};

use crate::error::{O2capError, Result};
use crate::vecmath::dot;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Pairwise dot products: `out[i][j] = A_i . B_j`. With unit-norm inputs
/// this is the cosine similarity matrix.
pub fn cosine_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Matrix> {
    if let (Some(fa), Some(fb)) = (a.first(), b.first()) {
        if fa.len() != fb.len() {
            return Err(O2capError::Shape(format!(
                "dimension mismatch: {} vs {}",
                fa.len(),
                fb.len()
            )));
        }
    }
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, va) in a.iter().enumerate() {
        for (j, vb) in b.iter().enumerate() {
            if va.len() != vb.len() {
                return Err(O2capError::Shape("ragged embedding set".into()));
            }
            m.set(i, j, dot(va, vb));
        }
    }
    Ok(m)
}

/// Parameters for the k-reciprocal Jaccard distance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct JaccardParams {
    /// Reciprocal-neighborhood size (number of neighbors besides self).
    pub k1: usize,
    /// Local query-expansion size (neighborhood including self).
    pub k2: usize,
    /// Blend of original distance and Jaccard distance.
    pub lambda: f64,
}

impl Default for JaccardParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.0,
        }
    }
}

impl JaccardParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k1 >= n {
            return Err(O2capError::Parameter(format!(
                "k1={} must be < number of points {n}",
                self.k1
            )));
        }
        if self.k2 < 1 || self.k2 >= self.k1 {
            return Err(O2capError::Parameter(format!(
                "need k1 > k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(O2capError::Parameter(format!(
                "lambda={} must lie in [0,1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Sort indices of a distance row ascending, ties broken by index.
fn rank_by_distance(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Reciprocal neighborhood: j such that j is among i's (k+1) nearest
/// (self included) and i is among j's (k+1) nearest.
fn reciprocal_set(ranked: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    let fwd = &ranked[i][..(k + 1).min(ranked[i].len())];
    let mut out: Vec<usize> = fwd
        .iter()
        .copied()
        .filter(|&j| ranked[j][..(k + 1).min(ranked[j].len())].contains(&i))
        .collect();
    out.sort_unstable();
    out
}

/// k-reciprocal Jaccard distance over all pairs, blended with the
/// normalized original distance `(1 - cosine) / 2` via `lambda`.
///
/// The pipeline follows the standard re-ranking construction: reciprocal
/// neighborhoods of size `k1` with incremental expansion by half-size
/// neighborhoods, Gaussian weighting of the original distances, local
/// query expansion over the `k2`-neighborhood, and a set-based Jaccard
/// distance between the resulting weighted neighbor sets.
pub fn jaccard_distance(x: &[Vec<f64>], p: &JaccardParams) -> Result<Matrix> {
    let n = x.len();
    if n < 2 {
        return Err(O2capError::Parameter("need at least 2 points".into()));
    }
    p.validate(n)?;

    let cos = cosine_matrix(x, x)?;
    let mut d_orig = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = if i == j {
                0.0
            } else {
                (1.0 - cos.get(i, j)) / 2.0
            };
            d_orig.set(i, j, d.clamp(0.0, 1.0));
        }
    }

    let ranked: Vec<Vec<usize>> = (0..n).map(|i| rank_by_distance(d_orig.row(i))).collect();

    let half = (p.k1 / 2).max(1);
    let mut weighted: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let base = reciprocal_set(&ranked, i, p.k1);
        let mut expanded = base.clone();
        for &j in &base {
            let cand = reciprocal_set(&ranked, j, half);
            let overlap = cand
                .iter()
                .filter(|c| base.binary_search(c).is_ok())
                .count();
            if 3 * overlap >= 2 * cand.len() {
                expanded.extend(cand);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        let mut row: Vec<(usize, f64)> = expanded
            .into_iter()
            .map(|j| (j, (-d_orig.get(i, j)).exp()))
            .collect();
        let total: f64 = row.iter().map(|(_, w)| w).sum();
        for (_, w) in row.iter_mut() {
            *w /= total;
        }
        weighted.push(row);
    }

    // Local query expansion: average the weighted sets of the k2 nearest
    // points (self included).
    let expanded: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let neigh = &ranked[i][..p.k2.min(n)];
            let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
            for &j in neigh {
                for &(k, w) in &weighted[j] {
                    *acc.entry(k).or_insert(0.0) += w;
                }
            }
            let scale = 1.0 / neigh.len() as f64;
            acc.into_iter().map(|(k, w)| (k, w * scale)).collect()
        })
        .collect();

    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let minsum = sparse_min_sum(&expanded[i], &expanded[j]);
            let d_j = (1.0 - minsum / (2.0 - minsum)).clamp(0.0, 1.0);
            let d = p.lambda * d_orig.get(i, j) + (1.0 - p.lambda) * d_j;
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

fn sparse_min_sum(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut ia, mut ib, mut acc) = (0, 0, 0.0);
    while ia < a.len() && ib < b.len() {
        match a[ia].0.cmp(&b[ib].0) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                acc += a[ia].1.min(b[ib].1);
                ia += 1;
                ib += 1;
            }
        }
    }
    acc
}

/// Top-k indices of a similarity row, sorted by similarity descending,
/// ties broken by ascending index. Excluded indices are skipped; fewer
/// than `k` survivors yields all of them.
pub fn knn(sims: &[f64], k: usize, exclude: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&i| !exclude(i)).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
