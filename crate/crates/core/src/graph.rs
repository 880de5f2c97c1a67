//! Neighbor-affinity graph construction.
//!
//! Each sample's affinity row is the closed-form solution of a simplex-
//! constrained least-squares problem over its squared distances: the `p`
//! nearest neighbors receive weights proportional to how far inside the
//! `(p+1)`-th distance they sit, and the row sums to one.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::matrix::{pairwise_sq_dist, DataMatrix};

/// Denominator threshold below which a row falls back to uniform weights.
const DEGENERATE_DENOM: f64 = 1e-15;

/// A `p`-neighbor affinity graph with its symmetrized weights and Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    a: Array2<f64>,
    w: Array2<f64>,
    degrees: Array1<f64>,
    laplacian: Array2<f64>,
    p: usize,
}

impl AffinityGraph {
    /// Row-wise affinity matrix; each row sums to one, zero diagonal.
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    /// Symmetrized weights `(A + A^T) / 2`.
    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    /// Row sums of `W`.
    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    /// Unnormalized graph Laplacian `D - W`.
    pub fn laplacian(&self) -> &Array2<f64> {
        &self.laplacian
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn sample_count(&self) -> usize {
        self.a.nrows()
    }
}

/// Solves one affinity row from a full length-`n` squared-distance row.
///
/// `d_row[self_index]` is ignored; the output places zero there and at every
/// non-neighbor. Neighbors are the `p` smallest remaining distances under a
/// stable `(distance, index)` order. When the closed-form denominator
/// degenerates (all candidate distances equal), the row falls back to uniform
/// `1/p` over the first `p` candidates.
pub fn solve_affinity_row(
    d_row: ArrayView1<f64>,
    self_index: usize,
    p: usize,
) -> Result<Array1<f64>> {
    let n = d_row.len();
    if self_index >= n {
        return Err(Error::invalid(format!(
            "self index {self_index} out of range for row of length {n}"
        )));
    }
    if p < 1 {
        return Err(Error::invalid("neighbor count must be at least 1"));
    }
    if p > n.saturating_sub(2) {
        return Err(Error::invalid(format!(
            "neighbor count {p} too large: need p <= n - 2 with n = {n}"
        )));
    }
    for (j, &d) in d_row.iter().enumerate() {
        if j != self_index && (!d.is_finite() || d < 0.0) {
            return Err(Error::invalid(format!(
                "distance at position {j} is not a finite nonnegative value"
            )));
        }
    }

    let mut candidates: Vec<(f64, usize)> = d_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(j, &d)| (d, j))
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut row = Array1::<f64>::zeros(n);
    let d_next = candidates[p].0;
    let nearest_sum: f64 = candidates[..p].iter().map(|&(d, _)| d).sum();
    let denom = p as f64 * d_next - nearest_sum;
    if denom <= DEGENERATE_DENOM {
        for &(_, j) in &candidates[..p] {
            row[j] = 1.0 / p as f64;
        }
    } else {
        for &(d, j) in &candidates[..p] {
            row[j] = (d_next - d).max(0.0) / denom;
        }
    }
    Ok(row)
}

/// Builds the affinity graph of a dataset from its pairwise squared distances.
pub fn build_graph(x: &DataMatrix, p: usize) -> Result<AffinityGraph> {
    let d = pairwise_sq_dist(&x.values().view());
    build_graph_from_distances(&d.view(), p)
}

/// Builds the graph from a precomputed `n x n` squared-distance matrix.
pub fn build_graph_from_distances(d: &ArrayView2<f64>, p: usize) -> Result<AffinityGraph> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::invalid("distance matrix must be square"));
    }
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let row = solve_affinity_row(d.row(i), i, p)?;
        a.row_mut(i).assign(&row);
    }
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let (degrees, laplacian) = laplacian_parts(&w.view());
    Ok(AffinityGraph {
        a,
        w,
        degrees,
        laplacian,
        p,
    })
}

/// Degree vector and unnormalized Laplacian `D - W` of a symmetric
/// nonnegative weight matrix.
pub fn laplacian_of(w: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::invalid("weight matrix must be square"));
    }
    let scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if w[[i, j]] < 0.0 {
                return Err(Error::invalid(format!(
                    "negative weight at ({i}, {j})"
                )));
            }
            if (w[[i, j]] - w[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "weight matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(laplacian_parts(w))
}

fn laplacian_parts(w: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = w.nrows();
    let degrees = Array1::from_iter(w.rows().into_iter().map(|r| r.sum()));
    let mut laplacian = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            laplacian[[i, j]] = if i == j {
                degrees[i] - w[[i, j]]
            } else {
                -w[[i, j]]
            };
        }
    }
    (degrees, laplacian)
}

/// Writes every strictly positive weight as a `i j weight` line, row-major,
/// with 17 significant digits so the matrix reloads exactly.
pub fn write_edge_list<Out: Write>(w: &ArrayView2<f64>, mut out: Out) -> std::io::Result<()> {
    for ((i, j), &weight) in w.indexed_iter() {
        if weight > 0.0 {
            writeln!(out, "{} {} {}", i, j, format_g17(weight))?;
        }
    }
    Ok(())
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn format_g17(x: f64) -> String {
    format!("{:.16e}", x)
}
