//! Dense data containers and the matrix kernels the rest of the crate builds on.
//!
//! Samples are stored as columns: a data matrix is `m x n` for `m` features
//! and `n` samples. All numerics are `f64`.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Feature-by-sample data matrix (`m x n`, samples as columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    /// Wraps an `m x n` matrix whose columns are samples.
    ///
    /// Rejects non-finite entries, empty feature sets, and fewer than two
    /// samples.
    pub fn from_columns(values: Array2<f64>) -> Result<Self> {
        let (m, n) = values.dim();
        if m < 1 {
            return Err(Error::invalid("data matrix needs at least one feature"));
        }
        if n < 2 {
            return Err(Error::invalid(format!(
                "data matrix needs at least two samples, got {n}"
            )));
        }
        if let Some((i, j)) = first_non_finite(&values.view()) {
            return Err(Error::invalid(format!(
                "non-finite entry at feature {i}, sample {j}"
            )));
        }
        Ok(DataMatrix { values })
    }

    /// Wraps an `n x m` matrix whose rows are samples, transposing on ingest.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        Self::from_columns(rows.reversed_axes().as_standard_layout().to_owned())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Number of features `m`.
    pub fn feature_dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of samples `n`.
    pub fn sample_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Rescales every feature to `[0, 1]` independently; constant features
    /// map to zero.
    pub fn scale_features_minmax(&self) -> DataMatrix {
        let mut scaled = self.values.clone();
        for mut row in scaled.rows_mut() {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            if span > 0.0 {
                row.mapv_inplace(|x| (x - lo) / span);
            } else {
                row.fill(0.0);
            }
        }
        DataMatrix { values: scaled }
    }
}

/// Ground-truth class labels: dense ids in `[0, c)` with every class present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    class_count: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("label vector must be non-empty"));
        }
        let mut seen = vec![false; class_count];
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::invalid(format!(
                    "label {l} at position {i} is outside [0, {class_count})"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("class {missing} has no samples")));
        }
        Ok(LabelVector {
            labels,
            class_count,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class sample counts, indexed by class id.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Symmetric positive semidefinite sample inner-product matrix `X^T X`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
}

impl GramMatrix {
    /// Computes `X^T X` for an `m x n` matrix (samples as columns) and
    /// symmetrizes the product to remove rounding skew.
    pub fn compute(x: &ArrayView2<f64>) -> GramMatrix {
        let product = x.t().dot(x);
        let mut values = product.clone();
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                values[[i, j]] = 0.5 * (product[[i, j]] + product[[j, i]]);
            }
        }
        GramMatrix { values }
    }

    pub fn from_data(x: &DataMatrix) -> GramMatrix {
        Self::compute(&x.values().view())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Squared Euclidean distances between all sample pairs (`n x n`).
///
/// Computed from explicit column differences; symmetric with a zero diagonal.
pub fn pairwise_sq_dist(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.ncols();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = x.column(i);
        for j in (i + 1)..n {
            let xj = x.column(j);
            let mut acc = 0.0;
            for (a, b) in xi.iter().zip(xj.iter()) {
                let diff = a - b;
                acc += diff * diff;
            }
            d[[i, j]] = acc;
            d[[j, i]] = acc;
        }
    }
    d
}

/// `Tr(V^T L V)` for `V: n x c` and `L: n x n`, via the matrix product route.
pub fn trace_quadratic(v: &ArrayView2<f64>, l: &ArrayView2<f64>) -> f64 {
    let lv = l.dot(v);
    (&lv * v).sum()
}

fn first_non_finite(values: &ArrayView2<f64>) -> Option<(usize, usize)> {
    for ((i, j), &v) in values.indexed_iter() {
        if !v.is_finite() {
            return Some((i, j));
        }
    }
    None
}
