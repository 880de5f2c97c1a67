//! Python bindings. Data crosses the boundary as plain lists (samples are
//! rows), keeping the module free of binary-format dependencies; at the
//! hundreds-of-samples scale this library targets, conversion cost is noise.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cfsrag::data::{self, CsvOptions, LabelColumn, SyntheticSpec};
use cfsrag::eval::{self, ClusterAssignment, ExtractionMethod};
use cfsrag::factorize::{self, Hyperparams, Variant};
use cfsrag::graph;
use cfsrag::matrix::{DataMatrix, LabelVector};
use cfsrag::stats::{self, ScoreTable};

fn to_py_err(e: cfsrag::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DataMatrix> {
    let n = rows.len();
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("rows have inconsistent lengths"));
    }
    let mut values = Array2::<f64>::zeros((n, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    DataMatrix::from_rows(values).map_err(to_py_err)
}

fn array_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn samples_as_rows(x: &DataMatrix) -> Vec<Vec<f64>> {
    (0..x.sample_count()).map(|j| x.column(j).to_vec()).collect()
}

fn label_vector(labels: Vec<usize>) -> PyResult<LabelVector> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    LabelVector::new(labels, classes).map_err(to_py_err)
}

fn assignment(labels: Vec<usize>) -> PyResult<ClusterAssignment> {
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    ClusterAssignment::new(labels, clusters).map_err(to_py_err)
}

/// Gaussian blob data; returns (rows, labels).
#[pyfunction]
#[pyo3(signature = (clusters, per_cluster, dim, spread, stddev, seed=0))]
fn make_blobs(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    spread: f64,
    stddev: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let spec = SyntheticSpec {
        clusters,
        per_cluster,
        feature_dim: dim,
        spread,
        stddev,
        seed,
    };
    let (x, y) = data::make_blobs(&spec).map_err(to_py_err)?;
    Ok((samples_as_rows(&x), y.labels().to_vec()))
}

/// Loads a CSV of numeric features; returns (rows, labels or None).
///
/// `label_column` is "last", "none", or a header name.
#[pyfunction]
#[pyo3(signature = (path, delimiter=",", has_header=true, label_column="last"))]
fn load_csv(
    path: &str,
    delimiter: &str,
    has_header: bool,
    label_column: &str,
) -> PyResult<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let delimiter = match delimiter.as_bytes() {
        [b] => *b,
        _ => return Err(PyValueError::new_err("delimiter must be one byte")),
    };
    let label_column = match label_column {
        "last" => LabelColumn::Last,
        "none" => LabelColumn::None,
        name => LabelColumn::Named(name.to_string()),
    };
    let options = CsvOptions {
        delimiter,
        has_header,
        label_column,
    };
    let (x, y) = data::load_csv(path, &options).map_err(to_py_err)?;
    Ok((samples_as_rows(&x), y.map(|y| y.labels().to_vec())))
}

/// Rescales every feature column to [0, 1] independently.
#[pyfunction]
fn scale_features_minmax(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let x = rows_to_matrix(&rows)?;
    Ok(samples_as_rows(&x.scale_features_minmax()))
}

/// Builds the p-neighbor affinity graph. Returns a dict with the row-wise
/// affinities "a", symmetrized weights "w", "degrees", "laplacian", and "p".
#[pyfunction]
#[pyo3(signature = (rows, neighbors=5))]
fn build_graph<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f64>>,
    neighbors: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let x = rows_to_matrix(&rows)?;
    let g = graph::build_graph(&x, neighbors).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("a", array_rows(g.a()))?;
    out.set_item("w", array_rows(g.w()))?;
    out.set_item("degrees", g.degrees().to_vec())?;
    out.set_item("laplacian", array_rows(g.laplacian()))?;
    out.set_item("p", g.p())?;
    Ok(out)
}

/// A finished factorization run.
#[pyclass(name = "FitResult", frozen)]
struct PyFitResult {
    inner: factorize::FitResult,
}

#[pymethods]
impl PyFitResult {
    /// Self-representation matrix, n x n.
    #[getter]
    fn z(&self) -> Vec<Vec<f64>> {
        array_rows(self.inner.state.z())
    }

    /// Basis coefficients, n x c.
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        array_rows(self.inner.state.u())
    }

    /// Cluster indicators, n x c.
    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        array_rows(self.inner.state.v())
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.final_objective
    }

    /// Objective value before the first step and after each iteration.
    #[getter]
    fn objective_history(&self) -> Vec<f64> {
        self.inner.state.objective_history().to_vec()
    }

    /// Hard cluster labels from the indicator matrix.
    ///
    /// `method` is "kmeans" or "argmax".
    #[pyo3(signature = (method="kmeans", restarts=10, seed=0))]
    fn labels(&self, method: &str, restarts: usize, seed: u64) -> PyResult<Vec<usize>> {
        let method = ExtractionMethod::parse(method).map_err(to_py_err)?;
        let pred = eval::extract_labels(&self.inner.state.v().view(), method, restarts, seed)
            .map_err(to_py_err)?;
        Ok(pred.labels().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(variant='{}', iterations={}, converged={}, objective={:.6e})",
            self.inner.state.variant(),
            self.inner.iterations_run,
            self.inner.converged,
            self.inner.final_objective,
        )
    }
}

/// Runs one factorization variant on row-major data.
///
/// Graph-free variants ignore `beta` and `neighbors`; `lambda_` is the ridge
/// weight (named to dodge the Python keyword).
#[pyfunction]
#[pyo3(signature = (
    rows, clusters, variant="cfsrag", alpha=1.0, beta=0.1, lambda_=0.1,
    neighbors=5, max_iter=200, tol=1e-6, seed=0,
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    rows: Vec<Vec<f64>>,
    clusters: usize,
    variant: &str,
    alpha: f64,
    beta: f64,
    lambda_: f64,
    neighbors: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> PyResult<PyFitResult> {
    let x = rows_to_matrix(&rows)?;
    let variant = Variant::parse(variant).map_err(to_py_err)?;
    let mut hp = Hyperparams::new(variant, clusters);
    hp.alpha = alpha;
    hp.beta = beta;
    hp.lambda = lambda_;
    hp.neighbors = neighbors;
    hp.max_iter = max_iter;
    hp.rel_tol = tol;
    hp.seed = seed;
    let hp = hp.with_forced_zeros();
    let inner = factorize::fit(&x, &hp).map_err(to_py_err)?;
    Ok(PyFitResult { inner })
}

/// Normalized mutual information between two labelings.
#[pyfunction]
fn nmi(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    eval::nmi(&label_vector(truth)?, &assignment(pred)?).map_err(to_py_err)
}

/// Best-permutation clustering accuracy.
#[pyfunction]
fn accuracy(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    eval::acc(&label_vector(truth)?, &assignment(pred)?).map_err(to_py_err)
}

/// Majority-class purity.
#[pyfunction]
fn purity(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    eval::purity(&label_vector(truth)?, &assignment(pred)?).map_err(to_py_err)
}

/// Two-sided Wilcoxon signed-rank test on paired scores.
#[pyfunction]
fn wilcoxon_signed_rank<'py>(
    py: Python<'py>,
    a: Vec<f64>,
    b: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::wilcoxon_signed_rank(&a, &b).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("w_plus", r.w_plus)?;
    out.set_item("w_minus", r.w_minus)?;
    out.set_item("z", r.z)?;
    out.set_item("p_value", r.p_value)?;
    out.set_item("used_pairs", r.used_pairs)?;
    Ok(out)
}

/// Friedman mean ranks over a cases x methods score table (higher is better).
#[pyfunction]
fn friedman_ranks<'py>(
    py: Python<'py>,
    method_names: Vec<String>,
    rows: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let table = ScoreTable::new(method_names, rows).map_err(to_py_err)?;
    let r = stats::friedman_ranks(&table).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("method_names", r.method_names)?;
    out.set_item("mean_ranks", r.mean_ranks)?;
    out.set_item("chi_square", r.chi_square)?;
    out.set_item("degrees_of_freedom", r.degrees_of_freedom)?;
    out.set_item("p_value", r.p_value)?;
    Ok(out)
}

#[pymodule]
fn cfsrag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(scale_features_minmax, m)?)?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(purity, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(friedman_ranks, m)?)?;
    Ok(())
}
