//! Multiplicative-update solvers: plain NMF, concept factorization, and the
//! self-representation family (CFSR, CFSR-F, CFSRG, CFSRAG) that couples a
//! coefficient matrix `Z` with factor matrices `U`, `V` and an optional graph
//! smoothness penalty on `V`.
//!
//! The family objective is
//! `||X - XZ||^2 + alpha ||Z - U V^T||^2 + beta Tr(V^T L V) + lambda ||Z||^2`
//! over entrywise-nonnegative `Z`, `U`, `V`. The two graph variants differ in
//! where `L` comes from: CFSRG keeps the initial neighbor graph for the whole
//! run, CFSRAG rebuilds the weights from `(Z + Z^T)/2` after every `Z` update.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::matrix::{DataMatrix, GramMatrix};

/// Guard added to every multiplicative-update denominator entry.
pub const UPDATE_EPS: f64 = 1e-10;

/// Factor entries that decay below this are flushed to exact zero in the
/// family updates. Such entries are numerically dead (the update ratio cannot
/// pull them back to a meaningful scale), and left alone they drift into the
/// subnormal range, where every downstream matrix product pays the hardware
/// penalty for denormal arithmetic.
const FLUSH_FLOOR: f64 = 1e-200;

/// Solver selection. The last four share one update kernel and differ only in
/// which penalty terms are active and how the graph evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Nmf,
    Cf,
    Cfsr,
    CfsrF,
    Cfsrg,
    Cfsrag,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Nmf,
        Variant::Cf,
        Variant::Cfsr,
        Variant::CfsrF,
        Variant::Cfsrg,
        Variant::Cfsrag,
    ];

    /// Variants that factor through the self-representation matrix `Z`.
    pub fn is_self_representation(self) -> bool {
        matches!(
            self,
            Variant::Cfsr | Variant::CfsrF | Variant::Cfsrg | Variant::Cfsrag
        )
    }

    /// Variants whose objective carries the graph term (beta > 0).
    pub fn uses_graph(self) -> bool {
        matches!(self, Variant::Cfsrg | Variant::Cfsrag)
    }

    /// Only CFSRAG rebuilds the weights from `Z` after each iteration.
    pub fn refreshes_graph(self) -> bool {
        self == Variant::Cfsrag
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmf" => Ok(Variant::Nmf),
            "cf" => Ok(Variant::Cf),
            "cfsr" => Ok(Variant::Cfsr),
            "cfsr-f" | "cfsr_f" => Ok(Variant::CfsrF),
            "cfsrg" => Ok(Variant::Cfsrg),
            "cfsrag" => Ok(Variant::Cfsrag),
            other => Err(Error::invalid(format!(
                "unknown variant '{other}' (expected nmf|cf|cfsr|cfsr-f|cfsrg|cfsrag)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Nmf => "nmf",
            Variant::Cf => "cf",
            Variant::Cfsr => "cfsr",
            Variant::CfsrF => "cfsr-f",
            Variant::Cfsrg => "cfsrg",
            Variant::Cfsrag => "cfsrag",
        };
        write!(f, "{name}")
    }
}

/// Everything a fit needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub clusters: usize,
    pub neighbors: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(variant: Variant, clusters: usize) -> Self {
        let hp = Hyperparams {
            variant,
            alpha: 1.0,
            beta: 0.1,
            lambda: 0.1,
            clusters,
            neighbors: 5,
            max_iter: 200,
            rel_tol: 1e-6,
            seed: 0,
        };
        hp.with_forced_zeros()
    }

    /// Applies the variant's fixed penalty settings: CFSR runs with
    /// beta = lambda = 0, CFSR-F with beta = 0. Other variants are returned
    /// unchanged.
    pub fn with_forced_zeros(mut self) -> Self {
        match self.variant {
            Variant::Cfsr => {
                self.beta = 0.0;
                self.lambda = 0.0;
            }
            Variant::CfsrF => {
                self.beta = 0.0;
            }
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.clusters == 0 {
            return Err(Error::invalid("clusters must be positive"));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors must be positive"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        match self.variant {
            Variant::Cfsr => {
                if self.beta != 0.0 || self.lambda != 0.0 {
                    return Err(Error::invalid("cfsr runs with beta = 0 and lambda = 0"));
                }
            }
            Variant::CfsrF => {
                if self.beta != 0.0 {
                    return Err(Error::invalid("cfsr-f runs with beta = 0"));
                }
            }
            Variant::Cfsrg | Variant::Cfsrag => {
                if !(self.beta > 0.0) {
                    return Err(Error::invalid(format!(
                        "{} requires beta > 0",
                        self.variant
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Validation against a concrete dataset shape.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.clusters > n {
            return Err(Error::invalid(format!(
                "clusters ({}) exceeds sample count ({n})",
                self.clusters
            )));
        }
        if self.variant.uses_graph() && self.neighbors > n.saturating_sub(2) {
            return Err(Error::invalid(format!(
                "neighbors ({}) must be <= n - 2 = {}",
                self.neighbors,
                n.saturating_sub(2)
            )));
        }
        Ok(())
    }
}

/// Preallocated work arrays; shapes depend on the variant.
#[derive(Debug, Clone)]
struct Scratch {
    nc_a: Array2<f64>,
    nc_b: Array2<f64>,
    nc_c: Array2<f64>,
    cc: Array2<f64>,
    nn_a: Array2<f64>,
    nn_b: Array2<f64>,
    mn: Array2<f64>,
    mc_a: Array2<f64>,
    mc_b: Array2<f64>,
}

impl Scratch {
    fn new(n: usize, m: usize, c: usize, variant: Variant) -> Self {
        let family = variant.is_self_representation();
        let nn = if family { n } else { 0 };
        let mc = if matches!(variant, Variant::Nmf | Variant::Cf) {
            (m, c)
        } else {
            (0, 0)
        };
        Scratch {
            nc_a: Array2::zeros((n, c)),
            nc_b: Array2::zeros((n, c)),
            nc_c: Array2::zeros((n, c)),
            cc: Array2::zeros((c, c)),
            nn_a: Array2::zeros((nn, nn)),
            nn_b: Array2::zeros((nn, nn)),
            mn: Array2::zeros((m, n)),
            mc_a: Array2::zeros(mc),
            mc_b: Array2::zeros(mc),
        }
    }
}

/// Full solver state for one fit.
#[derive(Debug, Clone)]
pub struct FactorState {
    variant: Variant,
    /// Data, samples as columns (m x n).
    x: Array2<f64>,
    /// Symmetrized Gram matrix X^T X (n x n); empty for NMF.
    k: Array2<f64>,
    /// Self-representation coefficients (n x n); empty for NMF/CF.
    z: Array2<f64>,
    /// Basis coefficients (n x c); drawn but unused for NMF.
    u: Array2<f64>,
    /// Cluster indicator (n x c).
    v: Array2<f64>,
    /// NMF basis (m x c); empty otherwise.
    q: Array2<f64>,
    /// Pairwise squared row distances of V (n x n); family variants only.
    h: Array2<f64>,
    /// Current graph weights (n x n) and degrees; graph variants only.
    w: Array2<f64>,
    degrees: Array1<f64>,
    objective_history: Vec<f64>,
    /// True while scratch.mn holds X*Z for the current Z.
    xz_cached: bool,
    scratch: Scratch,
}

impl FactorState {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn sample_count(&self) -> usize {
        self.v.nrows()
    }

    pub fn clusters(&self) -> usize {
        self.v.ncols()
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn objective_history(&self) -> &[f64] {
        &self.objective_history
    }

    fn push_objective(&mut self, value: f64) {
        self.objective_history.push(value);
    }

    fn assert_nonnegative(&self) {
        debug_assert!(
            self.z.iter().all(|&e| e >= 0.0)
                && self.u.iter().all(|&e| e >= 0.0)
                && self.v.iter().all(|&e| e >= 0.0)
                && self.q.iter().all(|&e| e >= 0.0),
            "factor entries went negative"
        );
    }
}

/// Builds the starting state: U, V (and Q for NMF) i.i.d. uniform on
/// (0.01, 1.01), Z warm-started at the neighbor graph's affinity matrix for
/// the graph variants and uniform-random for CFSR/CFSR-F.
///
/// The warm start adds a strictly positive floor in (1e-5, ~1e-2) to every Z
/// entry: multiplicative updates preserve exact zeros, so a bare affinity
/// matrix would lock Z to the initial p-neighbor support for the whole run.
pub fn init_state(x: &DataMatrix, hp: &Hyperparams) -> Result<FactorState> {
    hp.validate_for(x.sample_count())?;
    let n = x.sample_count();
    let m = x.feature_dim();
    let c = hp.clusters;
    if x.values().iter().any(|&e| e < 0.0) {
        return Err(Error::invalid(
            "multiplicative updates need entrywise-nonnegative data",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut draw = |rows: usize, cols: usize| {
        let mut a = Array2::<f64>::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                a[[i, j]] = 0.01 + rng.random::<f64>();
            }
        }
        a
    };

    let u = draw(n, c);
    let v = draw(n, c);
    let q = if hp.variant == Variant::Nmf {
        draw(m, c)
    } else {
        Array2::zeros((0, 0))
    };

    let family = hp.variant.is_self_representation();
    let (z, w, degrees) = if hp.variant.uses_graph() {
        let graph = build_graph(x, hp.neighbors)?;
        let mut z = graph.a().clone();
        z.mapv_inplace(|e| e + 0.01 * (0.001 + rng.random::<f64>()));
        (z, graph.w().clone(), graph.degrees().clone())
    } else if family {
        (draw(n, n), Array2::zeros((0, 0)), Array1::zeros(0))
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)), Array1::zeros(0))
    };

    let k = if hp.variant == Variant::Nmf {
        Array2::zeros((0, 0))
    } else {
        GramMatrix::compute(&x.values().view()).into_values()
    };

    let mut state = FactorState {
        variant: hp.variant,
        x: x.values().clone(),
        k,
        z,
        u,
        v,
        q,
        h: if family {
            Array2::zeros((n, n))
        } else {
            Array2::zeros((0, 0))
        },
        w,
        degrees,
        objective_history: Vec::new(),
        xz_cached: false,
        scratch: Scratch::new(n, m, c, hp.variant),
    };
    if family {
        refresh_h(&mut state);
    }
    Ok(state)
}

/// Builds a state around caller-supplied factors (self-representation
/// variants only); the graph, Gram matrix, and H are derived to match.
/// Useful for warm starts and for probing specific points in factor space.
pub fn with_factors(
    x: &DataMatrix,
    hp: &Hyperparams,
    z: Array2<f64>,
    u: Array2<f64>,
    v: Array2<f64>,
) -> Result<FactorState> {
    if !hp.variant.is_self_representation() {
        return Err(Error::invalid(
            "custom factor states apply to the self-representation variants",
        ));
    }
    hp.validate_for(x.sample_count())?;
    let n = x.sample_count();
    let c = hp.clusters;
    if z.dim() != (n, n) {
        return Err(Error::invalid(format!(
            "Z must be {n}x{n}, got {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    if u.dim() != (n, c) || v.dim() != (n, c) {
        return Err(Error::invalid(format!("U and V must be {n}x{c}")));
    }
    for (name, a) in [("Z", &z), ("U", &u), ("V", &v)] {
        if a.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::invalid(format!(
                "{name} must be finite and nonnegative"
            )));
        }
    }
    if x.values().iter().any(|&e| e < 0.0) {
        return Err(Error::invalid(
            "multiplicative updates need entrywise-nonnegative data",
        ));
    }

    let (w, degrees) = if hp.variant.uses_graph() {
        let graph = build_graph(x, hp.neighbors)?;
        (graph.w().clone(), graph.degrees().clone())
    } else {
        (Array2::zeros((0, 0)), Array1::zeros(0))
    };
    let mut state = FactorState {
        variant: hp.variant,
        x: x.values().clone(),
        k: GramMatrix::compute(&x.values().view()).into_values(),
        z,
        u,
        v,
        q: Array2::zeros((0, 0)),
        h: Array2::zeros((n, n)),
        w,
        degrees,
        objective_history: Vec::new(),
        xz_cached: false,
        scratch: Scratch::new(n, x.feature_dim(), c, hp.variant),
    };
    refresh_h(&mut state);
    Ok(state)
}

/// One iteration of whichever variant the state was built for.
pub fn step(state: &mut FactorState, hp: &Hyperparams) {
    match state.variant {
        Variant::Nmf => nmf_step(state),
        Variant::Cf => cf_step(state),
        _ => cfsrag_step(state, hp),
    }
}

/// NMF update: `q <- q (XV)/(Q V^T V)`, then `v <- v (X^T Q)/(V Q^T Q)`.
pub fn nmf_step(state: &mut FactorState) {
    assert_eq!(state.variant, Variant::Nmf, "state was built for {}", state.variant);
    general_mat_mul(1.0, &state.v.t(), &state.v, 0.0, &mut state.scratch.cc);
    general_mat_mul(1.0, &state.x, &state.v, 0.0, &mut state.scratch.mc_a);
    general_mat_mul(1.0, &state.q, &state.scratch.cc, 0.0, &mut state.scratch.mc_b);
    Zip::from(&mut state.q)
        .and(&state.scratch.mc_a)
        .and(&state.scratch.mc_b)
        .for_each(|q, &num, &den| *q *= num / (den + UPDATE_EPS));

    general_mat_mul(1.0, &state.q.t(), &state.q, 0.0, &mut state.scratch.cc);
    general_mat_mul(1.0, &state.x.t(), &state.q, 0.0, &mut state.scratch.nc_a);
    general_mat_mul(1.0, &state.v, &state.scratch.cc, 0.0, &mut state.scratch.nc_b);
    Zip::from(&mut state.v)
        .and(&state.scratch.nc_a)
        .and(&state.scratch.nc_b)
        .for_each(|v, &num, &den| *v *= num / (den + UPDATE_EPS));

    state.assert_nonnegative();
}

/// CF update: `u <- u (KV)/(K U V^T V)`, then `v <- v (KU)/(V U^T K U)`.
pub fn cf_step(state: &mut FactorState) {
    assert_eq!(state.variant, Variant::Cf, "state was built for {}", state.variant);
    general_mat_mul(1.0, &state.v.t(), &state.v, 0.0, &mut state.scratch.cc);
    general_mat_mul(1.0, &state.k, &state.v, 0.0, &mut state.scratch.nc_a);
    general_mat_mul(1.0, &state.u, &state.scratch.cc, 0.0, &mut state.scratch.nc_c);
    general_mat_mul(1.0, &state.k, &state.scratch.nc_c, 0.0, &mut state.scratch.nc_b);
    Zip::from(&mut state.u)
        .and(&state.scratch.nc_a)
        .and(&state.scratch.nc_b)
        .for_each(|u, &num, &den| *u *= num / (den + UPDATE_EPS));

    general_mat_mul(1.0, &state.k, &state.u, 0.0, &mut state.scratch.nc_a);
    general_mat_mul(1.0, &state.u.t(), &state.scratch.nc_a, 0.0, &mut state.scratch.cc);
    general_mat_mul(1.0, &state.v, &state.scratch.cc, 0.0, &mut state.scratch.nc_b);
    Zip::from(&mut state.v)
        .and(&state.scratch.nc_a)
        .and(&state.scratch.nc_b)
        .for_each(|v, &num, &den| *v *= num / (den + UPDATE_EPS));

    state.assert_nonnegative();
}

/// Shared family update, in order: U, V, H refresh, Z, then the CFSRAG graph
/// refresh. CFSR/CFSR-F enter with beta = 0, which silences the graph terms.
pub fn cfsrag_step(state: &mut FactorState, hp: &Hyperparams) {
    assert!(
        state.variant.is_self_representation(),
        "state was built for {}",
        state.variant
    );
    debug_assert_eq!(state.variant, hp.variant);
    let (alpha, beta, lambda) = (hp.alpha, hp.beta, hp.lambda);
    let n = state.sample_count();

    // U: u <- u (ZV) / (U V^T V).
    general_mat_mul(1.0, &state.v.t(), &state.v, 0.0, &mut state.scratch.cc);
    general_mat_mul(1.0, &state.z, &state.v, 0.0, &mut state.scratch.nc_a);
    general_mat_mul(1.0, &state.u, &state.scratch.cc, 0.0, &mut state.scratch.nc_b);
    Zip::from(&mut state.u)
        .and(&state.scratch.nc_a)
        .and(&state.scratch.nc_b)
        .for_each(|u, &num, &den| *u = flush(*u * num / (den + UPDATE_EPS)));

    // V: v <- v (alpha Z^T U + beta W V) / (alpha V U^T U + beta D V).
    general_mat_mul(1.0, &state.u.t(), &state.u, 0.0, &mut state.scratch.cc);
    general_mat_mul(alpha, &state.z.t(), &state.u, 0.0, &mut state.scratch.nc_a);
    general_mat_mul(alpha, &state.v, &state.scratch.cc, 0.0, &mut state.scratch.nc_b);
    if beta > 0.0 {
        general_mat_mul(beta, &state.w, &state.v, 1.0, &mut state.scratch.nc_a);
        for i in 0..n {
            let scale = beta * state.degrees[i];
            let v_row = state.v.row(i);
            let mut den_row = state.scratch.nc_b.row_mut(i);
            den_row.zip_mut_with(&v_row, |d, &v| *d += scale * v);
        }
    }
    Zip::from(&mut state.v)
        .and(&state.scratch.nc_a)
        .and(&state.scratch.nc_b)
        .for_each(|v, &num, &den| *v = flush(*v * num / (den + UPDATE_EPS)));

    // H only enters beta-weighted terms; skip the refresh when beta = 0.
    if beta > 0.0 {
        refresh_h(state);
    }

    // Z: z <- z (K + alpha U V^T) / (K Z + (alpha + lambda) Z + beta/2 H).
    general_mat_mul(1.0, &state.u, &state.v.t(), 0.0, &mut state.scratch.nn_a);
    compute_kz(state);
    let shift = alpha + lambda;
    let half_beta = 0.5 * beta;
    Zip::from(&mut state.z)
        .and(&state.k)
        .and(&state.scratch.nn_a)
        .and(&state.scratch.nn_b)
        .and(&state.h)
        .for_each(|z, &k, &uvt, &kz, &h| {
            let num = k + alpha * uvt;
            let den = kz + shift * *z + half_beta * h + UPDATE_EPS;
            *z = flush(*z * num / den);
        });
    state.xz_cached = false;

    if state.variant.refreshes_graph() {
        state.w.assign(&state.z);
        let (w, z) = (&mut state.w, &state.z);
        w.zip_mut_with(&z.t(), |wij, &zji| *wij = 0.5 * (*wij + zji));
        for (d, row) in state.degrees.iter_mut().zip(state.w.rows()) {
            *d = row.sum();
        }
    }

    state.assert_nonnegative();
}

#[inline]
fn flush(e: f64) -> f64 {
    if e < FLUSH_FLOOR {
        0.0
    } else {
        e
    }
}

/// H_ij = ||v_i - v_j||^2 via the row Gram matrix; exactly symmetric with a
/// zero diagonal, negatives from cancellation clamped to zero.
fn refresh_h(state: &mut FactorState) {
    general_mat_mul(1.0, &state.v, &state.v.t(), 0.0, &mut state.scratch.nn_b);
    let g = &state.scratch.nn_b;
    let diag = g.diag().to_vec();
    for (i, (mut h_row, g_row)) in state.h.rows_mut().into_iter().zip(g.rows()).enumerate() {
        let ri = diag[i];
        let h_s = h_row.as_slice_mut().expect("H rows are contiguous");
        let g_s = g_row.to_slice().expect("Gram rows are contiguous");
        for ((h, &gij), &rj) in h_s.iter_mut().zip(g_s).zip(&diag) {
            *h = (ri + rj - 2.0 * gij).max(0.0);
        }
        h_s[i] = 0.0;
    }
}

/// K*Z into scratch.nn_b. When the data is wide (2m < n) the product is
/// rebracketed as X^T (X Z), which is cheaper and reuses the cached X*Z from
/// the previous objective evaluation when Z has not changed since.
fn compute_kz(state: &mut FactorState) {
    let m = state.x.nrows();
    let n = state.x.ncols();
    if 2 * m < n {
        if !state.xz_cached {
            general_mat_mul(1.0, &state.x, &state.z, 0.0, &mut state.scratch.mn);
            state.xz_cached = true;
        }
        general_mat_mul(1.0, &state.x.t(), &state.scratch.mn, 0.0, &mut state.scratch.nn_b);
    } else {
        general_mat_mul(1.0, &state.k, &state.z, 0.0, &mut state.scratch.nn_b);
    }
}

/// Objective for the state's variant: `||X - Q V^T||^2` for NMF,
/// `||X - X U V^T||^2` for CF, and the full family objective otherwise,
/// with the graph term evaluated on the state's current weights.
pub fn objective(state: &mut FactorState, hp: &Hyperparams) -> f64 {
    debug_assert_eq!(state.variant, hp.variant);
    match state.variant {
        Variant::Nmf => {
            general_mat_mul(1.0, &state.q, &state.v.t(), 0.0, &mut state.scratch.mn);
            sq_diff(&state.x, &state.scratch.mn)
        }
        Variant::Cf => {
            general_mat_mul(1.0, &state.x, &state.u, 0.0, &mut state.scratch.mc_a);
            general_mat_mul(1.0, &state.scratch.mc_a, &state.v.t(), 0.0, &mut state.scratch.mn);
            sq_diff(&state.x, &state.scratch.mn)
        }
        _ => {
            if !state.xz_cached {
                general_mat_mul(1.0, &state.x, &state.z, 0.0, &mut state.scratch.mn);
                state.xz_cached = true;
            }
            let fit_term = sq_diff(&state.x, &state.scratch.mn);

            general_mat_mul(1.0, &state.u, &state.v.t(), 0.0, &mut state.scratch.nn_a);
            let couple: f64 = Zip::from(&state.z)
                .and(&state.scratch.nn_a)
                .fold(0.0, |acc, &z, &uvt| {
                    let d = z - uvt;
                    acc + d * d
                });

            let graph_term = if hp.beta > 0.0 {
                general_mat_mul(1.0, &state.w, &state.v, 0.0, &mut state.scratch.nc_a);
                let mut smooth = 0.0;
                for i in 0..state.sample_count() {
                    let v_row = state.v.row(i);
                    smooth += state.degrees[i] * v_row.dot(&v_row);
                    smooth -= v_row.dot(&state.scratch.nc_a.row(i));
                }
                hp.beta * smooth
            } else {
                0.0
            };

            let norm_z: f64 = state.z.iter().map(|&z| z * z).sum();
            fit_term + hp.alpha * couple + graph_term + hp.lambda * norm_z
        }
    }
}

fn sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| {
        let d = x - y;
        acc + d * d
    })
}

/// Family objective evaluated inside the fit loop right after a step, where
/// the step's invariants let two products be reused: `scratch.nn_a` still
/// holds U V^T for the current factors, and H matches the current V, so the
/// graph term collapses to `(beta/2) sum_ij w_ij h_ij`. Must not be called on
/// states whose factors changed since the last [`step`].
fn family_objective_post_step(state: &mut FactorState, hp: &Hyperparams) -> f64 {
    debug_assert!(state.variant.is_self_representation());
    if !state.xz_cached {
        general_mat_mul(1.0, &state.x, &state.z, 0.0, &mut state.scratch.mn);
        state.xz_cached = true;
    }
    let fit_term = sq_diff(&state.x, &state.scratch.mn);

    let couple: f64 = Zip::from(&state.z)
        .and(&state.scratch.nn_a)
        .fold(0.0, |acc, &z, &uvt| {
            let d = z - uvt;
            acc + d * d
        });

    let graph_term = if hp.beta > 0.0 {
        let smooth = Zip::from(&state.w)
            .and(&state.h)
            .fold(0.0, |acc, &w, &h| acc + w * h);
        0.5 * hp.beta * smooth
    } else {
        0.0
    };

    let norm_z: f64 = state.z.iter().map(|&z| z * z).sum();
    fit_term + hp.alpha * couple + graph_term + hp.lambda * norm_z
}

/// Independent trace-form evaluation of the family objective:
/// `Tr(K - 2KZ + Z^T K Z) + alpha Tr(Z^T Z - 2 Z^T U V^T + V U^T U V^T)
///  + beta Tr(V^T L V) + lambda Tr(Z^T Z)`, with `L = D - W` built explicitly.
/// Deliberately avoids the code paths of [`objective`].
pub fn objective_trace(state: &FactorState, hp: &Hyperparams) -> Result<f64> {
    if !state.variant.is_self_representation() {
        return Err(Error::invalid(
            "the trace form applies to the self-representation variants",
        ));
    }
    let n = state.sample_count();
    let k = &state.k;
    let z = &state.z;

    let tr_k: f64 = (0..n).map(|i| k[[i, i]]).sum();
    let mut tr_kz = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr_kz += k[[i, j]] * z[[j, i]];
        }
    }
    let kz = k.dot(z);
    let tr_zkz: f64 = Zip::from(z).and(&kz).fold(0.0, |acc, &a, &b| acc + a * b);

    let tr_zz: f64 = z.iter().map(|&e| e * e).sum();
    let uvt = state.u.dot(&state.v.t());
    let tr_zuvt: f64 = Zip::from(z).and(&uvt).fold(0.0, |acc, &a, &b| acc + a * b);
    let utu = state.u.t().dot(&state.u);
    let vtv = state.v.t().dot(&state.v);
    let tr_vuuv: f64 = Zip::from(&utu).and(&vtv).fold(0.0, |acc, &a, &b| acc + a * b);

    let graph_term = if hp.beta > 0.0 {
        let mut laplacian = -&state.w;
        for i in 0..n {
            laplacian[[i, i]] += state.degrees[i];
        }
        hp.beta * crate::matrix::trace_quadratic(&state.v.view(), &laplacian.view())
    } else {
        0.0
    };

    Ok(tr_k - 2.0 * tr_kz + tr_zkz
        + hp.alpha * (tr_zz - 2.0 * tr_zuvt + tr_vuuv)
        + graph_term
        + hp.lambda * tr_zz)
}

/// Per-block maximum relative error between analytic gradients and central
/// finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub max_rel_u: f64,
    pub max_rel_v: f64,
    pub max_rel_z: f64,
}

impl GradientReport {
    pub fn max(&self) -> f64 {
        self.max_rel_u.max(self.max_rel_v).max(self.max_rel_z)
    }
}

/// Checks the analytic gradients of the family objective at the current
/// state on `samples` random coordinates per block, holding the graph fixed.
///
/// U and V are differenced against [`objective`] directly. The Z block is
/// differenced against the objective with its graph term in substituted form
/// `beta Tr(H Z^T)` (H frozen), the shape in which the Z gradient and the
/// KKT products are stated; the plain graph term does not depend on Z once
/// the weights are frozen.
pub fn gradient_check(
    state: &mut FactorState,
    hp: &Hyperparams,
    samples: usize,
    seed: u64,
) -> Result<GradientReport> {
    if !state.variant.is_self_representation() {
        return Err(Error::invalid(
            "gradient check applies to the self-representation variants",
        ));
    }
    debug_assert_eq!(state.variant, hp.variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_step = 1e-6;
    let n = state.sample_count();
    let c = state.clusters();
    let (alpha, beta, lambda) = (hp.alpha, hp.beta, hp.lambda);

    // Analytic blocks, from the stationarity expressions.
    let vtv = state.v.t().dot(&state.v);
    let grad_u = 2.0 * alpha * (state.u.dot(&vtv) - state.z.dot(&state.v));

    let utu = state.u.t().dot(&state.u);
    let mut grad_v = 2.0 * alpha * (state.v.dot(&utu) - state.z.t().dot(&state.u));
    if beta > 0.0 {
        let wv = state.w.dot(&state.v);
        for i in 0..n {
            for j in 0..c {
                grad_v[[i, j]] += 2.0 * beta * (state.degrees[i] * state.v[[i, j]] - wv[[i, j]]);
            }
        }
    }

    let kz = state.k.dot(&state.z);
    let uvt = state.u.dot(&state.v.t());
    let mut grad_z = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            grad_z[[i, j]] = 2.0 * (kz[[i, j]] - state.k[[i, j]])
                + 2.0 * alpha * (state.z[[i, j]] - uvt[[i, j]])
                + beta * state.h[[i, j]]
                + 2.0 * lambda * state.z[[i, j]];
        }
    }

    let mut max_rel_u = 0.0f64;
    let mut max_rel_v = 0.0f64;
    let mut max_rel_z = 0.0f64;
    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);

    for _ in 0..samples {
        let (i, j) = (
            (rng.random::<u64>() % n as u64) as usize,
            (rng.random::<u64>() % c as u64) as usize,
        );
        let orig = state.u[[i, j]];
        state.u[[i, j]] = orig + h_step;
        let up = objective(state, hp);
        state.u[[i, j]] = orig - h_step;
        let down = objective(state, hp);
        state.u[[i, j]] = orig;
        max_rel_u = max_rel_u.max(rel((up - down) / (2.0 * h_step), grad_u[[i, j]]));
    }

    for _ in 0..samples {
        let (i, j) = (
            (rng.random::<u64>() % n as u64) as usize,
            (rng.random::<u64>() % c as u64) as usize,
        );
        let orig = state.v[[i, j]];
        state.v[[i, j]] = orig + h_step;
        let up = objective(state, hp);
        state.v[[i, j]] = orig - h_step;
        let down = objective(state, hp);
        state.v[[i, j]] = orig;
        max_rel_v = max_rel_v.max(rel((up - down) / (2.0 * h_step), grad_v[[i, j]]));
    }

    for _ in 0..samples {
        let (i, j) = (
            (rng.random::<u64>() % n as u64) as usize,
            (rng.random::<u64>() % n as u64) as usize,
        );
        let orig = state.z[[i, j]];
        state.z[[i, j]] = orig + h_step;
        let up = eval_substituted(state, hp);
        state.z[[i, j]] = orig - h_step;
        let down = eval_substituted(state, hp);
        state.z[[i, j]] = orig;
        max_rel_z = max_rel_z.max(rel((up - down) / (2.0 * h_step), grad_z[[i, j]]));
    }

    Ok(GradientReport {
        max_rel_u,
        max_rel_v,
        max_rel_z,
    })
}

/// Family objective with the graph term written as `beta Tr(H Z^T)` at
/// frozen H; the working form behind the Z update and the Z-block gradient.
fn eval_substituted(state: &mut FactorState, hp: &Hyperparams) -> f64 {
    general_mat_mul(1.0, &state.x, &state.z, 0.0, &mut state.scratch.mn);
    state.xz_cached = false; // scratch.mn no longer matches a stable Z
    let fit_term = sq_diff(&state.x, &state.scratch.mn);

    general_mat_mul(1.0, &state.u, &state.v.t(), 0.0, &mut state.scratch.nn_a);
    let couple: f64 = Zip::from(&state.z)
        .and(&state.scratch.nn_a)
        .fold(0.0, |acc, &z, &uvt| {
            let d = z - uvt;
            acc + d * d
        });

    let graph_sub: f64 = if hp.beta > 0.0 {
        Zip::from(&state.h)
            .and(&state.z)
            .fold(0.0, |acc, &h, &z| acc + h * z)
    } else {
        0.0
    };

    let norm_z: f64 = state.z.iter().map(|&z| z * z).sum();
    fit_term + hp.alpha * couple + hp.beta * graph_sub + hp.lambda * norm_z
}

/// Complementary-slackness products at the current state, one per factor
/// block, plus the max-abs scale of each block's update denominator.
#[derive(Debug, Clone)]
pub struct KktResiduals {
    pub r_u: Array2<f64>,
    pub r_v: Array2<f64>,
    pub r_z: Array2<f64>,
    pub scale_u: f64,
    pub scale_v: f64,
    pub scale_z: f64,
}

impl KktResiduals {
    pub fn max_abs(&self) -> f64 {
        let m = |a: &Array2<f64>| a.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
        m(&self.r_u).max(m(&self.r_v)).max(m(&self.r_z))
    }

    /// True when every block satisfies max|R| <= factor * denominator scale.
    pub fn within(&self, factor: f64) -> bool {
        let block = |r: &Array2<f64>, scale: f64| {
            r.iter().fold(0.0f64, |acc, &e| acc.max(e.abs())) <= factor * scale
        };
        block(&self.r_u, self.scale_u)
            && block(&self.r_v, self.scale_v)
            && block(&self.r_z, self.scale_z)
    }
}

/// Evaluates the three stationarity products
/// `R_U = (U V^T V - Z V) .* U`,
/// `R_V = (alpha V U^T U + beta D V - alpha Z^T U - beta W V) .* V`,
/// `R_Z = (K Z + (alpha+lambda) Z + beta/2 H - K - alpha U V^T) .* Z`.
pub fn kkt_residuals(state: &FactorState, hp: &Hyperparams) -> Result<KktResiduals> {
    if !state.variant.is_self_representation() {
        return Err(Error::invalid(
            "KKT products apply to the self-representation variants",
        ));
    }
    debug_assert_eq!(state.variant, hp.variant);
    let n = state.sample_count();
    let (alpha, beta, lambda) = (hp.alpha, hp.beta, hp.lambda);

    let vtv = state.v.t().dot(&state.v);
    let den_u = state.u.dot(&vtv);
    let zv = state.z.dot(&state.v);
    let r_u = (&den_u - &zv) * &state.u;

    let utu = state.u.t().dot(&state.u);
    let mut den_v = alpha * state.v.dot(&utu);
    let mut num_v = alpha * state.z.t().dot(&state.u);
    if beta > 0.0 {
        let wv = state.w.dot(&state.v);
        for i in 0..n {
            for j in 0..state.clusters() {
                den_v[[i, j]] += beta * state.degrees[i] * state.v[[i, j]];
                num_v[[i, j]] += beta * wv[[i, j]];
            }
        }
    }
    let r_v = (&den_v - &num_v) * &state.v;

    let kz = state.k.dot(&state.z);
    let uvt = state.u.dot(&state.v.t());
    let shift = alpha + lambda;
    let half_beta = 0.5 * beta;
    let mut den_z = Array2::<f64>::zeros((n, n));
    let mut r_z = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let den = kz[[i, j]] + shift * state.z[[i, j]] + half_beta * state.h[[i, j]];
            den_z[[i, j]] = den;
            r_z[[i, j]] = (den - state.k[[i, j]] - alpha * uvt[[i, j]]) * state.z[[i, j]];
        }
    }

    let max_abs = |a: &Array2<f64>| a.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    Ok(KktResiduals {
        scale_u: max_abs(&den_u),
        scale_v: max_abs(&den_v),
        scale_z: max_abs(&den_z),
        r_u,
        r_v,
        r_z,
    })
}

/// Outcome of a full solver run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: FactorState,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_objective: f64,
}

/// Runs the variant to convergence: stops when the relative objective change
/// drops below `rel_tol` or after `max_iter` iterations. Aborts with a
/// diagnostic if the objective leaves the finite range.
pub fn fit(x: &DataMatrix, hp: &Hyperparams) -> Result<FitResult> {
    let mut state = init_state(x, hp)?;
    let mut prev = objective(&mut state, hp);
    if !prev.is_finite() {
        return Err(non_finite_error(&state, 0, prev));
    }
    state.push_objective(prev);

    let mut iterations_run = 0;
    let mut converged = false;
    for t in 1..=hp.max_iter {
        step(&mut state, hp);
        let obj = match state.variant {
            Variant::Nmf | Variant::Cf => objective(&mut state, hp),
            _ => family_objective_post_step(&mut state, hp),
        };
        if !obj.is_finite() {
            return Err(non_finite_error(&state, t, obj));
        }
        state.push_objective(obj);
        iterations_run = t;
        let rel = (prev - obj).abs() / prev.max(1e-30);
        prev = obj;
        if rel < hp.rel_tol {
            converged = true;
            break;
        }
    }

    let final_objective = *state.objective_history.last().unwrap();
    Ok(FitResult {
        state,
        iterations_run,
        converged,
        final_objective,
    })
}

fn non_finite_error(state: &FactorState, iteration: usize, obj: f64) -> Error {
    let describe = |name: &str, a: &Array2<f64>| {
        let bad = a.iter().filter(|e| !e.is_finite()).count();
        let max = a.iter().filter(|e| e.is_finite()).fold(0.0f64, |m, &e| m.max(e.abs()));
        format!("{name}: {bad} non-finite, max |finite| {max:.3e}")
    };
    Error::NonFinite {
        iteration,
        diagnostic: format!(
            "objective {obj}; {}; {}; {}; last recorded {:?}",
            describe("Z", &state.z),
            describe("U", &state.u),
            describe("V", &state.v),
            state.objective_history.last()
        ),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct MatrixDump {
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

impl MatrixDump {
    fn from_array(a: &Array2<f64>) -> Self {
        MatrixDump {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Checkpoint(format!(
                "matrix payload holds {} values for a {}x{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

const CHECKPOINT_FORMAT: &str = "factor-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    variant: String,
    z: MatrixDump,
    u: MatrixDump,
    v: MatrixDump,
    objective_history: Vec<f64>,
}

/// Factor snapshot restored from a checkpoint dump.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub z: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub objective_history: Vec<f64>,
}

/// Serializes the factor matrices and objective trace as versioned JSON,
/// primarily for debugging divergent runs.
pub fn write_checkpoint<W: Write>(state: &FactorState, writer: &mut W) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        variant: state.variant.to_string(),
        z: MatrixDump::from_array(&state.z),
        u: MatrixDump::from_array(&state.u),
        v: MatrixDump::from_array(&state.v),
        objective_history: state.objective_history.clone(),
    };
    serde_json::to_writer(&mut *writer, &file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let file: CheckpointFile =
        serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unexpected format tag '{}'",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    Ok(Checkpoint {
        variant: Variant::parse(&file.variant)?,
        z: file.z.to_array()?,
        u: file.u.to_array()?,
        v: file.v.to_array()?,
        objective_history: file.objective_history,
    })
}
