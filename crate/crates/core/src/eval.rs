//! Hard-label extraction from factor matrices and external cluster metrics.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabelVector;

/// How hard labels are read off the `n x c` indicator factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionMethod {
    /// L2-normalize the rows, then k-means with `k = c`.
    KMeansOnV,
    /// Assign each row to its largest entry (ties to the lowest index).
    ArgmaxRow,
}

impl ExtractionMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ExtractionMethod::KMeansOnV),
            "argmax" => Ok(ExtractionMethod::ArgmaxRow),
            other => Err(Error::invalid(format!(
                "unknown extraction method '{other}' (expected kmeans|argmax)"
            ))),
        }
    }
}

impl std::fmt::Display for ExtractionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtractionMethod::KMeansOnV => write!(f, "kmeans"),
            ExtractionMethod::ArgmaxRow => write!(f, "argmax"),
        }
    }
}

/// Predicted cluster ids in `[0, cluster_count)`; clusters may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    cluster_count: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, cluster_count: usize) -> Result<Self> {
        if cluster_count == 0 {
            return Err(Error::invalid("cluster count must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("assignment must be non-empty"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= cluster_count) {
            return Err(Error::invalid(format!(
                "cluster id {l} at position {i} is outside [0, {cluster_count})"
            )));
        }
        Ok(ClusterAssignment {
            labels,
            cluster_count,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The three external scores reported for every run, on a `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub nmi: f64,
    pub acc: f64,
    pub purity: f64,
}

impl MetricTriple {
    pub fn compute(truth: &LabelVector, pred: &ClusterAssignment) -> Result<MetricTriple> {
        Ok(MetricTriple {
            nmi: nmi(truth, pred)?,
            acc: acc(truth, pred)?,
            purity: purity(truth, pred)?,
        })
    }
}

/// Reads hard labels off `V` (`n x c`), one cluster per column.
pub fn extract_labels(
    v: &ArrayView2<f64>,
    method: ExtractionMethod,
    restarts: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    let (n, c) = v.dim();
    if c == 0 {
        return Err(Error::invalid("V must have at least one column"));
    }
    if n < c {
        return Err(Error::invalid(format!(
            "cannot split {n} rows into {c} clusters"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("V contains non-finite entries"));
    }
    match method {
        ExtractionMethod::ArgmaxRow => {
            let labels = v
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0;
                    for (j, &val) in row.iter().enumerate() {
                        if val > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            ClusterAssignment::new(labels, c)
        }
        ExtractionMethod::KMeansOnV => {
            if restarts == 0 {
                return Err(Error::invalid("k-means needs at least one restart"));
            }
            let mut normalized = v.to_owned();
            for mut row in normalized.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|x| x / norm);
                }
            }
            let (labels, _) = kmeans(&normalized.view(), c, restarts, seed);
            ClusterAssignment::new(labels, c)
        }
    }
}

/// Normalized mutual information with the geometric-mean normalizer and
/// natural logarithms. Degenerate zero-entropy cases score 1 when the
/// partitions are identical and 0 otherwise.
pub fn nmi(truth: &LabelVector, pred: &ClusterAssignment) -> Result<f64> {
    let table = contingency(truth, pred)?;
    let n = truth.len() as f64;
    let row_sums: Vec<f64> = table.rows().into_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = table.columns().into_iter().map(|c| c.sum()).collect();

    let entropy = |sums: &[f64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| {
                let q = s / n;
                -q * q.ln()
            })
            .sum()
    };
    let h_truth = entropy(&row_sums);
    let h_pred = entropy(&col_sums);

    if h_truth == 0.0 || h_pred == 0.0 {
        return Ok(if partitions_identical(&table) { 1.0 } else { 0.0 });
    }

    let mut mutual = 0.0;
    for (idx, &count) in table.indexed_iter() {
        if count > 0.0 {
            let (i, j) = idx;
            mutual += (count / n) * ((n * count) / (row_sums[i] * col_sums[j])).ln();
        }
    }
    Ok(mutual / (h_truth * h_pred).sqrt())
}

/// Clustering accuracy under the best one-to-one cluster-to-class map.
pub fn acc(truth: &LabelVector, pred: &ClusterAssignment) -> Result<f64> {
    let table = contingency_counts(truth, pred)?;
    let side = table.len();
    let mut cost = vec![vec![0i64; side]; side];
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            cost[i][j] = -(count as i64);
        }
    }
    let (_, total) = assignment::solve_min(&cost);
    Ok((-total) as f64 / truth.len() as f64)
}

/// Fraction of samples in the majority class of their predicted cluster.
pub fn purity(truth: &LabelVector, pred: &ClusterAssignment) -> Result<f64> {
    check_lengths(truth, pred)?;
    let mut majority = vec![vec![0usize; truth.class_count()]; pred.cluster_count()];
    for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
        majority[p][t] += 1;
    }
    let total: usize = majority
        .iter()
        .map(|counts| counts.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(total as f64 / truth.len() as f64)
}

fn check_lengths(truth: &LabelVector, pred: &ClusterAssignment) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "label lengths differ: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Square truth-by-prediction count table, zero-padded to
/// `max(class_count, cluster_count)`.
fn contingency_counts(truth: &LabelVector, pred: &ClusterAssignment) -> Result<Vec<Vec<usize>>> {
    check_lengths(truth, pred)?;
    let side = truth.class_count().max(pred.cluster_count());
    let mut table = vec![vec![0usize; side]; side];
    for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
        table[t][p] += 1;
    }
    Ok(table)
}

fn contingency(truth: &LabelVector, pred: &ClusterAssignment) -> Result<Array2<f64>> {
    check_lengths(truth, pred)?;
    let mut table = Array2::<f64>::zeros((truth.class_count(), pred.cluster_count()));
    for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
        table[[t, p]] += 1.0;
    }
    Ok(table)
}

/// True when the two labelings induce the same partition: every used row
/// meets exactly one used column and vice versa.
fn partitions_identical(table: &Array2<f64>) -> bool {
    for row in table.rows() {
        if row.iter().filter(|&&v| v > 0.0).count() > 1 {
            return false;
        }
    }
    for col in table.columns() {
        if col.iter().filter(|&&v| v > 0.0).count() > 1 {
            return false;
        }
    }
    true
}

/// Lloyd k-means with seeded spread-out initialization and deterministic
/// tie-breaking. Returns the best labeling (by inertia) over `restarts`
/// independent starts.
fn kmeans(points: &ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let restart_seed = crate::harness::derive_seed(seed, &[0x6b6d, r as u64]);
        let (labels, inertia) = kmeans_once(points, k, restart_seed);
        let better = match &best {
            None => true,
            Some((_, best_inertia)) => inertia < *best_inertia,
        };
        if better {
            best = Some((labels, inertia));
        }
    }
    best.expect("at least one restart")
}

fn kmeans_once(points: &ArrayView2<f64>, k: usize, seed: u64) -> (Vec<usize>, f64) {
    let (n, d) = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::<f64>::zeros((k, d));

    // Spread-out seeding: first center uniform, then squared-distance-weighted.
    let first = (rng.random::<u64>() % n as u64) as usize;
    centers.row_mut(0).assign(&points.row(first));
    let mut min_d2 = Array1::<f64>::zeros(n);
    for i in 0..n {
        min_d2[i] = sq_dist(points, i, &centers.row(0).to_owned());
    }
    for c in 1..k {
        let total: f64 = min_d2.sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for i in 0..n {
                cum += min_d2[i];
                if cum > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All points coincide with existing centers; take a fresh index.
            c % n
        };
        centers.row_mut(c).assign(&points.row(chosen));
        for i in 0..n {
            let dist = sq_dist(points, i, &centers.row(c).to_owned());
            if dist < min_d2[i] {
                min_d2[i] = dist;
            }
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(points, i, &centers.row(c).to_owned());
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }

        fill_empty_clusters(points, k, &mut labels, &centers);

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &points.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = sums.row_mut(c);
                row.mapv_inplace(|x| x / counts[c] as f64);
                centers.row_mut(c).assign(&sums.row(c));
            }
        }

        if !changed {
            break;
        }
    }

    let mut inertia = 0.0;
    for i in 0..n {
        inertia += sq_dist(points, i, &centers.row(labels[i]).to_owned());
    }
    (labels, inertia)
}

/// Reassigns one point per empty cluster: the farthest member of the largest
/// cluster moves over. All ties break to the lowest index.
fn fill_empty_clusters(
    points: &ArrayView2<f64>,
    k: usize,
    labels: &mut [usize],
    centers: &Array2<f64>,
) {
    let n = labels.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let largest = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap();
        if counts[largest] <= 1 {
            continue;
        }
        let mut farthest = None;
        let mut far_d = -1.0;
        for i in 0..n {
            if labels[i] == largest {
                let dist = sq_dist(points, i, &centers.row(largest).to_owned());
                if dist > far_d {
                    far_d = dist;
                    farthest = Some(i);
                }
            }
        }
        if let Some(i) = farthest {
            labels[i] = empty;
            counts[largest] -= 1;
            counts[empty] += 1;
        }
    }
}

fn sq_dist(points: &ArrayView2<f64>, i: usize, center: &Array1<f64>) -> f64 {
    let row = points.row(i);
    let mut acc = 0.0;
    for (a, b) in row.iter().zip(center.iter()) {
        let diff = a - b;
        acc += diff * diff;
    }
    acc
}

/// Minimum-cost perfect assignment on a square integer matrix.
mod assignment {
    /// Hungarian algorithm with potentials; `O(n^3)`. Returns the column
    /// chosen for each row and the total cost.
    pub fn solve_min(cost: &[Vec<i64>]) -> (Vec<usize>, i64) {
        let n = cost.len();
        const INF: i64 = i64::MAX / 4;
        let mut u = vec![0i64; n + 1];
        let mut v = vec![0i64; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];

        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![INF; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = INF;
                let mut j1 = 0usize;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }

        let mut row_to_col = vec![0usize; n];
        let mut total = 0i64;
        for j in 1..=n {
            if p[j] > 0 {
                row_to_col[p[j] - 1] = j - 1;
                total += cost[p[j] - 1][j - 1];
            }
        }
        (row_to_col, total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: Vec<usize>, c: usize) -> LabelVector {
        LabelVector::new(v, c).unwrap()
    }

    fn pred(v: Vec<usize>, c: usize) -> ClusterAssignment {
        ClusterAssignment::new(v, c).unwrap()
    }

    /// Best accuracy over every cluster-to-class bijection, by brute force.
    fn permutation_acc_oracle(truth: &LabelVector, guess: &ClusterAssignment) -> f64 {
        let side = truth.class_count().max(guess.cluster_count());
        let mut perm: Vec<usize> = (0..side).collect();
        let mut best = 0usize;
        permute(&mut perm, 0, &mut |p| {
            let correct = truth
                .labels()
                .iter()
                .zip(guess.labels())
                .filter(|&(&t, &g)| p[g] == t)
                .count();
            if correct > best {
                best = correct;
            }
        });
        best as f64 / truth.len() as f64
    }

    fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }

    #[test]
    fn acc_identical_is_one_and_two_swaps_cost_two_over_n() {
        let t = labels(vec![0, 0, 1, 1, 2, 2], 3);
        let same = pred(vec![0, 0, 1, 1, 2, 2], 3);
        assert_eq!(acc(&t, &same).unwrap(), 1.0);

        let swapped = pred(vec![1, 0, 0, 1, 2, 2], 3);
        let expected = 1.0 - 2.0 / 6.0;
        assert!((acc(&t, &swapped).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn acc_is_permutation_invariant() {
        let t = labels(vec![0, 0, 1, 1, 2, 2], 3);
        let p1 = pred(vec![2, 2, 0, 0, 1, 1], 3);
        assert_eq!(acc(&t, &p1).unwrap(), 1.0);
    }

    #[test]
    fn acc_matches_exhaustive_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let c = 2 + (rng.random::<u32>() % 5) as usize;
            let n = c + 4 + (rng.random::<u32>() % 20) as usize;
            let mut t: Vec<usize> = (0..c).collect();
            let mut g: Vec<usize> = (0..c).collect();
            for _ in 0..(n - c) {
                t.push((rng.random::<u32>() as usize) % c);
                g.push((rng.random::<u32>() as usize) % c);
            }
            let truth = labels(t, c);
            let guess = pred(g, c);
            let fast = acc(&truth, &guess).unwrap();
            let slow = permutation_acc_oracle(&truth, &guess);
            assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn nmi_degenerate_cases() {
        let t = labels(vec![0, 0, 1, 1], 2);
        let single = pred(vec![0, 0, 0, 0], 1);
        assert_eq!(nmi(&t, &single).unwrap(), 0.0);

        let t1 = labels(vec![0, 0, 0], 1);
        let p1 = pred(vec![0, 0, 0], 1);
        assert_eq!(nmi(&t1, &p1).unwrap(), 1.0);

        let same = pred(vec![1, 1, 0, 0], 2);
        assert!((nmi(&t, &same).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nmi_of_refinement_into_singletons() {
        // Two balanced classes split into four singletons:
        // I = ln 2, H_t = ln 2, H_p = ln 4.
        let t = labels(vec![0, 0, 1, 1], 2);
        let p4 = pred(vec![0, 1, 2, 3], 4);
        let expected = (2f64.ln() / (2f64.ln() * 4f64.ln()).sqrt()) as f64;
        assert!((nmi(&t, &p4).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn purity_of_constant_prediction_is_largest_class_share() {
        let t = labels(vec![0, 1, 2, 0, 1, 2], 3);
        let single = pred(vec![0; 6], 1);
        assert!((purity(&t, &single).unwrap() - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_extraction_breaks_ties_to_lowest_index() {
        let v = array![[0.3, 0.3, 0.1], [0.1, 0.5, 0.5], [0.0, 0.0, 1.0]];
        let a = extract_labels(&v.view(), ExtractionMethod::ArgmaxRow, 1, 0).unwrap();
        assert_eq!(a.labels(), &[0, 1, 2]);
    }

    #[test]
    fn kmeans_extraction_recovers_separated_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = Array2::<f64>::zeros((30, 3));
        for i in 0..30 {
            let block = i / 10;
            for j in 0..3 {
                v[[i, j]] = if j == block { 1.0 } else { 0.0 } + 0.01 * rng.random::<f64>();
            }
        }
        let a = extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 10, 3).unwrap();
        let truth = labels(
            (0..30).map(|i| i / 10).collect::<Vec<usize>>(),
            3,
        );
        assert_eq!(acc(&truth, &a).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_extraction_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = Array2::from_shape_fn((24, 4), |_| rng.random::<f64>());
        let a = extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 10, 99).unwrap();
        let b = extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 10, 99).unwrap();
        assert_eq!(a, b);
        let c = extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 10, 100).unwrap();
        let _ = c; // different seed must still be valid; equality not required
    }

    #[test]
    fn kmeans_handles_duplicate_rows() {
        // Fewer distinct rows than clusters: every label stays in range and
        // the call does not loop or panic.
        let v = Array2::<f64>::ones((8, 3));
        let a = extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 5, 1).unwrap();
        assert!(a.labels().iter().all(|&l| l < 3));
    }

    #[test]
    fn extract_labels_validates() {
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(extract_labels(&v.view(), ExtractionMethod::KMeansOnV, 0, 0).is_err());
        let bad = array![[f64::NAN, 0.0], [0.0, 1.0]];
        assert!(extract_labels(&bad.view(), ExtractionMethod::ArgmaxRow, 1, 0).is_err());
        let narrow = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(extract_labels(&narrow.view(), ExtractionMethod::KMeansOnV, 1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn acc_never_exceeds_purity(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = 2 + (rng.random::<u32>() % 3) as usize;
            let n = c + 6 + (rng.random::<u32>() % 12) as usize;
            let mut t: Vec<usize> = (0..c).collect();
            let mut g: Vec<usize> = (0..c).collect();
            for _ in 0..(n - c) {
                t.push((rng.random::<u32>() as usize) % c);
                g.push((rng.random::<u32>() as usize) % c);
            }
            let truth = labels(t, c);
            let guess = pred(g, c);
            let a = acc(&truth, &guess).unwrap();
            let p = purity(&truth, &guess).unwrap();
            prop_assert!(a <= p + 1e-12, "acc {a} > purity {p}");
        }

        #[test]
        fn metrics_invariant_under_cluster_relabeling(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = 3usize;
            let n = 18usize;
            let mut t: Vec<usize> = (0..c).collect();
            let mut g: Vec<usize> = (0..c).collect();
            for _ in 0..(n - c) {
                t.push((rng.random::<u32>() as usize) % c);
                g.push((rng.random::<u32>() as usize) % c);
            }
            let relabel = [2usize, 0, 1];
            let g2: Vec<usize> = g.iter().map(|&x| relabel[x]).collect();
            let truth = labels(t, c);
            let p1 = pred(g, c);
            let p2 = pred(g2, c);
            prop_assert!((nmi(&truth, &p1).unwrap() - nmi(&truth, &p2).unwrap()).abs() <= 1e-12);
            prop_assert!((acc(&truth, &p1).unwrap() - acc(&truth, &p2).unwrap()).abs() <= 1e-12);
            prop_assert!((purity(&truth, &p1).unwrap() - purity(&truth, &p2).unwrap()).abs() <= 1e-12);
        }
    }
}
