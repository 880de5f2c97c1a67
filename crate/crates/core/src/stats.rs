//! Rank statistics for comparing methods across datasets: win/loss tallies,
//! Friedman mean ranks with a chi-square test, and the Wilcoxon signed-rank
//! test. The needed special functions live in [`special`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores for `methods x cases`; one row per case, one column per method.
/// Higher is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    method_names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(method_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if method_names.len() < 2 {
            return Err(Error::invalid("need at least two methods to compare"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("score table has no rows"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != method_names.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} scores for {} methods",
                    row.len(),
                    method_names.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("row {i} contains non-finite scores")));
            }
        }
        Ok(ScoreTable { method_names, rows })
    }

    pub fn method_names(&self) -> &[String] {
        &self.method_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn method_count(&self) -> usize {
        self.method_names.len()
    }

    pub fn case_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn method_index(&self, name: &str) -> Result<usize> {
        self.method_names
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::invalid(format!("unknown method '{name}'")))
    }
}

/// Strict win/loss counts of `challenger` against every other column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinLoss {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

pub fn win_loss(table: &ScoreTable, challenger: &str) -> Result<WinLoss> {
    let j = table.method_index(challenger)?;
    let mut tally = WinLoss {
        wins: 0,
        losses: 0,
        ties: 0,
    };
    for row in table.rows() {
        for (other, &score) in row.iter().enumerate() {
            if other == j {
                continue;
            }
            if row[j] > score {
                tally.wins += 1;
            } else if row[j] < score {
                tally.losses += 1;
            } else {
                tally.ties += 1;
            }
        }
    }
    Ok(tally)
}

/// Friedman test output: per-method mean ranks (1 = best) and the chi-square
/// approximation of the null that all methods perform alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub method_names: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

pub fn friedman_ranks(table: &ScoreTable) -> Result<RankSummary> {
    let k = table.method_count();
    let n = table.case_count();
    let mut rank_sums = vec![0.0f64; k];

    for row in table.rows() {
        // Rank within the row, higher score = rank 1; ties share the average.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && row[order[j + 1]] == row[order[i]] {
                j += 1;
            }
            // Positions i..=j (0-based) share ranks i+1..=j+1.
            let avg = (i + j + 2) as f64 / 2.0;
            for &m in &order[i..=j] {
                rank_sums[m] += avg;
            }
            i = j + 1;
        }
    }

    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / n as f64).collect();
    let kf = k as f64;
    let nf = n as f64;
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let chi_square = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0) * (kf + 1.0) / 4.0);
    let degrees_of_freedom = k - 1;
    let p_value = special::chi_square_sf(chi_square.max(0.0), degrees_of_freedom as f64);

    Ok(RankSummary {
        method_names: table.method_names().to_vec(),
        mean_ranks,
        chi_square,
        degrees_of_freedom,
        p_value,
    })
}

/// Wilcoxon signed-rank comparison of two paired samples via the normal
/// approximation (no continuity correction). Zero differences are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedRankResult {
    pub w_plus: f64,
    pub w_minus: f64,
    pub z: f64,
    pub p_value: f64,
    /// Pairs that survived zero-difference removal.
    pub used_pairs: usize,
}

impl SignedRankResult {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignedRankResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples contain non-finite values"));
    }

    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::invalid("all paired differences are zero"));
    }

    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        diffs[i]
            .abs()
            .partial_cmp(&diffs[j].abs())
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
    let w = w_plus.min(w_minus);
    let z = (w - mean) / sd;
    let p_value = (2.0 * special::normal_cdf(z)).min(1.0);

    Ok(SignedRankResult {
        w_plus,
        w_minus,
        z,
        p_value,
        used_pairs: n,
    })
}

/// Log-gamma, regularized incomplete gamma, chi-square survival, normal CDF.
pub mod special {
    /// Lanczos approximation (g = 7, 9 coefficients), `x > 0`.
    pub fn ln_gamma(x: f64) -> f64 {
        const COEFFS: [f64; 8] = [
            676.5203681218851,
            -1259.1392167224028,
            771.32342877765313,
            -176.61502916214059,
            12.507343278686905,
            -0.13857109526572012,
            9.9843695780195716e-6,
            1.5056327351493116e-7,
        ];
        if x < 0.5 {
            // Reflection keeps the approximation in its accurate range.
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, c) in COEFFS.iter().enumerate() {
            acc += c / (x + (i + 1) as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }

    /// Regularized lower incomplete gamma `P(a, x)`.
    pub fn gamma_p(a: f64, x: f64) -> f64 {
        assert!(a > 0.0 && x >= 0.0, "gamma_p requires a > 0, x >= 0");
        if x == 0.0 {
            return 0.0;
        }
        if x < a + 1.0 {
            gamma_p_series(a, x)
        } else {
            1.0 - gamma_q_continued_fraction(a, x)
        }
    }

    /// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
    pub fn gamma_q(a: f64, x: f64) -> f64 {
        assert!(a > 0.0 && x >= 0.0, "gamma_q requires a > 0, x >= 0");
        if x == 0.0 {
            return 1.0;
        }
        if x < a + 1.0 {
            1.0 - gamma_p_series(a, x)
        } else {
            gamma_q_continued_fraction(a, x)
        }
    }

    fn gamma_p_series(a: f64, x: f64) -> f64 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    }

    /// Lentz's method on the standard continued fraction for `Q`.
    fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x + a * x.ln() - ln_gamma(a)).exp()
    }

    /// Chi-square survival function with `df` degrees of freedom.
    pub fn chi_square_sf(x: f64, df: f64) -> f64 {
        assert!(df > 0.0, "degrees of freedom must be positive");
        if x <= 0.0 {
            return 1.0;
        }
        gamma_q(df / 2.0, x / 2.0)
    }

    /// Standard normal CDF through the incomplete gamma identity
    /// `Phi(z) = Q(1/2, z^2/2) / 2` for `z < 0`.
    pub fn normal_cdf(z: f64) -> f64 {
        let half_tail = 0.5 * gamma_q(0.5, z * z / 2.0);
        if z < 0.0 {
            half_tail
        } else {
            1.0 - half_tail
        }
    }

}
