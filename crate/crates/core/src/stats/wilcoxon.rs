//! Wilcoxon rank-sum test with midranks and tie-corrected variance.

use serde::{Deserialize, Serialize};

use super::normal::sf;
use super::AnalysisError;

/// Exact enumeration is used when the pooled sample is at most this large.
pub const EXACT_MAX_N: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactP {
    pub p_two_sided: f64,
    /// Tail probability in the direction of the observed deviation.
    pub p_one_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of sample-a midranks in the pooled ranking.
    pub rank_sum: f64,
    pub expected: f64,
    pub sigma: f64,
    pub z: f64,
    pub p_two_sided: f64,
    /// Tail in the direction of `z`: upper when sample a ranks high,
    /// lower otherwise.
    pub p_one_sided: f64,
    pub tie_corrected: bool,
    /// Set when every pooled value is tied (σ = 0); p values are then 1.
    pub degenerate: bool,
    pub n1: usize,
    pub n2: usize,
    pub exact: Option<ExactP>,
}

/// Midranks (1-based) of `values` in ascending order.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn wilcoxon_rank_sum(sample_a: &[f64], sample_b: &[f64]) -> Result<WilcoxonResult, AnalysisError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(AnalysisError::Input(format!(
            "rank-sum test needs two nonempty samples (got {} and {})",
            sample_a.len(),
            sample_b.len()
        )));
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Input("rank-sum samples must be finite".into()));
    }
    let n1 = sample_a.len();
    let n2 = sample_b.len();
    let n = n1 + n2;
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let expected = n1 as f64 * (n as f64 + 1.0) / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut tie_corrected = false;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        if t > 1.0 {
            tie_corrected = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }
    let (nf, n1f, n2f) = (n as f64, n1 as f64, n2 as f64);
    let variance = if n > 1 {
        n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))
    } else {
        0.0
    };
    let sigma = variance.max(0.0).sqrt();
    let degenerate = sigma <= 1e-12;
    let (z, p_two_sided, p_one_sided) = if degenerate {
        (0.0, 1.0, 1.0)
    } else {
        let z = (rank_sum - expected) / sigma;
        (z, (2.0 * sf(z.abs())).min(1.0), sf(z.abs()))
    };

    let exact = (n <= EXACT_MAX_N).then(|| exact_p(&ranks, n1, rank_sum, expected));
    Ok(WilcoxonResult {
        rank_sum,
        expected,
        sigma,
        z,
        p_two_sided,
        p_one_sided,
        tie_corrected,
        degenerate,
        n1,
        n2,
        exact,
    })
}

/// Permutation distribution of the rank sum over all C(N, n1) subsets,
/// counted by dynamic programming over doubled (integer) midranks.
fn exact_p(ranks: &[f64], n1: usize, observed: f64, expected: f64) -> ExactP {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; n1 + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - r];
            }
        }
    }
    let total: u64 = counts[n1].iter().sum();
    let obs2 = (2.0 * observed).round() as i64;
    let exp2 = (2.0 * expected).round() as i64;
    let dev = (obs2 - exp2).abs();
    let mut tail = 0u64;
    let mut extreme = 0u64;
    for (s, &c) in counts[n1].iter().enumerate() {
        if c == 0 {
            continue;
        }
        let s = s as i64;
        if (obs2 >= exp2 && s >= obs2) || (obs2 < exp2 && s <= obs2) {
            tail += c;
        }
        if (s - exp2).abs() >= dev {
            extreme += c;
        }
    }
    ExactP {
        p_two_sided: extreme as f64 / total as f64,
        p_one_sided: tail as f64 / total as f64,
    }
}
