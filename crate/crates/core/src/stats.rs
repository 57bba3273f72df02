//! Replicate summaries and the two-sample significance tests used to flag
//! subgroup differences.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    /// One value per replicate, in replicate order.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single replicate).
    pub sd: f64,
    pub ci95: (f64, f64),
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Mean, sample sd and normal-approximation interval `mean ± z·sd/√n`.
pub fn replicate_summary(values: &[f64], level: f64) -> Result<ReplicateSummary> {
    if values.is_empty() {
        return Err(Error::arg("replicate summary needs at least one value"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!("confidence level {level} outside (0, 1)")));
    }
    // Summing in sorted order keeps the result independent of replicate order.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let z = standard_normal().inverse_cdf(0.5 + level / 2.0);
    let half = z * sd / n.sqrt();
    Ok(ReplicateSummary {
        values: values.to_vec(),
        mean,
        sd,
        ci95: (mean - half, mean + half),
    })
}

/// `P(X ≤ k)` for `X ~ Binomial(n, 1/2)`.
fn binomial_half_cdf(n: u64, k: u64) -> f64 {
    if n <= 120 {
        let mut c: u128 = 1;
        let mut acc: u128 = 0;
        for i in 0..=k {
            if i > 0 {
                c = c * (n - i + 1) as u128 / i as u128;
            }
            acc += c;
        }
        acc as f64 / 2f64.powi(n as i32)
    } else {
        let ln2n = n as f64 * std::f64::consts::LN_2;
        let mut ln_c = 0.0;
        let mut acc = 0.0;
        for i in 0..=k {
            if i > 0 {
                ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
            }
            acc += (ln_c - ln2n).exp();
        }
        acc
    }
}

/// Exact two-sided sign test; zero differences are dropped.
pub fn sign_test(differences: &[f64]) -> Result<f64> {
    let pos = differences.iter().filter(|&&d| d > 0.0).count() as u64;
    let neg = differences.iter().filter(|&&d| d < 0.0).count() as u64;
    let n = pos + neg;
    if n == 0 {
        return Err(Error::arg("sign test needs at least one nonzero difference"));
    }
    Ok((2.0 * binomial_half_cdf(n, pos.min(neg))).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitneyMethod {
    /// Exact null distribution when both samples have at most
    /// [`EXACT_MAX_SIZE`] values and there are no ties, normal otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

pub const EXACT_MAX_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Number of (a, b) pairs with `a > b`, ties counting one half.
    pub u: f64,
    pub p_value: f64,
    pub method: MannWhitneyMethod,
}

/// Two-sided Mann–Whitney U test (see [`MannWhitneyMethod::Auto`]).
pub fn mann_whitney(sample_a: &[f64], sample_b: &[f64]) -> Result<MannWhitney> {
    mann_whitney_with(sample_a, sample_b, MannWhitneyMethod::Auto)
}

pub fn mann_whitney_with(sample_a: &[f64], sample_b: &[f64], method: MannWhitneyMethod) -> Result<MannWhitney> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::arg("both samples must be non-empty"));
    }
    if sample_a.iter().chain(sample_b).any(|v| v.is_nan()) {
        return Err(Error::arg("samples contain NaN"));
    }
    let u: f64 = sample_a
        .iter()
        .map(|a| {
            sample_b
                .iter()
                .map(|b| match a.partial_cmp(b).expect("no NaN") {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                })
                .sum::<f64>()
        })
        .sum();

    let mut pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let tie_sizes: Vec<usize> = pooled
        .chunk_by(|x, y| x == y)
        .map(|c| c.len())
        .filter(|&t| t > 1)
        .collect();

    let (na, nb) = (sample_a.len(), sample_b.len());
    let method = match method {
        MannWhitneyMethod::Auto if na <= EXACT_MAX_SIZE && nb <= EXACT_MAX_SIZE && tie_sizes.is_empty() => {
            MannWhitneyMethod::Exact
        }
        MannWhitneyMethod::Auto => MannWhitneyMethod::Normal,
        MannWhitneyMethod::Exact if !tie_sizes.is_empty() => {
            return Err(Error::arg("exact Mann–Whitney p-value requires untied samples"));
        }
        m => m,
    };
    let p_value = match method {
        MannWhitneyMethod::Exact => exact_p(na, nb, u),
        _ => normal_p(na, nb, u, &tie_sizes),
    };
    Ok(MannWhitney { u, p_value, method })
}

/// Number of arrangements giving each U value for sample sizes (na, nb).
fn u_distribution(na: usize, nb: usize) -> Vec<f64> {
    // counts[j][u] for the current number of a-values, j b-values.
    let max_u = na * nb;
    let mut prev: Vec<Vec<f64>> = (0..=nb).map(|_| vec![0.0; max_u + 1]).collect();
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=na {
        let mut cur: Vec<Vec<f64>> = (0..=nb).map(|_| vec![0.0; max_u + 1]).collect();
        cur[0][0] = 1.0;
        for j in 1..=nb {
            for u in 0..=i * j {
                // Largest value is an a (beats all j b's) or a b (adds nothing).
                let from_a = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(nb)
}

fn exact_p(na: usize, nb: usize, u: f64) -> f64 {
    let dist = u_distribution(na, nb);
    let total: f64 = dist.iter().sum();
    let u = u.round() as usize;
    let lower: f64 = dist[..=u].iter().sum::<f64>() / total;
    let upper: f64 = dist[u..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(na: usize, nb: usize, u: f64, tie_sizes: &[usize]) -> f64 {
    let (na_f, nb_f) = (na as f64, nb as f64);
    let n = na_f + nb_f;
    let mu = na_f * nb_f / 2.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = na_f * nb_f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * (1.0 - standard_normal().cdf(z))).min(1.0)
}
