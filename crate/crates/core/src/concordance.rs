//! Discrimination metrics: Harrell's C-index, the expected C-index under
//! proportional hazards, their subpopulation variants and discrimination
//! ratios.
//!
//! A pair `(i, j)` is comparable (`A_ij = 1`) when `T̃_i > T̃_j` and `j`'s
//! event was observed. The model scores the pair as concordant when it
//! predicts `i` to survive longer. Expected variants replace the realized
//! outcome by `p_ij = h_j / (h_i + h_j)`, the probability that `i` outlives
//! `j`; for a comparable pair the expected concordance is `p_ij` if the
//! model ranks `i` above `j` and `p_ji` otherwise.
//!
//! All scans are O(m²) in time and O(m) in memory; pairs are never
//! materialized. Ties in times or predictions are rejected: perturb first.

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::hazard::{HazardAssignment, PredictionModel};

/// Probability that a member with rate `h_i` outlives one with rate `h_j`.
pub fn pairwise_win_probability(h_i: f64, h_j: f64) -> Result<f64> {
    if !(h_i > 0.0 && h_j > 0.0 && h_i.is_finite() && h_j.is_finite()) {
        return Err(Error::arg(format!("hazards ({h_i}, {h_j}) must be positive")));
    }
    Ok(win(h_i, h_j))
}

#[inline]
fn win(h_i: f64, h_j: f64) -> f64 {
    h_j / (h_i + h_j)
}

/// Comparable-pair counts for a cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairUniverse {
    /// `K = Σ A_ij`.
    pub k: u64,
    /// `K_l = Σ_{i ∈ P_l} Σ_j (A_ij + A_ji)`, aligned with the cohort's group levels.
    pub per_group: Vec<u64>,
    /// Comparable pairs with both members in the group.
    pub within: Vec<u64>,
}

impl PairUniverse {
    pub fn comparable(t_i: f64, t_j: f64, event_j: bool) -> bool {
        event_j && t_i > t_j
    }
}

#[derive(Debug, Clone, Default)]
struct GroupTally {
    k: u64,
    concordant: u64,
    expected: f64,
    within_k: u64,
    within_concordant: u64,
    within_expected: f64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    k: u64,
    concordant: u64,
    expected: f64,
    groups: Vec<GroupTally>,
}

impl Tally {
    fn universe(&self) -> PairUniverse {
        PairUniverse {
            k: self.k,
            per_group: self.groups.iter().map(|g| g.k).collect(),
            within: self.groups.iter().map(|g| g.within_k).collect(),
        }
    }
}

fn ensure_distinct(values: &[f64], what: &str) -> Result<()> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg(format!("tied {what}; perturb ties first")));
    }
    Ok(())
}

fn scan(cohort: &Cohort, pred: &[f64], hazards: Option<&[f64]>) -> Result<Tally> {
    let times = cohort.times();
    ensure_distinct(&times, "observed times")?;
    ensure_distinct(pred, "predictions")?;
    let events = cohort.events();
    let groups = cohort.group_indices();

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut tally = Tally {
        groups: vec![GroupTally::default(); cohort.group_levels().len()],
        ..Default::default()
    };
    for (pos, &j) in order.iter().enumerate() {
        if !events[j] {
            continue;
        }
        for &i in &order[pos + 1..] {
            // Times are distinct and sorted, so every later member outlived j.
            let concordant = pred[i] > pred[j];
            let expected = match hazards {
                Some(h) if concordant => win(h[i], h[j]),
                Some(h) => win(h[j], h[i]),
                None => 0.0,
            };
            let c = concordant as u64;
            tally.k += 1;
            tally.concordant += c;
            tally.expected += expected;
            for g in [groups[i], groups[j]] {
                let gt = &mut tally.groups[g];
                gt.k += 1;
                gt.concordant += c;
                gt.expected += expected;
            }
            if groups[i] == groups[j] {
                let gt = &mut tally.groups[groups[i]];
                gt.within_k += 1;
                gt.within_concordant += c;
                gt.within_expected += expected;
            }
        }
    }
    Ok(tally)
}

fn group_index(cohort: &Cohort, label: &str) -> Result<usize> {
    cohort
        .group_levels()
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::arg(format!("unknown group {label:?}")))
}

/// Comparable-pair counts without scoring any model.
pub fn pair_universe(cohort: &Cohort) -> Result<PairUniverse> {
    let dummy: Vec<f64> = (0..cohort.len()).map(|i| i as f64).collect();
    Ok(scan(cohort, &dummy, None)?.universe())
}

/// Harrell's C-index of `model` together with the pair universe it was
/// computed over.
pub fn c_index(cohort: &Cohort, model: &PredictionModel) -> Result<(f64, PairUniverse)> {
    let tally = scan(cohort, &model.aligned(cohort)?, None)?;
    if tally.k == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((tally.concordant as f64 / tally.k as f64, tally.universe()))
}

/// Expected C-index of `model` when outcomes follow `hazards`. With `model`
/// ranking by times of observation and `hazards` inverted from those times
/// this is the upper bound `E[CI(M*)]`.
pub fn expected_c_index(cohort: &Cohort, hazards: &HazardAssignment, model: &PredictionModel) -> Result<f64> {
    let h = hazards.aligned(cohort)?;
    let tally = scan(cohort, &model.aligned(cohort)?, Some(&h))?;
    if tally.k == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(tally.expected / tally.k as f64)
}

/// Expected C-index over all `m(m-1)/2` pairs; requires every event observed.
pub fn uncensored_expected_c_index(
    cohort: &Cohort,
    hazards: &HazardAssignment,
    model: &PredictionModel,
) -> Result<f64> {
    if let Some(r) = cohort.records().iter().find(|r| !r.event) {
        return Err(Error::UncensoredOnly(r.id.clone()));
    }
    let m = cohort.len();
    if m < 2 {
        return Err(Error::NoComparablePairs);
    }
    let h = hazards.aligned(cohort)?;
    let pred = model.aligned(cohort)?;
    ensure_distinct(&pred, "predictions")?;
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += if pred[i] > pred[j] {
                win(h[i], h[j])
            } else {
                win(h[j], h[i])
            };
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// Expected C-index over all `m(m-1)/2` pairs when each member predicted to
/// outlive another is judged by its hazard at the time of observation:
/// `Σ M_ij · h_j / (h_j + h̃_i)`, with `h̃_i = h_i` for observed events and
/// `observation_hazards` for censored members.
pub fn censored_expected_c_index(
    cohort: &Cohort,
    hazards: &HazardAssignment,
    observation_hazards: &HazardAssignment,
    model: &PredictionModel,
) -> Result<f64> {
    let m = cohort.len();
    if m < 2 {
        return Err(Error::NoComparablePairs);
    }
    let h = hazards.aligned(cohort)?;
    let obs = observation_hazards.aligned(cohort)?;
    let survivor: Vec<f64> = cohort
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| if r.event { h[i] } else { obs[i] })
        .collect();
    let pred = model.aligned(cohort)?;
    ensure_distinct(&pred, "predictions")?;
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += if pred[i] > pred[j] {
                win(survivor[i], h[j])
            } else {
                win(survivor[j], h[i])
            };
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// Subpopulation C-index: pairs with at least one member in `label`, scored
/// against the whole population.
pub fn sub_c_index(cohort: &Cohort, model: &PredictionModel, label: &str) -> Result<f64> {
    let g = group_index(cohort, label)?;
    let tally = scan(cohort, &model.aligned(cohort)?, None)?;
    let gt = &tally.groups[g];
    if gt.k == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(gt.concordant as f64 / gt.k as f64)
}

/// C-index restricted to pairs with both members in `label`.
pub fn within_sub_c_index(cohort: &Cohort, model: &PredictionModel, label: &str) -> Result<f64> {
    let g = group_index(cohort, label)?;
    let tally = scan(cohort, &model.aligned(cohort)?, None)?;
    let gt = &tally.groups[g];
    if gt.within_k == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(gt.within_concordant as f64 / gt.within_k as f64)
}

pub fn expected_sub_c_index(
    cohort: &Cohort,
    hazards: &HazardAssignment,
    model: &PredictionModel,
    label: &str,
) -> Result<f64> {
    let g = group_index(cohort, label)?;
    let h = hazards.aligned(cohort)?;
    let tally = scan(cohort, &model.aligned(cohort)?, Some(&h))?;
    let gt = &tally.groups[g];
    if gt.k == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(gt.expected / gt.k as f64)
}

/// `(ci - 0.5) / (eci - 0.5)`; also serves subpopulation ratios.
pub fn discrimination_ratio(ci: f64, eci: f64) -> Result<f64> {
    if !(eci > 0.5) {
        return Err(Error::DegenerateBound(eci));
    }
    Ok((ci - 0.5) / (eci - 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub members: usize,
    /// `K_l`.
    pub pair_count: u64,
    pub subci: Option<f64>,
    pub subeci: Option<f64>,
    pub subdr: Option<f64>,
    pub within_subci: Option<f64>,
    pub within_pair_count: u64,
}

/// Hazards behind the expected terms are inverted from times of observation
/// (`h*`), not the unobservable true rates.
pub const HAZARD_CONVENTION: &str = "h_star";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub scenario: String,
    pub members: usize,
    /// `CI(M̂)`.
    pub ci: f64,
    /// `E[CI(M*)]`.
    pub eci: f64,
    /// `None` when the bound does not exceed 0.5.
    pub dr: Option<f64>,
    /// `K`.
    pub pair_count: u64,
    pub hazard_convention: String,
    pub per_group: Vec<GroupReport>,
}

impl ConcordanceReport {
    /// `Σ_l K_l / (2K) · SUBCI_l`, which equals `ci` up to rounding.
    pub fn weighted_subci(&self) -> f64 {
        let two_k = 2.0 * self.pair_count as f64;
        self.per_group
            .iter()
            .filter_map(|g| g.subci.map(|s| g.pair_count as f64 / two_k * s))
            .sum()
    }
}

/// Scores `model` (usually a fitted model) and the bound model `star`
/// (ranking by times of observation, with hazards `star_hazards`) on one cohort.
pub fn concordance_report(
    cohort: &Cohort,
    model: &PredictionModel,
    star: &PredictionModel,
    star_hazards: &HazardAssignment,
    scenario: impl Into<String>,
) -> Result<ConcordanceReport> {
    let observed = scan(cohort, &model.aligned(cohort)?, None)?;
    let h = star_hazards.aligned(cohort)?;
    let bound = scan(cohort, &star.aligned(cohort)?, Some(&h))?;
    if observed.k == 0 {
        return Err(Error::NoComparablePairs);
    }
    let k = observed.k as f64;
    let ci = observed.concordant as f64 / k;
    let eci = bound.expected / k;
    let sizes = cohort.group_sizes();
    let per_group = cohort
        .group_levels()
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let o = &observed.groups[g];
            let b = &bound.groups[g];
            let subci = (o.k > 0).then(|| o.concordant as f64 / o.k as f64);
            let subeci = (b.k > 0).then(|| b.expected / b.k as f64);
            let subdr = match (subci, subeci) {
                (Some(c), Some(e)) => discrimination_ratio(c, e).ok(),
                _ => None,
            };
            GroupReport {
                label: label.clone(),
                members: sizes[label],
                pair_count: o.k,
                subci,
                subeci,
                subdr,
                within_subci: (o.within_k > 0).then(|| o.within_concordant as f64 / o.within_k as f64),
                within_pair_count: o.within_k,
            }
        })
        .collect();
    Ok(ConcordanceReport {
        scenario: scenario.into(),
        members: cohort.len(),
        ci,
        eci,
        dr: discrimination_ratio(ci, eci).ok(),
        pair_count: observed.k,
        hazard_convention: HAZARD_CONVENTION.into(),
        per_group,
    })
}
