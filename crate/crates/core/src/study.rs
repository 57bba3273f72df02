//! Repeated random-split evaluation: tie perturbation, administrative
//! censoring, subgroup balancing, Cox fitting on the retrospective half and
//! scoring against the observed-time bound on the evaluation half.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{breslow_baseline, observed_hazards};
use crate::cohort::{Cohort, SurvivalRecord};
use crate::concordance::{c_index, concordance_report, discrimination_ratio, ConcordanceReport};
use crate::cox::{fit_cox, predict_hazard_ratios, CoxFit, CoxOptions};
use crate::error::{Error, Result};
use crate::hazard::PredictionModel;
use crate::rng::{child_seed, substream, Purpose};
use crate::stats::{mann_whitney, replicate_summary, sign_test, ReplicateSummary};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const CONFIDENCE_LEVEL: f64 = 0.95;
/// Relative size of the default tie-breaking noise.
pub const EPSILON_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EciSide {
    /// Score on the held-out half.
    #[default]
    Pro,
    /// Score on the half the model was fitted to.
    Ret,
}

fn default_replicates() -> usize {
    30
}

fn default_split() -> f64 {
    0.5
}

fn default_scenario() -> String {
    "all".into()
}

fn default_inversion_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    /// Width of the tie-breaking noise; defaults to half the smallest gap
    /// between distinct times.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Groups to undersample to equal size before splitting.
    #[serde(default)]
    pub balance_groups: Option<Vec<String>>,
    /// Drop groups not listed in `balance_groups` instead of passing them through.
    #[serde(default)]
    pub drop_unlisted: bool,
    /// Administrative censoring horizon.
    #[serde(default)]
    pub follow_up_horizon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eci_on: EciSide,
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub cox: CoxOptions,
    #[serde(default = "default_inversion_tolerance")]
    pub inversion_tolerance: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            split_fraction: default_split(),
            epsilon: None,
            balance_groups: None,
            drop_unlisted: false,
            follow_up_horizon: None,
            seed: 0,
            eci_on: EciSide::Pro,
            scenario: default_scenario(),
            cox: CoxOptions::default(),
            inversion_tolerance: default_inversion_tolerance(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::arg("replicates must be at least 1"));
        }
        check_fraction(self.split_fraction)?;
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::arg(format!("epsilon {e} must be positive")));
            }
        }
        if let Some(h) = self.follow_up_horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::arg(format!("follow-up horizon {h} must be positive")));
            }
        }
        if matches!(&self.balance_groups, Some(g) if g.is_empty()) {
            return Err(Error::arg("balance_groups is empty"));
        }
        if !(self.inversion_tolerance > 0.0) {
            return Err(Error::arg("inversion tolerance must be positive"));
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("split fraction {f} outside (0, 1)")))
    }
}

/// Smallest positive gap between distinct values, if any.
fn min_gap(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .min_by(f64::total_cmp)
}

/// `EPSILON_FACTOR` times the smallest gap between distinct observed times
/// (times the smallest time when all times are equal).
pub fn default_epsilon(cohort: &Cohort) -> f64 {
    let times = cohort.times();
    let scale = min_gap(&times).unwrap_or_else(|| times.iter().copied().fold(f64::INFINITY, f64::min));
    EPSILON_FACTOR * scale
}

/// `Unif(0, ε)` noise on every value. Values the noise fails to separate
/// in floating point are pushed apart by single ulps.
fn jitter(values: &[f64], epsilon: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out: Vec<f64> = values.iter().map(|v| v + rng.random::<f64>() * epsilon).collect();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[a].total_cmp(&out[b]).then(a.cmp(&b)));
    for k in 1..order.len() {
        let (prev, cur) = (order[k - 1], order[k]);
        if out[cur] <= out[prev] {
            out[cur] = out[prev].next_up();
        }
    }
    out
}

/// Adds independent `Unif(0, ε)` noise to every observed time. The results
/// are distinct.
pub fn perturb_ties(cohort: &Cohort, epsilon: f64, seed: u64) -> Result<Cohort> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon {epsilon} must be positive")));
    }
    let mut rng = substream(seed, Purpose::Perturb, 0);
    let times = jitter(&cohort.times(), epsilon, &mut rng);
    let mut next = times.into_iter();
    cohort.map_records(|r| SurvivalRecord {
        observed_time: next.next().expect("one time per record"),
        ..r.clone()
    })
}

/// Records observed past `horizon` become censored at `horizon`.
pub fn administrative_censor(cohort: &Cohort, horizon: f64) -> Result<Cohort> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::arg(format!("horizon {horizon} must be positive")));
    }
    cohort.map_records(|r| {
        if r.observed_time > horizon {
            SurvivalRecord {
                observed_time: horizon,
                event: false,
                ..r.clone()
            }
        } else {
            r.clone()
        }
    })
}

/// Randomly deletes members of the listed groups until each has the size of
/// the smallest. Other groups pass through unless `drop_unlisted`.
pub fn undersample_balance(cohort: &Cohort, labels: &[String], drop_unlisted: bool, seed: u64) -> Result<Cohort> {
    if labels.is_empty() {
        return Err(Error::arg("no groups to balance"));
    }
    let sizes = cohort.group_sizes();
    let mut target = usize::MAX;
    for l in labels {
        match sizes.get(l) {
            None | Some(0) => return Err(Error::arg(format!("group {l:?} is empty"))),
            Some(&n) => target = target.min(n),
        }
    }
    let mut rng = substream(seed, Purpose::Balance, 0);
    let mut keep = vec![false; cohort.len()];
    // Labels are visited in cohort level order so the draw does not depend
    // on how the caller listed them.
    for level in cohort.group_levels() {
        let members: Vec<usize> = cohort
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.group == level)
            .map(|(i, _)| i)
            .collect();
        if labels.contains(level) {
            for k in sample(&mut rng, members.len(), target) {
                keep[members[k]] = true;
            }
        } else if !drop_unlisted {
            for i in members {
                keep[i] = true;
            }
        }
    }
    let indices: Vec<usize> = (0..cohort.len()).filter(|&i| keep[i]).collect();
    cohort.subset(&indices)
}

/// Uniform random split into `(ret, pro)` of sizes `round(f·m)` and the rest,
/// each in original record order.
pub fn split(cohort: &Cohort, fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    check_fraction(fraction)?;
    let m = cohort.len();
    let n_ret = (fraction * m as f64).round() as usize;
    if n_ret == 0 || n_ret >= m {
        return Err(Error::arg(format!("split of {m} members at {fraction} leaves a side empty")));
    }
    let mut rng = substream(seed, Purpose::Split, 0);
    let mut in_ret = vec![false; m];
    for i in sample(&mut rng, m, n_ret) {
        in_ret[i] = true;
    }
    let (ret, pro): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| in_ret[i]);
    Ok((cohort.subset(&ret)?, cohort.subset(&pro)?))
}

/// Breaks ties among prediction scores with `Unif(0, ε)` noise, ε half the
/// smallest gap. Returns the number of tied members.
fn break_prediction_ties(cohort: &Cohort, model: &PredictionModel, seed: u64) -> Result<(PredictionModel, usize)> {
    let values = model.aligned(cohort)?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let tied: usize = sorted
        .chunk_by(|a, b| a == b)
        .filter(|c| c.len() > 1)
        .map(<[f64]>::len)
        .sum();
    if tied == 0 {
        return Ok((model.clone(), 0));
    }
    let scale = min_gap(&values).unwrap_or_else(|| sorted[0].abs().max(1.0));
    let eps = EPSILON_FACTOR * scale;
    let mut rng = substream(seed, Purpose::PredictionTies, 0);
    let jittered = jitter(&values, eps, &mut rng);
    Ok((PredictionModel::from_aligned(cohort, &jittered)?, tied))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub ret_size: usize,
    pub eval_size: usize,
    pub eci_on: EciSide,
    pub cox: CoxFit,
    /// `CI(M*)` on the retrospective half; always exactly 1.
    pub star_ci_ret: f64,
    /// Evaluation members past the transferred baseline's horizon.
    pub clamped_at_min: usize,
    pub clamped_at_max: usize,
    pub max_inversion_residual: f64,
    pub prediction_ties_broken: usize,
    pub report: ConcordanceReport,
}

/// One replicate on an already balanced and censored cohort.
fn run_replicate(cohort: &Cohort, study: &StudyConfig, index: usize) -> Result<ReplicateResult> {
    let seed = child_seed(study.seed, index as u64);
    let epsilon = study.epsilon.unwrap_or_else(|| default_epsilon(cohort));
    let perturbed = perturb_ties(cohort, epsilon, seed)?;
    let (ret, pro) = split(&perturbed, study.split_fraction, seed)?;

    let star_ci_ret = c_index(&ret, &PredictionModel::from_observed_times(&ret))?.0;
    if star_ci_ret != 1.0 {
        return Err(Error::Validation(format!(
            "CI of the observed-time ranking on the retrospective half is {star_ci_ret}, expected 1"
        )));
    }

    let fit = fit_cox(&ret, &study.cox)?;
    let baseline = breslow_baseline(&ret, &fit.coefficients)?;
    let eval = match study.eci_on {
        EciSide::Pro => &pro,
        EciSide::Ret => &ret,
    };
    let star = observed_hazards(eval, &baseline, study.inversion_tolerance)?;
    let fitted = PredictionModel::from_hazard_ranking(&predict_hazard_ratios(&fit, eval)?);
    let (fitted, ties) = break_prediction_ties(eval, &fitted, seed)?;
    let report = concordance_report(
        eval,
        &fitted,
        &PredictionModel::from_observed_times(eval),
        &star.hazards,
        study.scenario.clone(),
    )?;
    Ok(ReplicateResult {
        index,
        seed,
        ret_size: ret.len(),
        eval_size: eval.len(),
        eci_on: study.eci_on,
        cox: fit,
        star_ci_ret,
        clamped_at_min: star.clamped_at_min,
        clamped_at_max: star.clamped_at_max,
        max_inversion_residual: star.max_residual,
        prediction_ties_broken: ties,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    /// Replicates in which the group had comparable pairs.
    pub replicates: usize,
    pub subci: Option<ReplicateSummary>,
    pub subeci: Option<ReplicateSummary>,
    /// Ratio of the mean SUBCI and mean SUBECI.
    pub subdr: Option<f64>,
    pub within_subci: Option<ReplicateSummary>,
    /// Sign test on paired `SUBCI - CI` replicate differences.
    pub sign_p: Option<f64>,
    /// Mann–Whitney test between SUBCI and CI replicate samples.
    pub mann_whitney_u: Option<f64>,
    pub mann_whitney_p: Option<f64>,
    pub sign_significant: bool,
    pub mann_whitney_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: String,
    pub replicates: usize,
    pub ci: ReplicateSummary,
    pub eci: ReplicateSummary,
    /// Ratio of the mean CI and mean ECI.
    pub dr: Option<f64>,
    pub per_group: Vec<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    /// Members after balancing, before splitting.
    pub members: usize,
    pub replicates: Vec<ReplicateResult>,
    pub summary: StudySummary,
}

impl StudyResult {
    pub fn reports(&self) -> Vec<&ConcordanceReport> {
        self.replicates.iter().map(|r| &r.report).collect()
    }
}

fn summarize_group(label: &str, replicates: &[ReplicateResult]) -> Result<GroupSummary> {
    let mut ci = Vec::new();
    let mut subci = Vec::new();
    let mut subeci = Vec::new();
    let mut within = Vec::new();
    for r in replicates {
        let Some(g) = r.report.per_group.iter().find(|g| g.label == label) else {
            continue;
        };
        if let Some(s) = g.subci {
            ci.push(r.report.ci);
            subci.push(s);
        }
        if let Some(s) = g.subeci {
            subeci.push(s);
        }
        if let Some(s) = g.within_subci {
            within.push(s);
        }
    }
    let summary = |v: &[f64]| -> Result<Option<ReplicateSummary>> {
        if v.is_empty() {
            Ok(None)
        } else {
            replicate_summary(v, CONFIDENCE_LEVEL).map(Some)
        }
    };
    let subci_summary = summary(&subci)?;
    let subeci_summary = summary(&subeci)?;
    let subdr = match (&subci_summary, &subeci_summary) {
        (Some(c), Some(e)) => discrimination_ratio(c.mean, e.mean).ok(),
        _ => None,
    };
    let (sign_p, mw) = if subci.is_empty() {
        (None, None)
    } else {
        let diffs: Vec<f64> = subci.iter().zip(&ci).map(|(s, c)| s - c).collect();
        (sign_test(&diffs).ok(), Some(mann_whitney(&subci, &ci)?))
    };
    let mann_whitney_p = mw.map(|m| m.p_value);
    Ok(GroupSummary {
        label: label.to_string(),
        replicates: subci.len(),
        subci: subci_summary,
        subeci: subeci_summary,
        subdr,
        within_subci: summary(&within)?,
        sign_p,
        mann_whitney_u: mw.map(|m| m.u),
        mann_whitney_p,
        sign_significant: sign_p.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
        mann_whitney_significant: mann_whitney_p.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
    })
}

pub fn summarize(scenario: &str, levels: &[String], replicates: &[ReplicateResult]) -> Result<StudySummary> {
    let ci: Vec<f64> = replicates.iter().map(|r| r.report.ci).collect();
    let eci: Vec<f64> = replicates.iter().map(|r| r.report.eci).collect();
    let ci = replicate_summary(&ci, CONFIDENCE_LEVEL)?;
    let eci = replicate_summary(&eci, CONFIDENCE_LEVEL)?;
    Ok(StudySummary {
        scenario: scenario.to_string(),
        replicates: replicates.len(),
        dr: discrimination_ratio(ci.mean, eci.mean).ok(),
        ci,
        eci,
        per_group: levels
            .iter()
            .map(|l| summarize_group(l, replicates))
            .collect::<Result<_>>()?,
    })
}

/// Balancing and administrative censoring, the steps shared by every replicate.
pub fn prepare_cohort(cohort: &Cohort, study: &StudyConfig) -> Result<Cohort> {
    let mut out = cohort.clone();
    if let Some(labels) = &study.balance_groups {
        out = undersample_balance(&out, labels, study.drop_unlisted, study.seed)?;
    }
    if let Some(h) = study.follow_up_horizon {
        out = administrative_censor(&out, h)?;
    }
    Ok(out)
}

/// Runs `study.replicates` independent split/fit/score replicates in
/// parallel and summarizes them. Results do not depend on scheduling.
pub fn run_study(cohort: &Cohort, study: &StudyConfig) -> Result<StudyResult> {
    study.validate()?;
    let prepared = prepare_cohort(cohort, study)?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..study.replicates)
        .into_par_iter()
        .map(|i| run_replicate(&prepared, study, i))
        .collect();
    let replicates = outcomes
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&study.scenario, prepared.group_levels(), &replicates)?;
    Ok(StudyResult {
        config: study.clone(),
        members: prepared.len(),
        replicates,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub eci: ReplicateSummary,
    pub ci: ReplicateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Fraction with the smallest ECI standard deviation.
    pub argmin_fraction: f64,
    /// Whether that fraction is neither the smallest nor the largest tried.
    pub interior_minimum: bool,
}

/// Repeats [`run_study`] for each split fraction, in ascending order.
pub fn split_sweep(cohort: &Cohort, fractions: &[f64], study: &StudyConfig) -> Result<SweepResult> {
    if fractions.is_empty() {
        return Err(Error::arg("no fractions to sweep"));
    }
    let mut sorted = fractions.to_vec();
    for &f in &sorted {
        check_fraction(f)?;
    }
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("duplicate split fractions"));
    }
    let mut rows = Vec::with_capacity(sorted.len());
    for &fraction in &sorted {
        let config = StudyConfig {
            split_fraction: fraction,
            ..study.clone()
        };
        let result = run_study(cohort, &config)?;
        rows.push(SweepRow {
            fraction,
            eci: result.summary.eci,
            ci: result.summary.ci,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.eci.sd.total_cmp(&b.1.eci.sd))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok(SweepResult {
        argmin_fraction: rows[best].fraction,
        interior_minimum: best > 0 && best + 1 < rows.len(),
        rows,
    })
}

/// Group sizes after balancing, keyed by label.
pub fn balanced_sizes(cohort: &Cohort, study: &StudyConfig) -> Result<BTreeMap<String, usize>> {
    Ok(prepare_cohort(cohort, study)?.group_sizes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{
        generate_cohort, BaselineSpec, CensoringSpec, CovariateDistribution, CovariateSpec, GroupRule,
        SimulationConfig,
    };

    fn rec(id: &str, t: f64, e: bool, g: &str) -> SurvivalRecord {
        SurvivalRecord {
            id: id.into(),
            observed_time: t,
            event: e,
            covariates: vec![],
            group: g.into(),
            origin_time: None,
        }
    }

    fn cohort(rows: Vec<SurvivalRecord>) -> Cohort {
        Cohort::new(rows, vec![]).unwrap()
    }

    fn synthetic(m: usize, beta: f64, seed: u64) -> Cohort {
        let config = SimulationConfig {
            m,
            baseline: BaselineSpec::Exponential { rate: 0.1 },
            beta: vec![beta, 0.3],
            covariates: vec![
                CovariateSpec {
                    name: "x".into(),
                    distribution: CovariateDistribution::StandardNormal,
                },
                CovariateSpec {
                    name: "b".into(),
                    distribution: CovariateDistribution::Bernoulli { p: 0.4 },
                },
            ],
            censoring: CensoringSpec::IndependentExponential { rate: 0.03 },
            group_rule: GroupRule::Multinomial {
                labels: vec!["a".into(), "b".into(), "c".into()],
                weights: vec![0.5, 0.3, 0.2],
            },
            seed,
        };
        generate_cohort(&config).unwrap().cohort
    }

    #[test]
    fn perturbation_preserves_order_and_breaks_ties() {
        let c = cohort(vec![
            rec("a", 1.0, true, "g"),
            rec("b", 1.0, true, "g"),
            rec("c", 1.0, false, "g"),
            rec("d", 2.0, true, "g"),
            rec("e", 1.5, true, "g"),
        ]);
        let eps = default_epsilon(&c);
        assert_eq!(eps, 0.5 * EPSILON_FACTOR);
        let p = perturb_ties(&c, eps, 3).unwrap();
        let t = p.times();
        assert!(t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
        assert!(t[..3].iter().all(|&x| x < t[4]) && t[4] < t[3]);
        assert_eq!(p, perturb_ties(&c, eps, 3).unwrap());
        assert!(perturb_ties(&c, 0.0, 3).is_err());
    }

    #[test]
    fn perturbation_separates_ties_below_float_resolution() {
        let rows = (0..2000).map(|i| rec(&format!("m{i}"), 10.0, false, "g")).collect();
        let c = cohort(rows);
        let p = perturb_ties(&c, 1e-14, 9).unwrap();
        let mut t = p.times();
        t.sort_by(f64::total_cmp);
        t.dedup();
        assert_eq!(t.len(), 2000);
    }

    #[test]
    fn administrative_censoring_examples() {
        let c = cohort(vec![rec("a", 12.0, true, "g"), rec("b", 8.0, false, "g"), rec("c", 9.0, true, "g")]);
        let out = administrative_censor(&c, 10.0).unwrap();
        assert_eq!((out.records()[0].observed_time, out.records()[0].event), (10.0, false));
        assert_eq!(out.records()[1], c.records()[1]);
        assert_eq!(out.records()[2], c.records()[2]);
        assert!(out.event_count() <= c.event_count());
    }

    #[test]
    fn balance_to_smallest_group() {
        let mut rows = Vec::new();
        for (g, n) in [("x", 5), ("y", 3), ("z", 4)] {
            for i in 0..n {
                rows.push(rec(&format!("{g}{i}"), 1.0 + rows.len() as f64, true, g));
            }
        }
        let c = cohort(rows);
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let b = undersample_balance(&c, &labels, false, 1).unwrap();
        assert!(b.group_sizes().values().all(|&n| n == 3));
        let again = undersample_balance(&b, &labels, false, 9).unwrap();
        assert_eq!(again, b);
        assert!(undersample_balance(&c, &["w".to_string()], false, 1).is_err());
        let partial = undersample_balance(&c, &labels[1..], false, 1).unwrap();
        assert_eq!(partial.group_sizes()["x"], 5);
        let dropped = undersample_balance(&c, &labels[1..], true, 1).unwrap();
        assert_eq!(dropped.group_sizes()["x"], 0);
    }

    #[test]
    fn balance_table_pattern() {
        let mut rows = Vec::new();
        for (g, n) in [("Asian", 247), ("Black", 1568), ("Hispanic", 716), ("White", 2659)] {
            for i in 0..n {
                rows.push(rec(&format!("{g}{i}"), 1.0 + rows.len() as f64, true, g));
            }
        }
        let c = cohort(rows);
        let labels: Vec<String> = c.group_levels().to_vec();
        let b = undersample_balance(&c, &labels, false, 2002).unwrap();
        assert!(b.group_sizes().values().all(|&n| n == 247));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let c = cohort((0..100).map(|i| rec(&format!("m{i}"), 1.0 + i as f64, true, "g")).collect());
        let (a, b) = split(&c, 0.5, 4).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        let mut ids: Vec<&str> = a.records().iter().chain(b.records()).map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
        assert_eq!(split(&c, 0.5, 4).unwrap(), (a, b));
        assert!(split(&c, 0.001, 4).is_err());
        assert!(split(&c, 1.0, 4).is_err());
    }

    #[test]
    fn single_replicate_has_zero_spread() {
        let c = synthetic(300, 0.8, 1);
        let study = StudyConfig {
            replicates: 1,
            ..Default::default()
        };
        let r = run_study(&c, &study).unwrap();
        assert_eq!(r.summary.ci.sd, 0.0);
        assert_eq!(r.summary.ci.ci95, (r.summary.ci.mean, r.summary.ci.mean));
        assert_eq!(r.replicates[0].star_ci_ret, 1.0);
    }

    #[test]
    fn study_is_deterministic_and_consistent() {
        let c = synthetic(400, 0.8, 2);
        let study = StudyConfig {
            replicates: 4,
            follow_up_horizon: Some(20.0),
            balance_groups: Some(vec!["a".into(), "b".into()]),
            ..Default::default()
        };
        let r1 = run_study(&c, &study).unwrap();
        let r2 = run_study(&c, &study).unwrap();
        assert_eq!(r1, r2);
        for rep in &r1.replicates {
            let rep = &rep.report;
            assert!((rep.weighted_subci() - rep.ci).abs() < 1e-12);
            if let Some(dr) = rep.dr {
                assert!((dr - (rep.ci - 0.5) / (rep.eci - 0.5)).abs() < 1e-12);
            }
            assert!(rep.eci > rep.ci);
        }
        let sizes = balanced_sizes(&c, &study).unwrap();
        assert_eq!(sizes["a"], sizes["b"]);
    }

    #[test]
    fn sweep_rejects_duplicates_and_sorts() {
        let c = synthetic(200, 0.8, 3);
        let study = StudyConfig {
            replicates: 2,
            ..Default::default()
        };
        assert!(split_sweep(&c, &[0.5, 0.5], &study).is_err());
        assert!(split_sweep(&c, &[1.5], &study).is_err());
        let s = split_sweep(&c, &[0.6, 0.4], &study).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[0].fraction, 0.4);
        let one = split_sweep(&c, &[0.5], &study).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(!one.interior_minimum);
    }

    #[test]
    fn replicate_errors_carry_index() {
        let c = cohort(vec![rec("a", 1.0, false, "g"), rec("b", 2.0, false, "g"), rec("c", 3.0, false, "g")]);
        let err = run_study(&c, &StudyConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Replicate { index: 0, .. }), "{err}");
    }

    #[test]
    fn study_config_defaults_from_json() {
        let s: StudyConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(s, StudyConfig::default());
        assert!(serde_json::from_str::<StudyConfig>(r#"{"bogus": 1}"#).is_err());
        let s: StudyConfig = serde_json::from_str(r#"{"eci_on": "ret", "replicates": 3}"#).unwrap();
        assert_eq!((s.eci_on, s.replicates), (EciSide::Ret, 3));
    }
}
