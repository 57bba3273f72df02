//! Synthetic proportional-hazards cohorts with known ground truth, plus
//! Monte-Carlo estimates of win probabilities and realized C-indices.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::baseline::{invert_hazard, BaselineSurvival};
use crate::cohort::{Cohort, SurvivalRecord};
use crate::concordance::c_index;
use crate::cox::{fit_cox, predict_hazard_ratios, CoxOptions};
use crate::error::{Error, Result};
use crate::hazard::{HazardAssignment, PredictionModel, Provenance};
use crate::rng::{substream, Purpose};

/// Baseline survival family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaselineSpec {
    /// `S0(t) = exp(-rate·t)`.
    Exponential { rate: f64 },
    /// `S0(t) = exp(-(t/scale)^shape)`.
    Weibull { shape: f64, scale: f64 },
    /// Right-continuous step function, 1 before the first knot.
    Step { knots: Vec<f64>, values: Vec<f64> },
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineSpec::Exponential { rate } => positive("baseline rate", *rate),
            BaselineSpec::Weibull { shape, scale } => {
                positive("weibull shape", *shape)?;
                positive("weibull scale", *scale)
            }
            BaselineSpec::Step { knots, values } => {
                let last = *knots.last().ok_or_else(|| Error::arg("step baseline needs knots"))?;
                BaselineSurvival::new(knots.clone(), values.clone(), last, *values.last().unwrap_or(&1.0))?;
                if values.iter().all(|&v| v >= 1.0) {
                    return Err(Error::arg("step baseline never drops below 1"));
                }
                Ok(())
            }
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            BaselineSpec::Exponential { rate } => (-rate * t).exp(),
            BaselineSpec::Weibull { shape, scale } => (-(t / scale).powf(*shape)).exp(),
            BaselineSpec::Step { knots, values } => {
                let idx = knots.partition_point(|&k| k <= t);
                if idx == 0 {
                    1.0
                } else {
                    values[idx - 1]
                }
            }
        }
    }

    /// Smallest `t` with `H0(t) ≥ x`, `+∞` if none.
    fn inverse_cumulative_hazard(&self, x: f64) -> f64 {
        match self {
            BaselineSpec::Exponential { rate } => x / rate,
            BaselineSpec::Weibull { shape, scale } => scale * x.powf(1.0 / shape),
            BaselineSpec::Step { knots, values } => knots
                .iter()
                .zip(values)
                .find(|(_, &s)| -s.ln() >= x)
                .map_or(f64::INFINITY, |(&t, _)| t),
        }
    }

    /// Event time for hazard `h` from a uniform draw `u ∈ (0, 1)`, by
    /// inverting `1 - S0(t)^h`.
    pub fn sample_time(&self, h: f64, u: f64) -> f64 {
        self.inverse_cumulative_hazard(-u.ln() / h)
    }

    /// `E[T] = ∫_0^∞ S0(t)^h dt`; infinite when the baseline never reaches 0.
    pub fn mean_survival(&self, h: f64) -> f64 {
        match self {
            BaselineSpec::Exponential { rate } => 1.0 / (rate * h),
            BaselineSpec::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape) * h.powf(-1.0 / shape),
            BaselineSpec::Step { knots, values } => {
                if values.last().is_some_and(|&v| v > 0.0) {
                    return f64::INFINITY;
                }
                let mut prev = 0.0;
                let mut s = 1.0f64;
                let mut total = 0.0;
                for (&t, &v) in knots.iter().zip(values) {
                    total += (t - prev) * s.powf(h);
                    prev = t;
                    s = v;
                }
                total
            }
        }
    }

    /// Hazard whose unrestricted mean survival equals `mean`.
    pub fn hazard_for_mean(&self, mean: f64) -> Result<f64> {
        positive("mean survival", mean)?;
        match self {
            BaselineSpec::Exponential { rate } => Ok(1.0 / (rate * mean)),
            BaselineSpec::Weibull { shape, scale } => Ok((scale * gamma(1.0 + 1.0 / shape) / mean).powf(*shape)),
            BaselineSpec::Step { knots, values } => {
                if values.last().is_some_and(|&v| v > 0.0) {
                    return Err(Error::arg("step baseline with positive tail has infinite means"));
                }
                let last = *knots.last().expect("validated");
                let b = BaselineSurvival::new(knots.clone(), values.clone(), last, 0.0)?;
                Ok(invert_hazard(&b, mean, 1e-12)?.hazard)
            }
        }
    }

    /// The baseline as a step function on `[0, horizon]`. Step baselines are
    /// exact; smooth families are sampled on `n` cells.
    pub fn to_step(&self, horizon: f64, n: usize) -> Result<BaselineSurvival> {
        match self {
            BaselineSpec::Step { knots, values } => {
                let keep = knots.partition_point(|&k| k <= horizon);
                if keep == 0 {
                    return BaselineSurvival::new(vec![], vec![], horizon, 1.0);
                }
                BaselineSurvival::new(knots[..keep].to_vec(), values[..keep].to_vec(), horizon, values[keep - 1])
            }
            _ => BaselineSurvival::from_survival_fn(|t| self.survival(t), horizon, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateDistribution {
    StandardNormal,
    Bernoulli { p: f64 },
    Uniform { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub distribution: CovariateDistribution,
}

impl CovariateSpec {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.distribution {
            CovariateDistribution::StandardNormal => StandardNormal.sample(rng),
            CovariateDistribution::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
            CovariateDistribution::Uniform { a, b } => rng.random_range(a..b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CensoringSpec {
    #[default]
    None,
    /// Follow-up stops for everyone at `horizon`.
    Administrative { horizon: f64 },
    /// `D_i ~ Exponential(rate)`, independent of everything else.
    IndependentExponential { rate: f64 },
    Both { horizon: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GroupRule {
    /// Everyone in one group.
    Single { label: String },
    /// `labels[k]` for values in `[thresholds[k-1], thresholds[k])`.
    Threshold {
        covariate: String,
        thresholds: Vec<f64>,
        labels: Vec<String>,
    },
    /// Independent draw with the given probabilities.
    Multinomial { labels: Vec<String>, weights: Vec<f64> },
}

impl Default for GroupRule {
    fn default() -> Self {
        GroupRule::Single { label: "all".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub m: usize,
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub censoring: CensoringSpec,
    #[serde(default)]
    pub group_rule: GroupRule,
    #[serde(default)]
    pub seed: u64,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} must be positive and finite, got {v}")))
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::arg("m must be at least 2"));
        }
        self.baseline.validate()?;
        if self.beta.len() != self.covariates.len() {
            return Err(Error::arg(format!(
                "{} coefficients for {} covariates",
                self.beta.len(),
                self.covariates.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::arg("coefficients must be finite"));
        }
        for c in &self.covariates {
            match c.distribution {
                CovariateDistribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return Err(Error::arg(format!("{}: bernoulli p {p} outside [0, 1]", c.name)));
                }
                CovariateDistribution::Uniform { a, b } if !(a < b && a.is_finite() && b.is_finite()) => {
                    return Err(Error::arg(format!("{}: need a < b for uniform", c.name)));
                }
                _ => {}
            }
        }
        match &self.censoring {
            CensoringSpec::None => {}
            CensoringSpec::Administrative { horizon } => positive("censoring horizon", *horizon)?,
            CensoringSpec::IndependentExponential { rate } => positive("censoring rate", *rate)?,
            CensoringSpec::Both { horizon, rate } => {
                positive("censoring horizon", *horizon)?;
                positive("censoring rate", *rate)?;
            }
        }
        match &self.group_rule {
            GroupRule::Single { .. } => {}
            GroupRule::Threshold {
                covariate,
                thresholds,
                labels,
            } => {
                if !self.covariates.iter().any(|c| &c.name == covariate) {
                    return Err(Error::arg(format!("group rule covariate {covariate:?} not simulated")));
                }
                if labels.len() != thresholds.len() + 1 {
                    return Err(Error::arg("threshold rule needs one more label than thresholds"));
                }
                if thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::arg("thresholds must be strictly increasing"));
                }
            }
            GroupRule::Multinomial { labels, weights } => {
                if labels.is_empty() || labels.len() != weights.len() {
                    return Err(Error::arg("multinomial rule needs one weight per label"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::arg("multinomial weights must be nonnegative and sum to 1"));
                }
            }
        }
        Ok(())
    }

    fn group_levels(&self) -> Vec<String> {
        match &self.group_rule {
            GroupRule::Single { label } => vec![label.clone()],
            GroupRule::Threshold { labels, .. } | GroupRule::Multinomial { labels, .. } => labels.clone(),
        }
    }
}

/// A simulated cohort together with everything that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBundle {
    pub cohort: Cohort,
    pub true_hazards: HazardAssignment,
    /// `None` when the event never happens (possible with step baselines).
    pub true_event_times: BTreeMap<String, Option<f64>>,
    /// `None` when the member is never censored.
    pub censor_times: BTreeMap<String, Option<f64>>,
}

impl TruthBundle {
    /// Hazards at the time of observation: the true rate for observed
    /// events, and for censored members the rate whose mean survival equals
    /// the censoring time.
    pub fn observation_hazards(&self, baseline: &BaselineSpec) -> Result<HazardAssignment> {
        let rates = self
            .cohort
            .records()
            .iter()
            .map(|r| {
                if r.event {
                    Ok(self.true_hazards.get(&r.id).expect("same ids"))
                } else {
                    baseline.hazard_for_mean(r.observed_time)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        HazardAssignment::from_aligned(&self.cohort, &rates, Provenance::ObservedInverted)
    }

    /// The cohort with every member observed at its true event time.
    pub fn uncensored(&self) -> Result<Cohort> {
        self.cohort.map_records(|r| SurvivalRecord {
            observed_time: self.true_event_times[&r.id].unwrap_or(f64::INFINITY),
            event: true,
            ..r.clone()
        })
    }
}

/// Covariates, hazards and group labels: the part of a cohort that stays
/// fixed while outcomes are resampled.
#[derive(Debug, Clone)]
struct Design {
    ids: Vec<String>,
    covariates: Vec<Vec<f64>>,
    hazards: Vec<f64>,
    groups: Vec<String>,
}

fn draw_design(config: &SimulationConfig) -> Result<Design> {
    let m = config.m;
    let width = (m - 1).to_string().len();
    let ids: Vec<String> = (0..m).map(|i| format!("s{i:0width$}")).collect();
    let mut rng = substream(config.seed, Purpose::Covariates, 0);
    let covariates: Vec<Vec<f64>> = (0..m)
        .map(|_| config.covariates.iter().map(|c| c.draw(&mut rng)).collect())
        .collect();
    let hazards: Vec<f64> = covariates
        .iter()
        .map(|z| config.beta.iter().zip(z).map(|(b, x)| b * x).sum::<f64>().exp())
        .collect();
    if let Some(h) = hazards.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
        return Err(Error::arg(format!("simulated hazard {h} is not positive and finite")));
    }
    let groups = match &config.group_rule {
        GroupRule::Single { label } => vec![label.clone(); m],
        GroupRule::Threshold {
            covariate,
            thresholds,
            labels,
        } => {
            let col = config
                .covariates
                .iter()
                .position(|c| &c.name == covariate)
                .expect("validated");
            covariates
                .iter()
                .map(|z| labels[thresholds.partition_point(|&t| t <= z[col])].clone())
                .collect()
        }
        GroupRule::Multinomial { labels, weights } => {
            let mut rng = substream(config.seed, Purpose::Groups, 0);
            (0..m)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let k = weights
                        .iter()
                        .position(|w| {
                            acc += w;
                            u < acc
                        })
                        .unwrap_or(labels.len() - 1);
                    labels[k].clone()
                })
                .collect()
        }
    };
    Ok(Design {
        ids,
        covariates,
        hazards,
        groups,
    })
}

/// Draws outcomes for a fixed design from outcome stream `stream`.
fn draw_outcomes(config: &SimulationConfig, design: &Design, stream: u64) -> Result<TruthBundle> {
    let mut event_rng = substream(config.seed, Purpose::EventTimes, stream);
    let mut censor_rng = substream(config.seed, Purpose::Censoring, stream);
    let m = design.ids.len();
    let mut records = Vec::with_capacity(m);
    let mut event_times = BTreeMap::new();
    let mut censor_times = BTreeMap::new();
    for i in 0..m {
        let u: f64 = Open01.sample(&mut event_rng);
        let t = config.baseline.sample_time(design.hazards[i], u);
        let d = match config.censoring {
            CensoringSpec::None => f64::INFINITY,
            CensoringSpec::Administrative { horizon } => horizon,
            CensoringSpec::IndependentExponential { rate } => {
                let v: f64 = Open01.sample(&mut censor_rng);
                -v.ln() / rate
            }
            CensoringSpec::Both { horizon, rate } => {
                let v: f64 = Open01.sample(&mut censor_rng);
                (-v.ln() / rate).min(horizon)
            }
        };
        let observed = t.min(d);
        if !observed.is_finite() {
            return Err(Error::arg(format!(
                "member {} never has an event and is never censored; add censoring",
                design.ids[i]
            )));
        }
        if observed <= 0.0 {
            return Err(Error::arg(format!("member {} has a zero observed time", design.ids[i])));
        }
        records.push(SurvivalRecord {
            id: design.ids[i].clone(),
            observed_time: observed,
            event: t < d,
            covariates: design.covariates[i].clone(),
            group: design.groups[i].clone(),
            origin_time: None,
        });
        event_times.insert(design.ids[i].clone(), t.is_finite().then_some(t));
        censor_times.insert(design.ids[i].clone(), d.is_finite().then_some(d));
    }
    let names = config.covariates.iter().map(|c| c.name.clone()).collect();
    let cohort = Cohort::with_group_levels(records, names, config.group_levels())?;
    let true_hazards = HazardAssignment::from_aligned(&cohort, &design.hazards, Provenance::TrueSynthetic)?;
    Ok(TruthBundle {
        cohort,
        true_hazards,
        true_event_times: event_times,
        censor_times,
    })
}

/// Samples a cohort: `h_i = exp(βᵀz_i)`, `T_i` by inverse transform of
/// `1 - S0(t)^{h_i}`, then censoring. Deterministic in `config.seed`.
pub fn generate_cohort(config: &SimulationConfig) -> Result<TruthBundle> {
    config.validate()?;
    let design = draw_design(config)?;
    draw_outcomes(config, &design, 0)
}

/// Fraction of `n_pairs` independent draws with `T_i > T_j`.
pub fn monte_carlo_win_probability(baseline: &BaselineSpec, h_i: f64, h_j: f64, n_pairs: usize, seed: u64) -> Result<f64> {
    baseline.validate()?;
    positive("h_i", h_i)?;
    positive("h_j", h_j)?;
    if n_pairs == 0 {
        return Err(Error::arg("n_pairs must be at least 1"));
    }
    let mut rng = substream(seed, Purpose::MonteCarlo, 0);
    let mut wins = 0usize;
    for _ in 0..n_pairs {
        let ui: f64 = Open01.sample(&mut rng);
        let uj: f64 = Open01.sample(&mut rng);
        if baseline.sample_time(h_i, ui) > baseline.sample_time(h_j, uj) {
            wins += 1;
        }
    }
    Ok(wins as f64 / n_pairs as f64)
}

/// How the ranking is chosen in [`monte_carlo_realized_ci`].
#[derive(Debug, Clone, PartialEq)]
pub enum ModelRule {
    /// Rank by the true hazards.
    TrueModel,
    /// Fit a Cox model once to the first simulated cohort and rank by its
    /// predicted hazards.
    FittedCox(CoxOptions),
    /// A caller-supplied ranking over the simulated ids.
    Fixed(PredictionModel),
}

/// Realized C-index of one fixed ranking across `n_reps` independent
/// redraws of outcomes, covariates and hazards held fixed. The mean
/// estimates the expected C-index of that ranking.
pub fn monte_carlo_realized_ci(
    config: &SimulationConfig,
    rule: &ModelRule,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if n_reps == 0 {
        return Err(Error::arg("n_reps must be at least 1"));
    }
    let design = draw_design(config)?;
    let first = draw_outcomes(config, &design, 0)?;
    let model = match rule {
        ModelRule::TrueModel => PredictionModel::from_hazard_ranking(&first.true_hazards),
        ModelRule::FittedCox(opts) => {
            let fit = fit_cox(&first.cohort, opts)?;
            PredictionModel::from_hazard_ranking(&predict_hazard_ratios(&fit, &first.cohort)?)
        }
        ModelRule::Fixed(model) => model.clone(),
    };
    let outcome_config = SimulationConfig {
        seed: crate::rng::child_seed(config.seed, seed),
        ..config.clone()
    };
    (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = draw_outcomes(&outcome_config, &design, rep as u64 + 1)?;
            c_index(&bundle.cohort, &model).map(|(ci, _)| ci)
        })
        .collect()
}
