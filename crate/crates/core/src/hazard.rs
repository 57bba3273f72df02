//! Hazard-rate assignments and prediction models keyed by member id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Inverted from times of observation through a baseline survival curve.
    ObservedInverted,
    /// `exp(βᵀz)` from a fitted Cox model.
    ModelFitted,
    /// Simulator ground truth.
    TrueSynthetic,
}

/// Proportional hazard rate per member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardAssignment {
    rates: BTreeMap<String, f64>,
    provenance: Provenance,
}

impl HazardAssignment {
    pub fn new(rates: BTreeMap<String, f64>, provenance: Provenance) -> Result<Self> {
        if let Some((id, r)) = rates.iter().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::arg(format!("hazard for {id} is {r}, must be positive and finite")));
        }
        Ok(Self { rates, provenance })
    }

    /// Pairs `cohort` records with `rates` in order.
    pub fn from_aligned(cohort: &Cohort, rates: &[f64], provenance: Provenance) -> Result<Self> {
        if rates.len() != cohort.len() {
            return Err(Error::arg(format!(
                "{} rates for a cohort of {}",
                rates.len(),
                cohort.len()
            )));
        }
        let map = cohort
            .records()
            .iter()
            .zip(rates)
            .map(|(r, &h)| (r.id.clone(), h))
            .collect();
        Self::new(map, provenance)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn rates(&self) -> &BTreeMap<String, f64> {
        &self.rates
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.rates.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Rates in cohort record order; every member must be covered.
    pub fn aligned(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        aligned(&self.rates, cohort, "hazard")
    }
}

/// Predicted survival per member. Larger means longer predicted survival;
/// only the ordering matters to the concordance metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    predicted_survival: BTreeMap<String, f64>,
}

impl PredictionModel {
    pub fn new(predicted_survival: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((id, _)) = predicted_survival.iter().find(|(_, v)| v.is_nan()) {
            return Err(Error::arg(format!("prediction for {id} is NaN")));
        }
        Ok(Self { predicted_survival })
    }

    pub fn from_aligned(cohort: &Cohort, values: &[f64]) -> Result<Self> {
        if values.len() != cohort.len() {
            return Err(Error::arg(format!(
                "{} predictions for a cohort of {}",
                values.len(),
                cohort.len()
            )));
        }
        Self::new(
            cohort
                .records()
                .iter()
                .zip(values)
                .map(|(r, &v)| (r.id.clone(), v))
                .collect(),
        )
    }

    /// The retrospective model M*: members ranked by their own times of
    /// observation.
    pub fn from_observed_times(cohort: &Cohort) -> Self {
        Self {
            predicted_survival: cohort
                .records()
                .iter()
                .map(|r| (r.id.clone(), r.observed_time))
                .collect(),
        }
    }

    /// Score `-ln h`: strictly order-equivalent to the restricted mean
    /// survival under any baseline, without saturating for extreme rates.
    pub fn from_hazard_ranking(hazards: &HazardAssignment) -> Self {
        Self {
            predicted_survival: hazards
                .rates()
                .iter()
                .map(|(id, h)| (id.clone(), -h.ln()))
                .collect(),
        }
    }

    /// The same ranking read backwards.
    pub fn reversed(&self) -> Self {
        Self {
            predicted_survival: self
                .predicted_survival
                .iter()
                .map(|(id, v)| (id.clone(), -v))
                .collect(),
        }
    }

    pub fn predictions(&self) -> &BTreeMap<String, f64> {
        &self.predicted_survival
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.predicted_survival.get(id).copied()
    }

    pub fn aligned(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        aligned(&self.predicted_survival, cohort, "prediction")
    }
}

fn aligned(map: &BTreeMap<String, f64>, cohort: &Cohort, what: &str) -> Result<Vec<f64>> {
    cohort
        .records()
        .iter()
        .map(|r| {
            map.get(&r.id)
                .copied()
                .ok_or_else(|| Error::arg(format!("no {what} for member {}", r.id)))
        })
        .collect()
}
