//! Survival records, cohorts and ingestion-level validation.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One member of a population: observed time, event flag, predictors and
/// subgroup membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    /// Time of observation, `min(event time, censoring time)`.
    pub observed_time: f64,
    /// `true` when the event was observed before censoring.
    pub event: bool,
    pub covariates: Vec<f64>,
    pub group: String,
    /// Entry time (e.g. transplant date). Carried through, never used in a
    /// computation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_time: Option<f64>,
}

/// An ordered, validated collection of records sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    records: Vec<SurvivalRecord>,
    covariate_names: Vec<String>,
    group_levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_unit: Option<String>,
}

impl Cohort {
    /// Builds a cohort; group levels are taken in order of first appearance.
    pub fn new(records: Vec<SurvivalRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let mut levels: Vec<String> = Vec::new();
        for r in &records {
            if !levels.contains(&r.group) {
                levels.push(r.group.clone());
            }
        }
        Self::with_group_levels(records, covariate_names, levels)
    }

    pub fn with_group_levels(
        records: Vec<SurvivalRecord>,
        covariate_names: Vec<String>,
        group_levels: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let dim = covariate_names.len();
        let level_set: HashSet<&str> = group_levels.iter().map(String::as_str).collect();
        if level_set.len() != group_levels.len() {
            return Err(Error::Validation("group levels are not distinct".into()));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if !(r.observed_time.is_finite() && r.observed_time > 0.0) {
                return Err(Error::Validation(format!(
                    "record {}: observed time {} is not positive and finite",
                    r.id, r.observed_time
                )));
            }
            if r.covariates.len() != dim {
                return Err(Error::Validation(format!(
                    "record {}: {} covariates, expected {dim}",
                    r.id,
                    r.covariates.len()
                )));
            }
            if r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("record {}: non-finite covariate", r.id)));
            }
            if !level_set.contains(r.group.as_str()) {
                return Err(Error::Validation(format!(
                    "record {}: group {:?} is not a declared level",
                    r.id, r.group
                )));
            }
        }
        Ok(Self {
            records,
            covariate_names,
            group_levels,
            time_unit: None,
        })
    }

    pub fn with_time_unit(mut self, unit: impl Into<String>) -> Self {
        self.time_unit = Some(unit.into());
        self
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn group_levels(&self) -> &[String] {
        &self.group_levels
    }

    pub fn time_unit(&self) -> Option<&str> {
        self.time_unit.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.observed_time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn max_time(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.observed_time)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index into `group_levels` for every record.
    pub fn group_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| {
                self.group_levels
                    .iter()
                    .position(|l| *l == r.group)
                    .expect("group level checked at construction")
            })
            .collect()
    }

    pub fn group_sizes(&self) -> BTreeMap<String, usize> {
        let mut sizes: BTreeMap<String, usize> =
            self.group_levels.iter().map(|l| (l.clone(), 0)).collect();
        for r in &self.records {
            *sizes.get_mut(&r.group).expect("declared level") += 1;
        }
        sizes
    }

    /// Records at `indices`, in the given order. Layout and group levels are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let records = indices
            .iter()
            .map(|&i| {
                self.records
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("record index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::with_group_levels(
            records,
            self.covariate_names.clone(),
            self.group_levels.clone(),
        )?;
        out.time_unit = self.time_unit.clone();
        Ok(out)
    }

    /// Applies `f` to every record. Used by transformations that keep ids
    /// and layout (perturbation, censoring).
    pub(crate) fn map_records(&self, f: impl FnMut(&SurvivalRecord) -> SurvivalRecord) -> Result<Self> {
        let records = self.records.iter().map(f).collect();
        let mut out = Self::with_group_levels(
            records,
            self.covariate_names.clone(),
            self.group_levels.clone(),
        )?;
        out.time_unit = self.time_unit.clone();
        Ok(out)
    }

    pub fn to_raw(&self) -> Vec<RawRecord> {
        self.records.iter().map(RawRecord::from).collect()
    }
}

/// A record as read from a file, before missing-value and range filtering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRecord {
    pub id: String,
    pub time: Option<f64>,
    pub event: Option<bool>,
    pub group: Option<String>,
    pub covariates: Vec<Option<f64>>,
    pub origin_time: Option<f64>,
}

impl From<&SurvivalRecord> for RawRecord {
    fn from(r: &SurvivalRecord) -> Self {
        Self {
            id: r.id.clone(),
            time: Some(r.observed_time),
            event: Some(r.event),
            group: Some(r.group.clone()),
            covariates: r.covariates.iter().copied().map(Some).collect(),
            origin_time: r.origin_time,
        }
    }
}

/// Inclusive bounds on one covariate column. Records outside are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub column: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    #[serde(default)]
    pub range_filters: Vec<RangeFilter>,
    #[serde(default)]
    pub time_unit: Option<String>,
}

pub const DROP_MISSING_PREDICTOR: &str = "missing predictor";
pub const DROP_MISSING_FIELD: &str = "missing field";
pub const DROP_NON_POSITIVE_TIME: &str = "non-positive time";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub input: usize,
    pub kept: usize,
    /// Reason → number of dropped records. Range drops use `"out of range: <column>"`.
    pub dropped: BTreeMap<String, usize>,
}

impl DropReport {
    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Validated {
    pub cohort: Cohort,
    pub drops: DropReport,
}

/// Filters raw records down to a cohort.
///
/// A record is dropped (first matching reason wins) when a predictor is
/// missing, when time, event or group is missing, when the time is not
/// positive and finite, or when a configured range filter fails. Duplicate
/// ids and wrong covariate counts are hard errors, as is an empty result.
pub fn validate_cohort(
    raw: Vec<RawRecord>,
    covariate_names: &[String],
    options: &ValidationOptions,
) -> Result<Validated> {
    let dim = covariate_names.len();
    let filters = options
        .range_filters
        .iter()
        .map(|f| {
            covariate_names
                .iter()
                .position(|n| *n == f.column)
                .map(|idx| (idx, f))
                .ok_or_else(|| Error::Validation(format!("range filter on unknown column {:?}", f.column)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut seen = HashSet::with_capacity(raw.len());
    let mut drops = DropReport {
        input: raw.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(Error::DuplicateId(r.id));
        }
        if r.covariates.len() != dim {
            return Err(Error::Validation(format!(
                "record {}: {} covariates, expected {dim}",
                r.id,
                r.covariates.len()
            )));
        }
        let reason = drop_reason(&r, &filters, covariate_names);
        if let Some(reason) = reason {
            *drops.dropped.entry(reason).or_insert(0) += 1;
            continue;
        }
        kept.push(SurvivalRecord {
            covariates: r.covariates.iter().map(|v| v.expect("checked")).collect(),
            observed_time: r.time.expect("checked"),
            event: r.event.expect("checked"),
            group: r.group.expect("checked"),
            id: r.id,
            origin_time: r.origin_time,
        });
    }
    drops.kept = kept.len();
    if kept.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut cohort = Cohort::new(kept, covariate_names.to_vec())?;
    cohort.time_unit = options.time_unit.clone();
    Ok(Validated { cohort, drops })
}

fn drop_reason(
    r: &RawRecord,
    filters: &[(usize, &RangeFilter)],
    names: &[String],
) -> Option<String> {
    if r.covariates.iter().any(|v| !matches!(v, Some(x) if x.is_finite())) {
        return Some(DROP_MISSING_PREDICTOR.into());
    }
    let (Some(time), Some(_), Some(group)) = (r.time, r.event, r.group.as_ref()) else {
        return Some(DROP_MISSING_FIELD.into());
    };
    if group.is_empty() {
        return Some(DROP_MISSING_FIELD.into());
    }
    if !(time.is_finite() && time > 0.0) {
        return Some(DROP_NON_POSITIVE_TIME.into());
    }
    for &(idx, f) in filters {
        let v = r.covariates[idx].expect("checked");
        if f.min.is_some_and(|lo| v < lo) || f.max.is_some_and(|hi| v > hi) {
            return Some(format!("out of range: {}", names[idx]));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, time: f64, cov: Vec<Option<f64>>) -> RawRecord {
        RawRecord {
            id: id.into(),
            time: Some(time),
            event: Some(true),
            group: Some("a".into()),
            covariates: cov,
            origin_time: None,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn valid_records_pass_untouched() {
        let input = vec![
            raw("1", 1.0, vec![Some(0.0), Some(1.0)]),
            raw("2", 2.0, vec![Some(1.0), Some(1.0)]),
            raw("3", 3.0, vec![Some(2.0), Some(0.0)]),
        ];
        let v = validate_cohort(input, &names(2), &ValidationOptions::default()).unwrap();
        assert_eq!(v.cohort.len(), 3);
        assert_eq!(v.drops.total_dropped(), 0);
    }

    #[test]
    fn missing_predictor_is_dropped() {
        let mut input: Vec<_> = (0..10)
            .map(|i| raw(&i.to_string(), 1.0 + i as f64, vec![Some(i as f64)]))
            .collect();
        input[4].covariates[0] = None;
        let v = validate_cohort(input, &names(1), &ValidationOptions::default()).unwrap();
        assert_eq!(v.cohort.len(), 9);
        assert_eq!(v.drops.dropped[DROP_MISSING_PREDICTOR], 1);
    }

    #[test]
    fn duplicate_ids_are_an_error() {
        let input = vec![raw("A", 1.0, vec![]), raw("A", 2.0, vec![])];
        let err = validate_cohort(input, &[], &ValidationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "A"));
    }

    #[test]
    fn range_filter_and_time_checks() {
        let input = vec![
            raw("1", 1.0, vec![Some(30.0)]),
            raw("2", 2.0, vec![Some(101.0)]),
            raw("3", 0.0, vec![Some(40.0)]),
            raw("4", 4.0, vec![Some(-1.0)]),
        ];
        let opts = ValidationOptions {
            range_filters: vec![RangeFilter {
                column: "age".into(),
                min: Some(0.0),
                max: Some(100.0),
            }],
            time_unit: Some("years".into()),
        };
        let v = validate_cohort(input, &["age".to_string()], &opts).unwrap();
        assert_eq!(v.cohort.len(), 1);
        assert_eq!(v.drops.dropped["out of range: age"], 2);
        assert_eq!(v.drops.dropped[DROP_NON_POSITIVE_TIME], 1);
        assert_eq!(v.cohort.time_unit(), Some("years"));
    }

    #[test]
    fn everything_dropped_is_empty_cohort() {
        let input = vec![raw("1", -1.0, vec![])];
        let err = validate_cohort(input, &[], &ValidationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCohort));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut input: Vec<_> = (0..6)
            .map(|i| raw(&i.to_string(), i as f64, vec![Some(i as f64 * 30.0)]))
            .collect();
        input[2].group = None;
        let opts = ValidationOptions {
            range_filters: vec![RangeFilter {
                column: "x0".into(),
                min: None,
                max: Some(100.0),
            }],
            time_unit: None,
        };
        let first = validate_cohort(input, &names(1), &opts).unwrap();
        assert!(first.cohort.len() < 6);
        let second = validate_cohort(first.cohort.to_raw(), &names(1), &opts).unwrap();
        assert_eq!(second.drops.total_dropped(), 0);
        assert_eq!(second.cohort, first.cohort);
    }

    #[test]
    fn subset_keeps_levels() {
        let recs = vec![
            SurvivalRecord {
                id: "a".into(),
                observed_time: 1.0,
                event: true,
                covariates: vec![],
                group: "g1".into(),
                origin_time: None,
            },
            SurvivalRecord {
                id: "b".into(),
                observed_time: 2.0,
                event: false,
                covariates: vec![],
                group: "g2".into(),
                origin_time: Some(2002.0),
            },
        ];
        let c = Cohort::new(recs, vec![]).unwrap();
        let s = c.subset(&[1]).unwrap();
        assert_eq!(s.group_levels(), &["g1".to_string(), "g2".to_string()]);
        assert_eq!(s.group_sizes()["g1"], 0);
        assert!(c.subset(&[]).is_err());
    }
}
