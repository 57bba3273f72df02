//! Python bindings. Cohorts, baselines and Cox fits are classes; reports and
//! study results come back as plain dicts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use survdisc::baseline::Clamp;
use survdisc::cohort::{RawRecord, ValidationOptions};
use survdisc::csvio::{read_cohort_path, write_cohort_csv};
use survdisc::{
    breslow_baseline, concordance, invert_hazard, kaplan_meier, stats, Error, HazardAssignment, PredictionModel,
    Provenance,
};

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: for<'de> serde::Deserialize<'de>>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if let Ok(s) = value.extract::<String>() {
        s
    } else {
        py.import("json")?.call_method1("dumps", (value,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Validated survival cohort.
#[pyclass(name = "Cohort", module = "survdisc", frozen)]
struct PyCohort {
    inner: survdisc::Cohort,
}

#[pymethods]
impl PyCohort {
    #[new]
    #[pyo3(signature = (ids, times, events, groups, covariates=None, covariate_names=None))]
    fn new(
        ids: Vec<String>,
        times: Vec<f64>,
        events: Vec<bool>,
        groups: Vec<String>,
        covariates: Option<Vec<Vec<f64>>>,
        covariate_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let m = ids.len();
        if times.len() != m || events.len() != m || groups.len() != m {
            return Err(PyValueError::new_err("ids, times, events and groups must have equal length"));
        }
        let covariates = covariates.unwrap_or_else(|| vec![Vec::new(); m]);
        if covariates.len() != m {
            return Err(PyValueError::new_err("one covariate row per member"));
        }
        let dim = covariates.first().map_or(0, Vec::len);
        let names = covariate_names.unwrap_or_else(|| (0..dim).map(|k| format!("z{k}")).collect());
        let raw = ids
            .into_iter()
            .zip(times)
            .zip(events)
            .zip(groups)
            .zip(covariates)
            .map(|((((id, t), e), g), z)| RawRecord {
                id,
                time: Some(t),
                event: Some(e),
                group: Some(g),
                covariates: z.into_iter().map(Some).collect(),
                origin_time: None,
            })
            .collect();
        let v = survdisc::validate_cohort(raw, &names, &ValidationOptions::default()).map_err(py_err)?;
        if v.drops.total_dropped() > 0 {
            return Err(PyValueError::new_err(format!("invalid records: {:?}", v.drops.dropped)));
        }
        Ok(Self { inner: v.cohort })
    }

    /// Reads a cohort CSV; records with missing or invalid fields are dropped.
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        let csv = read_cohort_path(&path, &ValidationOptions::default()).map_err(py_err)?;
        Ok(Self {
            inner: csv.validated.cohort,
        })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(path)?;
        write_cohort_csv(&self.inner, f).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cohort(members={}, events={}, groups={:?})",
            self.inner.len(),
            self.inner.event_count(),
            self.inner.group_levels()
        )
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    #[getter]
    fn events(&self) -> Vec<bool> {
        self.inner.events()
    }

    #[getter]
    fn groups(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.group.clone()).collect()
    }

    #[getter]
    fn group_levels(&self) -> Vec<String> {
        self.inner.group_levels().to_vec()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    #[getter]
    fn covariates(&self) -> Vec<Vec<f64>> {
        self.inner.records().iter().map(|r| r.covariates.clone()).collect()
    }
}

/// Step baseline survival curve.
#[pyclass(name = "BaselineSurvival", module = "survdisc", frozen)]
struct PyBaseline {
    inner: survdisc::BaselineSurvival,
}

#[pymethods]
impl PyBaseline {
    #[new]
    #[pyo3(signature = (knot_times, values, horizon, tail_value=None))]
    fn new(knot_times: Vec<f64>, values: Vec<f64>, horizon: f64, tail_value: Option<f64>) -> PyResult<Self> {
        let tail = tail_value.or(values.last().copied()).unwrap_or(1.0);
        survdisc::BaselineSurvival::new(knot_times, values, horizon, tail)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn kaplan_meier(cohort: &PyCohort) -> PyResult<Self> {
        kaplan_meier(&cohort.inner).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn breslow(cohort: &PyCohort, coefficients: Vec<f64>) -> PyResult<Self> {
        breslow_baseline(&cohort.inner, &coefficients)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn survival_at(&self, t: f64) -> f64 {
        self.inner.survival_at(t)
    }

    /// Mean survival up to the horizon for hazard ratio `hazard`.
    fn restricted_mean(&self, hazard: f64) -> PyResult<f64> {
        survdisc::restricted_mean(&self.inner, hazard).map_err(py_err)
    }

    /// `(hazard, clamped, residual)` with `clamped` one of "none", "at_min", "at_max".
    #[pyo3(signature = (target_time, tolerance=1e-8))]
    fn invert(&self, target_time: f64, tolerance: f64) -> PyResult<(f64, &'static str, f64)> {
        let r = invert_hazard(&self.inner, target_time, tolerance).map_err(py_err)?;
        let clamp = match r.clamped {
            Clamp::None => "none",
            Clamp::AtMin => "at_min",
            Clamp::AtMax => "at_max",
        };
        Ok((r.hazard, clamp, r.residual))
    }

    /// Hazard per member, inverted from times of observation.
    #[pyo3(signature = (cohort, tolerance=1e-8))]
    fn observed_hazards(&self, cohort: &PyCohort, tolerance: f64) -> PyResult<BTreeMap<String, f64>> {
        survdisc::observed_hazards(&cohort.inner, &self.inner, tolerance)
            .map(|o| o.hazards.rates().clone())
            .map_err(py_err)
    }

    #[getter]
    fn knot_times(&self) -> Vec<f64> {
        self.inner.knot_times().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }
}

/// Fitted Cox proportional-hazards model.
#[pyclass(name = "CoxFit", module = "survdisc", frozen)]
struct PyCoxFit {
    inner: survdisc::CoxFit,
}

#[pymethods]
impl PyCoxFit {
    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn standard_errors(&self) -> Vec<f64> {
        self.inner.standard_errors.clone()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    /// `exp(βᵀz)` per member.
    fn hazard_ratios(&self, cohort: &PyCohort) -> PyResult<BTreeMap<String, f64>> {
        survdisc::predict_hazard_ratios(&self.inner, &cohort.inner)
            .map(|h| h.rates().clone())
            .map_err(py_err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

#[pyfunction]
#[pyo3(signature = (cohort, ties="breslow"))]
fn fit_cox(cohort: &PyCohort, ties: &str) -> PyResult<PyCoxFit> {
    let tie_method = match ties {
        "breslow" => survdisc::TieMethod::Breslow,
        "efron" => survdisc::TieMethod::Efron,
        other => return Err(PyValueError::new_err(format!("unknown tie method {other:?}"))),
    };
    let options = survdisc::CoxOptions {
        tie_method,
        ..Default::default()
    };
    survdisc::fit_cox(&cohort.inner, &options)
        .map(|inner| PyCoxFit { inner })
        .map_err(py_err)
}

fn model(predictions: BTreeMap<String, f64>) -> PyResult<PredictionModel> {
    PredictionModel::new(predictions).map_err(py_err)
}

fn hazards(rates: BTreeMap<String, f64>) -> PyResult<HazardAssignment> {
    HazardAssignment::new(rates, Provenance::ObservedInverted).map_err(py_err)
}

/// Probability that member `i` outlives member `j`.
#[pyfunction]
fn pairwise_win_probability(h_i: f64, h_j: f64) -> PyResult<f64> {
    survdisc::pairwise_win_probability(h_i, h_j).map_err(py_err)
}

/// Harrell's C-index of predicted survival values keyed by member id.
#[pyfunction]
fn c_index(cohort: &PyCohort, predictions: BTreeMap<String, f64>) -> PyResult<f64> {
    survdisc::c_index(&cohort.inner, &model(predictions)?)
        .map(|(ci, _)| ci)
        .map_err(py_err)
}

#[pyfunction]
fn expected_c_index(
    cohort: &PyCohort,
    hazards_by_id: BTreeMap<String, f64>,
    predictions: BTreeMap<String, f64>,
) -> PyResult<f64> {
    survdisc::expected_c_index(&cohort.inner, &hazards(hazards_by_id)?, &model(predictions)?).map_err(py_err)
}

#[pyfunction]
fn sub_c_index(cohort: &PyCohort, predictions: BTreeMap<String, f64>, label: &str) -> PyResult<f64> {
    survdisc::sub_c_index(&cohort.inner, &model(predictions)?, label).map_err(py_err)
}

#[pyfunction]
fn discrimination_ratio(ci: f64, eci: f64) -> PyResult<f64> {
    survdisc::discrimination_ratio(ci, eci).map_err(py_err)
}

/// Full report for `predictions` against the bound that ranks by observed
/// times with hazards `star_hazards`.
#[pyfunction]
#[pyo3(signature = (cohort, predictions, star_hazards, scenario="all"))]
fn concordance_report<'py>(
    py: Python<'py>,
    cohort: &PyCohort,
    predictions: BTreeMap<String, f64>,
    star_hazards: BTreeMap<String, f64>,
    scenario: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let star = PredictionModel::from_observed_times(&cohort.inner);
    let report = concordance::concordance_report(
        &cohort.inner,
        &model(predictions)?,
        &star,
        &hazards(star_hazards)?,
        scenario,
    )
    .map_err(py_err)?;
    to_py(py, &report)
}

/// Two-sided exact sign test p-value.
#[pyfunction]
fn sign_test(differences: Vec<f64>) -> PyResult<f64> {
    stats::sign_test(&differences).map_err(py_err)
}

/// `(u, p_value)` of the two-sided Mann–Whitney test.
#[pyfunction]
fn mann_whitney(sample_a: Vec<f64>, sample_b: Vec<f64>) -> PyResult<(f64, f64)> {
    stats::mann_whitney(&sample_a, &sample_b)
        .map(|r| (r.u, r.p_value))
        .map_err(py_err)
}

/// Draws a synthetic cohort. `config` is a dict or JSON string; returns the
/// cohort and a dict of true hazards, event times and censoring times.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn simulate<'py>(py: Python<'py>, config: &Bound<'py, PyAny>, seed: Option<u64>) -> PyResult<(PyCohort, Bound<'py, PyAny>)> {
    let mut config: survdisc::SimulationConfig = from_json(py, config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let truth = survdisc::generate_cohort(&config).map_err(py_err)?;
    let extra = PyDict::new(py);
    extra.set_item("true_hazards", truth.true_hazards.rates().clone())?;
    extra.set_item("true_event_times", truth.true_event_times.clone())?;
    extra.set_item("censor_times", truth.censor_times.clone())?;
    Ok((PyCohort { inner: truth.cohort }, extra.into_any()))
}

/// Repeated-split study. `config` is a dict or JSON string with the study
/// fields; returns the full result as a dict.
#[pyfunction]
#[pyo3(signature = (cohort, config=None))]
fn run_study<'py>(py: Python<'py>, cohort: &PyCohort, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let study: survdisc::StudyConfig = match config {
        Some(c) => from_json(py, c)?,
        None => Default::default(),
    };
    let inner = cohort.inner.clone();
    let result = py.detach(move || survdisc::run_study(&inner, &study)).map_err(py_err)?;
    to_py(py, &result)
}

#[pymodule]
#[pyo3(name = "survdisc")]
fn survdisc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyBaseline>()?;
    m.add_class::<PyCoxFit>()?;
    m.add_function(wrap_pyfunction!(fit_cox, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_win_probability, m)?)?;
    m.add_function(wrap_pyfunction!(c_index, m)?)?;
    m.add_function(wrap_pyfunction!(expected_c_index, m)?)?;
    m.add_function(wrap_pyfunction!(sub_c_index, m)?)?;
    m.add_function(wrap_pyfunction!(discrimination_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(concordance_report, m)?)?;
    m.add_function(wrap_pyfunction!(sign_test, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyModule;

    #[test]
    fn module_round_trip() {
        Python::attach(|py| {
            let m = PyModule::new(py, "survdisc").unwrap();
            survdisc_module(&m).unwrap();
            let locals = PyDict::new(py);
            locals.set_item("sd", &m).unwrap();
            py.run(
                cr#"
c = sd.Cohort(["a", "b", "c"], [1.0, 2.0, 3.0], [True, True, False], ["g", "g", "h"])
assert sd.c_index(c, {"a": 1.0, "b": 2.0, "c": 3.0}) == 1.0
assert sd.c_index(c, {"a": 3.0, "b": 2.0, "c": 1.0}) == 0.0
try:
    sd.Cohort(["a", "a"], [1.0, 2.0], [True, True], ["g", "g"])
    raise AssertionError("duplicate id accepted")
except ValueError:
    pass
"#,
                None,
                Some(&locals),
            )
            .unwrap();
        });
    }
}
