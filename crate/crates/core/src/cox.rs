//! Cox proportional-hazards regression by Newton–Raphson on the partial
//! likelihood.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::baseline::{linear_predictor, BaselineSurvival};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::hazard::{HazardAssignment, PredictionModel, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxOptions {
    pub tie_method: TieMethod,
    pub max_iter: usize,
    /// Relative change in log-likelihood that ends the iteration.
    pub tolerance: f64,
    /// Max-norm of the score that ends the iteration.
    pub gradient_tolerance: f64,
    pub standardize: bool,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tie_method: TieMethod::Breslow,
            max_iter: 100,
            tolerance: 1e-9,
            gradient_tolerance: 1e-6,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub covariate_names: Vec<String>,
    /// On the original covariate scale.
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted step, starting at β = 0.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Score max-norm at the returned coefficients (standardized scale).
    pub gradient_norm: f64,
    pub tie_method: TieMethod,
    pub standardization: Standardization,
}

impl CoxFit {
    pub fn hazard_ratios(&self) -> Vec<f64> {
        self.coefficients.iter().map(|b| b.exp()).collect()
    }
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Design matrix sorted by descending time, grouped by tied times.
struct CoxData {
    p: usize,
    x: Vec<Vec<f64>>,
    events: Vec<bool>,
    // Half-open ranges into `x`/`events` of records sharing a time.
    blocks: Vec<(usize, usize)>,
}

impl CoxData {
    fn new(cohort: &Cohort, std: &Standardization) -> Self {
        let recs = cohort.records();
        let mut order: Vec<usize> = (0..recs.len()).collect();
        order.sort_by(|&a, &b| recs[b].observed_time.total_cmp(&recs[a].observed_time));
        let x = order
            .iter()
            .map(|&i| {
                recs[i]
                    .covariates
                    .iter()
                    .zip(std.means.iter().zip(&std.scales))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect();
        let events = order.iter().map(|&i| recs[i].event).collect();
        let mut blocks = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || recs[order[k]].observed_time != recs[order[start]].observed_time {
                blocks.push((start, k));
                start = k;
            }
        }
        Self {
            p: cohort.covariate_dim(),
            x,
            events,
            blocks,
        }
    }

    fn evaluate(&self, beta: &[f64], ties: TieMethod, derivatives: bool) -> Eval {
        let p = self.p;
        let eta: Vec<f64> = self.x.iter().map(|z| linear_predictor(beta, z)).collect();
        // Shifting every η by a constant leaves the partial likelihood unchanged.
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };

        let mut loglik = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);

        for &(start, end) in &self.blocks {
            let mut d = 0usize;
            let mut d0 = 0.0;
            let mut d1 = DVector::zeros(p);
            let mut d2 = DMatrix::zeros(p, p);
            for k in start..end {
                let w = (eta[k] - shift).exp();
                let z = DVector::from_column_slice(&self.x[k]);
                s0 += w;
                if derivatives {
                    s1.axpy(w, &z, 1.0);
                    s2.ger(w, &z, &z, 1.0);
                }
                if self.events[k] {
                    d += 1;
                    loglik += eta[k] - shift;
                    if derivatives {
                        grad += &z;
                        d0 += w;
                        d1.axpy(w, &z, 1.0);
                        d2.ger(w, &z, &z, 1.0);
                    } else {
                        d0 += w;
                    }
                }
            }
            if d == 0 {
                continue;
            }
            match ties {
                TieMethod::Breslow => {
                    let df = d as f64;
                    loglik -= df * s0.ln();
                    if derivatives {
                        let mean = &s1 / s0;
                        grad.axpy(-df, &mean, 1.0);
                        hess -= (&s2 / s0 - &mean * mean.transpose()) * df;
                    }
                }
                TieMethod::Efron => {
                    for r in 0..d {
                        let f = r as f64 / d as f64;
                        let a0 = s0 - f * d0;
                        loglik -= a0.ln();
                        if derivatives {
                            let a1 = &s1 - &d1 * f;
                            let a2 = &s2 - &d2 * f;
                            let mean = &a1 / a0;
                            grad -= &mean;
                            hess -= &a2 / a0 - &mean * mean.transpose();
                        }
                    }
                }
            }
        }
        Eval { loglik, grad, hess }
    }
}

fn identity_standardization(p: usize) -> Standardization {
    Standardization {
        means: vec![0.0; p],
        scales: vec![1.0; p],
    }
}

fn check_beta(cohort: &Cohort, beta: &[f64]) -> Result<()> {
    if beta.len() != cohort.covariate_dim() {
        return Err(Error::arg(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            cohort.covariate_dim()
        )));
    }
    if cohort.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    Ok(())
}

/// Log partial likelihood at `coefficients` (original covariate scale).
pub fn partial_loglik(cohort: &Cohort, coefficients: &[f64], ties: TieMethod) -> Result<f64> {
    check_beta(cohort, coefficients)?;
    let data = CoxData::new(cohort, &identity_standardization(coefficients.len()));
    Ok(data.evaluate(coefficients, ties, false).loglik)
}

/// Gradient of [`partial_loglik`] with respect to the coefficients.
pub fn partial_loglik_score(cohort: &Cohort, coefficients: &[f64], ties: TieMethod) -> Result<Vec<f64>> {
    check_beta(cohort, coefficients)?;
    let data = CoxData::new(cohort, &identity_standardization(coefficients.len()));
    Ok(data.evaluate(coefficients, ties, true).grad.iter().copied().collect())
}

fn standardization(cohort: &Cohort, standardize: bool) -> Result<Standardization> {
    let p = cohort.covariate_dim();
    if !standardize {
        return Ok(identity_standardization(p));
    }
    let n = cohort.len() as f64;
    let mut means = vec![0.0; p];
    for r in cohort.records() {
        for (m, v) in means.iter_mut().zip(&r.covariates) {
            *m += v / n;
        }
    }
    let mut scales = vec![0.0; p];
    for r in cohort.records() {
        for ((s, v), m) in scales.iter_mut().zip(&r.covariates).zip(&means) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for (k, s) in scales.iter_mut().enumerate() {
        *s = s.sqrt();
        if !(*s > 1e-12 * (1.0 + means[k].abs())) {
            return Err(Error::arg(format!(
                "covariate {:?} is constant",
                cohort.covariate_names()[k]
            )));
        }
    }
    Ok(Standardization { means, scales })
}

fn information_inverse(hess: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let info = -hess;
    let p = info.nrows();
    if p == 0 {
        return Ok(info);
    }
    let eig = SymmetricEigen::new(info.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::CollinearPredictors);
    }
    info.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::CollinearPredictors)
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Fits β by Newton–Raphson with step halving. Non-convergence is reported
/// through `converged = false`, not as an error.
pub fn fit_cox(cohort: &Cohort, options: &CoxOptions) -> Result<CoxFit> {
    if cohort.event_count() < 2 {
        return Err(Error::arg("at least two events are needed to fit a Cox model"));
    }
    let p = cohort.covariate_dim();
    let std = standardization(cohort, options.standardize)?;
    let data = CoxData::new(cohort, &std);
    let ties = options.tie_method;

    let mut beta = vec![0.0; p];
    let mut eval = data.evaluate(&beta, ties, true);
    let mut trace = vec![eval.loglik];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=options.max_iter {
        if max_norm(&eval.grad) <= options.gradient_tolerance {
            converged = true;
            break;
        }
        let step = information_inverse(&eval.hess)? * &eval.grad;
        let mut scale = 1.0;
        let mut candidate;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect::<Vec<_>>();
            cand_ll = data.evaluate(&candidate, ties, false).loglik;
            if cand_ll.is_finite() && cand_ll >= eval.loglik {
                break;
            }
            halvings += 1;
            if halvings > 50 {
                // No ascent direction left at machine precision.
                candidate = beta.clone();
                cand_ll = eval.loglik;
                break;
            }
            scale *= 0.5;
        }
        iterations = iter;
        let rel = (cand_ll - eval.loglik).abs() / eval.loglik.abs().max(f64::MIN_POSITIVE);
        beta = candidate;
        eval = data.evaluate(&beta, ties, true);
        trace.push(eval.loglik);
        if rel <= options.tolerance || max_norm(&eval.grad) <= options.gradient_tolerance {
            converged = true;
            break;
        }
    }

    let cov = information_inverse(&eval.hess)?;
    let coefficients = beta.iter().zip(&std.scales).map(|(b, s)| b / s).collect();
    let standard_errors = (0..p).map(|k| cov[(k, k)].sqrt() / std.scales[k]).collect();
    Ok(CoxFit {
        covariate_names: cohort.covariate_names().to_vec(),
        coefficients,
        standard_errors,
        log_likelihood: eval.loglik,
        log_likelihood_trace: trace,
        iterations,
        converged,
        gradient_norm: max_norm(&eval.grad),
        tie_method: ties,
        standardization: std,
    })
}

/// `exp(βᵀz)` for every member.
pub fn predict_hazard_ratios(fit: &CoxFit, cohort: &Cohort) -> Result<HazardAssignment> {
    if !fit.converged {
        return Err(Error::NotConverged(fit.iterations));
    }
    if fit.coefficients.len() != cohort.covariate_dim() {
        return Err(Error::arg(format!(
            "fit has {} coefficients, cohort has {} covariates",
            fit.coefficients.len(),
            cohort.covariate_dim()
        )));
    }
    let rates: Vec<f64> = cohort
        .records()
        .iter()
        .map(|r| linear_predictor(&fit.coefficients, &r.covariates).exp())
        .collect();
    HazardAssignment::from_aligned(cohort, &rates, Provenance::ModelFitted)
}

/// Predicted survival = restricted mean of `S_0(t)^h` for each member.
pub fn model_from_hazards(hazards: &HazardAssignment, baseline: &BaselineSurvival) -> PredictionModel {
    PredictionModel::new(
        hazards
            .rates()
            .iter()
            .map(|(id, &h)| (id.clone(), baseline.restricted_mean(h)))
            .collect(),
    )
    .expect("restricted means are finite")
}
