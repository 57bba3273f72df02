//! Baseline survival estimation and the restricted-mean ↔ hazard mapping.
//!
//! Under proportional hazards a member with rate `h` has survival
//! `S_0(t)^h` and expected survival `φ(h) = ∫_0^τ S_0(t)^h dt`. For a step
//! baseline the integral is a finite sum, so `φ` is evaluated exactly and
//! inverted on `log h` by Newton steps kept inside a bisection bracket.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::hazard::{HazardAssignment, Provenance};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineRepr {
    knot_times: Vec<f64>,
    values: Vec<f64>,
    horizon: f64,
    tail_value: f64,
}

/// Right-continuous, non-increasing step survival function on `[0, τ]`.
///
/// `S_0(t) = 1` before the first knot, `values[j]` on `[t_j, t_{j+1})` and
/// `tail_value` on `[t_k, τ]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BaselineRepr", into = "BaselineRepr")]
pub struct BaselineSurvival {
    knot_times: Vec<f64>,
    values: Vec<f64>,
    horizon: f64,
    tail_value: f64,
    // Cached integrand: φ(h) = flat + Σ width·exp(h·ln s).
    flat: f64,
    segments: Vec<(f64, f64)>,
}

impl PartialEq for BaselineSurvival {
    fn eq(&self, other: &Self) -> bool {
        self.knot_times == other.knot_times
            && self.values == other.values
            && self.horizon == other.horizon
            && self.tail_value == other.tail_value
    }
}

impl TryFrom<BaselineRepr> for BaselineSurvival {
    type Error = Error;

    fn try_from(r: BaselineRepr) -> Result<Self> {
        Self::new(r.knot_times, r.values, r.horizon, r.tail_value)
    }
}

impl From<BaselineSurvival> for BaselineRepr {
    fn from(b: BaselineSurvival) -> Self {
        Self {
            knot_times: b.knot_times,
            values: b.values,
            horizon: b.horizon,
            tail_value: b.tail_value,
        }
    }
}

impl BaselineSurvival {
    pub fn new(knot_times: Vec<f64>, values: Vec<f64>, horizon: f64, tail_value: f64) -> Result<Self> {
        if knot_times.len() != values.len() {
            return Err(Error::arg("knot_times and values differ in length"));
        }
        if knot_times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::arg("knot times must be positive and finite"));
        }
        if knot_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("knot times must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("survival values must lie in [0, 1]"));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::arg("survival values must be non-increasing"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::arg("horizon must be positive and finite"));
        }
        if knot_times.last().is_some_and(|&t| horizon < t) {
            return Err(Error::arg("horizon precedes the last knot"));
        }
        let last = values.last().copied().unwrap_or(1.0);
        if !(0.0..=last).contains(&tail_value) {
            return Err(Error::arg("tail value must lie in [0, last survival value]"));
        }

        let mut flat = knot_times.first().copied().unwrap_or(horizon);
        let mut segments = Vec::with_capacity(knot_times.len());
        for j in 0..knot_times.len() {
            let (end, s) = if j + 1 < knot_times.len() {
                (knot_times[j + 1], values[j])
            } else {
                (horizon, tail_value)
            };
            let width = end - knot_times[j];
            if width <= 0.0 || s == 0.0 {
                continue;
            }
            if s == 1.0 {
                flat += width;
            } else {
                segments.push((width, s.ln()));
            }
        }
        Ok(Self {
            knot_times,
            values,
            horizon,
            tail_value,
            flat,
            segments,
        })
    }

    /// Step approximation of a continuous survival function on `n` equal
    /// cells of `[0, horizon]`, each cell taking the midpoint value.
    pub fn from_survival_fn(f: impl Fn(f64) -> f64, horizon: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::arg("need at least two cells"));
        }
        let dt = horizon / n as f64;
        let mut knots = Vec::with_capacity(n - 1);
        let mut values = Vec::with_capacity(n - 1);
        let mut prev = 1.0_f64;
        for j in 1..n {
            let v = f((j as f64 + 0.5) * dt).clamp(0.0, prev);
            knots.push(j as f64 * dt);
            values.push(v);
            prev = v;
        }
        Self::new(knots, values, horizon, prev)
    }

    /// Same curve integrated to a different horizon (must not precede the last knot).
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(
            self.knot_times.clone(),
            self.values.clone(),
            horizon,
            self.tail_value,
        )
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tail_value(&self) -> f64 {
        self.tail_value
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        match self.knot_times.partition_point(|&k| k <= t) {
            0 => 1.0,
            j if j == self.knot_times.len() => self.tail_value,
            j => self.values[j - 1],
        }
    }

    /// `φ(h) = ∫_0^τ S_0(t)^h dt`, exact for the step function.
    pub fn restricted_mean(&self, hazard: f64) -> f64 {
        self.flat
            + self
                .segments
                .iter()
                .map(|&(w, ln_s)| w * (hazard * ln_s).exp())
                .sum::<f64>()
    }

    /// `φ(h)` and its derivative with respect to `ln h`.
    fn restricted_mean_with_slope(&self, hazard: f64) -> (f64, f64) {
        let (mut phi, mut slope) = (self.flat, 0.0);
        for &(w, ln_s) in &self.segments {
            let term = w * (hazard * ln_s).exp();
            phi += term;
            slope += term * ln_s;
        }
        (phi, hazard * slope)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "survival"]).map_err(csv_err)?;
        for (t, s) in self.knot_times.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), s.to_string()]).map_err(csv_err)?;
        }
        // Final row carries the horizon and the tail value.
        wtr.write_record([self.horizon.to_string(), self.tail_value.to_string()])
            .map_err(csv_err)?;
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Csv {
                        row: i + 2,
                        message: "expected two numeric fields".into(),
                    })
            };
            rows.push((parse(0)?, parse(1)?));
        }
        let (horizon, tail) = rows.pop().ok_or(Error::Csv {
            row: 1,
            message: "baseline csv has no rows".into(),
        })?;
        let (knots, values) = rows.into_iter().unzip();
        Self::new(knots, values, horizon, tail)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Csv {
        row,
        message: e.to_string(),
    }
}

/// Standalone form of [`BaselineSurvival::restricted_mean`].
pub fn restricted_mean(baseline: &BaselineSurvival, hazard: f64) -> Result<f64> {
    if !(hazard.is_finite() && hazard > 0.0) {
        return Err(Error::arg(format!("hazard {hazard} must be positive")));
    }
    Ok(baseline.restricted_mean(hazard))
}

/// Sorted distinct event times with event counts and at-risk weights.
struct RiskTable {
    times: Vec<f64>,
    events: Vec<f64>,
    at_risk: Vec<f64>,
}

fn risk_table(cohort: &Cohort, weights: &[f64]) -> Result<RiskTable> {
    if cohort.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    let recs = cohort.records();
    let mut order: Vec<usize> = (0..recs.len()).collect();
    order.sort_by(|&a, &b| recs[a].observed_time.total_cmp(&recs[b].observed_time));

    let mut table = RiskTable {
        times: Vec::new(),
        events: Vec::new(),
        at_risk: Vec::new(),
    };
    // Walk backwards so the at-risk sum accumulates in a fixed order.
    let mut risk = 0.0;
    let mut pos = order.len();
    while pos > 0 {
        let t = recs[order[pos - 1]].observed_time;
        let mut d = 0.0;
        while pos > 0 && recs[order[pos - 1]].observed_time == t {
            let i = order[pos - 1];
            risk += weights[i];
            if recs[i].event {
                d += 1.0;
            }
            pos -= 1;
        }
        if d > 0.0 {
            table.times.push(t);
            table.events.push(d);
            table.at_risk.push(risk);
        }
    }
    table.times.reverse();
    table.events.reverse();
    table.at_risk.reverse();
    Ok(table)
}

/// Product-limit estimate over the cohort's event times. Horizon is the
/// largest observed time; the last value carries to the horizon.
pub fn kaplan_meier(cohort: &Cohort) -> Result<BaselineSurvival> {
    let table = risk_table(cohort, &vec![1.0; cohort.len()])?;
    let mut s = 1.0;
    let values: Vec<f64> = table
        .events
        .iter()
        .zip(&table.at_risk)
        .map(|(d, n)| {
            s *= 1.0 - d / n;
            s
        })
        .collect();
    let tail = *values.last().expect("at least one event");
    BaselineSurvival::new(table.times, values, cohort.max_time(), tail)
}

/// Breslow estimate of the baseline (z = 0) survival, `exp(-H_0(t))` with
/// `H_0(t) = Σ_{t_j ≤ t} d_j / Σ_{risk set} exp(βᵀz)`.
pub fn breslow_baseline(cohort: &Cohort, coefficients: &[f64]) -> Result<BaselineSurvival> {
    if coefficients.len() != cohort.covariate_dim() {
        return Err(Error::arg(format!(
            "{} coefficients for {} covariates",
            coefficients.len(),
            cohort.covariate_dim()
        )));
    }
    let weights: Vec<f64> = cohort
        .records()
        .iter()
        .map(|r| linear_predictor(coefficients, &r.covariates).exp())
        .collect();
    let table = risk_table(cohort, &weights)?;
    let mut cum = 0.0;
    let values: Vec<f64> = table
        .events
        .iter()
        .zip(&table.at_risk)
        .map(|(d, w)| {
            cum += d / w;
            (-cum).exp()
        })
        .collect();
    let tail = *values.last().expect("at least one event");
    BaselineSurvival::new(table.times, values, cohort.max_time(), tail)
}

pub(crate) fn linear_predictor(beta: &[f64], z: &[f64]) -> f64 {
    beta.iter().zip(z).map(|(b, x)| b * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    None,
    AtMin,
    AtMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub hazard: f64,
    pub clamped: Clamp,
    /// `|φ(hazard) - target|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    pub tolerance: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_iter: usize,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            h_min: 1e-12,
            h_max: 1e12,
            max_iter: 200,
        }
    }
}

/// Hazard whose restricted mean equals `target_time`, with default bounds.
pub fn invert_hazard(baseline: &BaselineSurvival, target_time: f64, tolerance: f64) -> Result<InversionResult> {
    invert_hazard_with(
        baseline,
        target_time,
        &InversionOptions {
            tolerance,
            ..Default::default()
        },
    )
}

pub fn invert_hazard_with(
    baseline: &BaselineSurvival,
    target_time: f64,
    opts: &InversionOptions,
) -> Result<InversionResult> {
    if !(target_time.is_finite() && target_time > 0.0) {
        return Err(Error::arg(format!("target time {target_time} must be positive")));
    }
    if !(opts.h_min > 0.0 && opts.h_min < opts.h_max && opts.h_max.is_finite()) {
        return Err(Error::arg("need 0 < h_min < h_max < ∞"));
    }
    let phi_low_h = baseline.restricted_mean(opts.h_min);
    if target_time >= phi_low_h {
        return Ok(InversionResult {
            hazard: opts.h_min,
            clamped: Clamp::AtMin,
            residual: target_time - phi_low_h,
        });
    }
    let phi_high_h = baseline.restricted_mean(opts.h_max);
    if target_time <= phi_high_h {
        return Ok(InversionResult {
            hazard: opts.h_max,
            clamped: Clamp::AtMax,
            residual: phi_high_h - target_time,
        });
    }

    let (mut lo, mut hi) = (opts.h_min.ln(), opts.h_max.ln());
    let mut best = InversionResult {
        hazard: opts.h_min,
        clamped: Clamp::None,
        residual: f64::INFINITY,
    };
    let mut x = 0.0f64.clamp(lo, hi);
    for _ in 0..opts.max_iter {
        let h = x.exp();
        let (phi, slope) = baseline.restricted_mean_with_slope(h);
        let residual = (phi - target_time).abs();
        if residual < best.residual {
            best.hazard = h;
            best.residual = residual;
        }
        if residual <= opts.tolerance {
            break;
        }
        if phi > target_time {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - (phi - target_time) / slope;
        x = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedHazards {
    pub hazards: HazardAssignment,
    pub clamped_at_min: usize,
    pub clamped_at_max: usize,
    pub max_residual: f64,
}

/// Inverts every member's time of observation into a hazard rate (`h*`).
pub fn observed_hazards(cohort: &Cohort, baseline: &BaselineSurvival, tolerance: f64) -> Result<ObservedHazards> {
    let opts = InversionOptions {
        tolerance,
        ..Default::default()
    };
    let mut rates = Vec::with_capacity(cohort.len());
    let (mut at_min, mut at_max) = (0, 0);
    let mut max_residual: f64 = 0.0;
    for r in cohort.records() {
        let inv = invert_hazard_with(baseline, r.observed_time, &opts)?;
        match inv.clamped {
            Clamp::AtMin => at_min += 1,
            Clamp::AtMax => at_max += 1,
            Clamp::None => max_residual = max_residual.max(inv.residual),
        }
        rates.push(inv.hazard);
    }
    Ok(ObservedHazards {
        hazards: HazardAssignment::from_aligned(cohort, &rates, Provenance::ObservedInverted)?,
        clamped_at_min: at_min,
        clamped_at_max: at_max,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalRecord;
    use approx::assert_abs_diff_eq;

    fn cohort(rows: &[(f64, bool, f64)]) -> Cohort {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, e, z))| SurvivalRecord {
                id: i.to_string(),
                observed_time: t,
                event: e,
                covariates: vec![z],
                group: "all".into(),
                origin_time: None,
            })
            .collect();
        Cohort::new(recs, vec!["z".into()]).unwrap()
    }

    fn step() -> BaselineSurvival {
        BaselineSurvival::new(vec![1.0], vec![0.5], 2.0, 0.5).unwrap()
    }

    #[test]
    fn km_with_censoring() {
        let km = kaplan_meier(&cohort(&[(1.0, true, 0.0), (2.0, false, 0.0), (3.0, true, 0.0)])).unwrap();
        assert_eq!(km.knot_times(), &[1.0, 3.0]);
        assert_abs_diff_eq!(km.values()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(km.values()[1], 0.0);
        assert_eq!(km.horizon(), 3.0);
        assert_eq!(km.tail_value(), 0.0);
    }

    #[test]
    fn km_without_censoring_is_empirical() {
        let km = kaplan_meier(&cohort(&[
            (4.0, true, 0.0),
            (1.0, true, 0.0),
            (3.0, true, 0.0),
            (2.0, true, 0.0),
        ]))
        .unwrap();
        assert_eq!(km.values(), &[0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn km_tail_carries_last_value() {
        let km = kaplan_meier(&cohort(&[(1.0, true, 0.0), (5.0, false, 0.0)])).unwrap();
        assert_eq!(km.horizon(), 5.0);
        assert_eq!(km.tail_value(), 0.5);
        assert_eq!(km.survival_at(4.9), 0.5);
        assert_eq!(km.survival_at(0.5), 1.0);
    }

    #[test]
    fn no_events_is_an_error() {
        let c = cohort(&[(5.0, false, 0.0)]);
        assert!(matches!(kaplan_meier(&c), Err(Error::NoEvents)));
        assert!(matches!(breslow_baseline(&c, &[0.0]), Err(Error::NoEvents)));
    }

    #[test]
    fn breslow_hand_computed() {
        // (t, δ, z): (1,1,1), (2,0,0), (3,1,0) with β = ln 2.
        // t=1: risk set weights 2 + 1 + 1 = 4 → ΔH = 1/4.
        // t=3: risk set {z=0} weight 1 → ΔH = 1.
        let c = cohort(&[(1.0, true, 1.0), (2.0, false, 0.0), (3.0, true, 0.0)]);
        let b = breslow_baseline(&c, &[2f64.ln()]).unwrap();
        assert_eq!(b.knot_times(), &[1.0, 3.0]);
        assert_abs_diff_eq!(b.values()[0], (-0.25f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.values()[1], (-1.25f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn breslow_with_ties_counts_all_deaths() {
        let c = cohort(&[(1.0, true, 0.0), (1.0, true, 0.0), (2.0, true, 0.0)]);
        let b = breslow_baseline(&c, &[0.0]).unwrap();
        assert_abs_diff_eq!(b.values()[0], (-2.0f64 / 3.0).exp(), epsilon = 1e-15);
    }

    #[test]
    fn restricted_mean_step_sums() {
        assert_abs_diff_eq!(step().restricted_mean(1.0), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(step().restricted_mean(2.0), 1.25, epsilon = 1e-15);
        assert!(restricted_mean(&step(), 0.0).is_err());
    }

    #[test]
    fn restricted_mean_exponential() {
        let b = BaselineSurvival::from_survival_fn(|t| (-t).exp(), 50.0, 200_000).unwrap();
        assert_abs_diff_eq!(b.restricted_mean(2.0), 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(b.restricted_mean(1.0), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn inversion_round_trip_and_clamps() {
        let inv = invert_hazard(&step(), 1.5, 1e-8).unwrap();
        assert_eq!(inv.clamped, Clamp::None);
        assert_abs_diff_eq!(inv.hazard, 1.0, epsilon = 1e-6);
        assert!(inv.residual <= 1e-8);

        let inv = invert_hazard(&step(), 2.5, 1e-8).unwrap();
        assert_eq!(inv.clamped, Clamp::AtMin);
        let inv = invert_hazard(&step(), 0.5, 1e-8).unwrap();
        assert_eq!(inv.clamped, Clamp::AtMax);
        assert!(invert_hazard(&step(), 0.0, 1e-8).is_err());
        assert!(invert_hazard(&step(), -1.0, 1e-8).is_err());
    }

    #[test]
    fn inversion_on_exponential() {
        let b = BaselineSurvival::from_survival_fn(|t| (-t).exp(), 50.0, 200_000).unwrap();
        let inv = invert_hazard(&b, 0.25, 1e-8).unwrap();
        assert_abs_diff_eq!(inv.hazard, 4.0, epsilon = 1e-2);
    }

    #[test]
    fn observed_hazards_decrease_with_time() {
        let c = cohort(&[(1.2, true, 0.0), (1.8, false, 0.0)]);
        let oh = observed_hazards(&c, &step(), 1e-8).unwrap();
        let h = oh.hazards.aligned(&c).unwrap();
        assert!(h[0] > h[1]);
        assert_eq!(oh.clamped_at_min + oh.clamped_at_max, 0);
        assert!(oh.max_residual <= 1e-8);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let km = kaplan_meier(&cohort(&[(1.0, true, 0.0), (2.0, false, 0.0), (3.0, true, 0.0)])).unwrap();
        let mut buf = Vec::new();
        km.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("time,survival\n"));
        assert_eq!(BaselineSurvival::read_csv(buf.as_slice()).unwrap(), km);
        let json = serde_json::to_string(&km).unwrap();
        let back: BaselineSurvival = serde_json::from_str(&json).unwrap();
        assert_eq!(back, km);
        assert_eq!(back.restricted_mean(1.3), km.restricted_mean(1.3));
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(BaselineSurvival::new(vec![1.0, 2.0], vec![0.5, 0.6], 3.0, 0.6).is_err());
        assert!(BaselineSurvival::new(vec![2.0, 1.0], vec![0.6, 0.5], 3.0, 0.5).is_err());
        assert!(BaselineSurvival::new(vec![1.0], vec![0.5], 0.5, 0.5).is_err());
        assert!(BaselineSurvival::new(vec![1.0], vec![0.5], 2.0, 0.7).is_err());
        assert!(serde_json::from_str::<BaselineSurvival>(
            r#"{"knot_times":[1.0],"values":[1.5],"horizon":2.0,"tail_value":0.5}"#
        )
        .is_err());
    }
}
