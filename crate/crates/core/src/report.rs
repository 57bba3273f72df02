//! Human-readable and tabular renderings of study results. Tables round to
//! three decimals; JSON output keeps full precision.

use std::fmt::Write as _;

use crate::concordance::ConcordanceReport;
use crate::error::{Error, Result};
use crate::stats::ReplicateSummary;
use crate::study::{GroupSummary, StudySummary, SweepResult};

pub const SIGN_MARK: &str = "§";
pub const MANN_WHITNEY_MARK: &str = "†";

pub fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// `0.614 (0.612,0.616)`.
pub fn format_interval(s: &ReplicateSummary) -> String {
    format!("{} ({},{})", fmt3(s.mean), fmt3(s.ci95.0), fmt3(s.ci95.1))
}

/// A ratio as a percentage with two decimals.
pub fn format_percent(ratio: Option<f64>) -> String {
    ratio.map_or_else(|| "n/a".into(), |r| format!("{:.2}%", 100.0 * r))
}

fn group_marks(g: &GroupSummary) -> String {
    let mut marks = String::new();
    if g.sign_significant {
        marks.push_str(SIGN_MARK);
    }
    if g.mann_whitney_significant {
        marks.push_str(MANN_WHITNEY_MARK);
    }
    marks
}

fn opt_interval(s: &Option<ReplicateSummary>) -> String {
    s.as_ref().map_or_else(|| "n/a".into(), format_interval)
}

/// Overall table (scenario, CI, expected CI, DR) followed by the subgroup
/// table with significance marks.
pub fn tables_markdown(summaries: &[StudySummary]) -> String {
    let mut out = String::new();
    out.push_str("| Scenario | CI(M̂) | E[CI(M*)] | DR |\n|---|---|---|---|\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            s.scenario,
            format_interval(&s.ci),
            format_interval(&s.eci),
            format_percent(s.dr)
        );
    }
    if summaries.iter().any(|s| !s.per_group.is_empty()) {
        out.push_str("\n| Scenario | Group | SUBCI(l, M̂) | E[SUBCI(l, M*)] | SUBDR |\n|---|---|---|---|---|\n");
        for s in summaries {
            for g in &s.per_group {
                let _ = writeln!(
                    out,
                    "| {} | {} | {}{} | {} | {} |",
                    s.scenario,
                    g.label,
                    opt_interval(&g.subci),
                    group_marks(g),
                    opt_interval(&g.subeci),
                    format_percent(g.subdr)
                );
            }
        }
        let _ = writeln!(
            out,
            "\nValues are replicate means with 95% confidence intervals in parentheses. \
             {SIGN_MARK} and {MANN_WHITNEY_MARK} mark groups where the Sign and Mann–Whitney tests \
             find SUBCI significantly different from CI (p < 0.05)."
        );
    }
    out
}

pub const SUMMARY_HEADER: [&str; 8] = ["scenario", "group", "metric", "replicates", "mean", "sd", "ci_low", "ci_high"];

fn csv_error(e: csv::Error) -> Error {
    Error::Csv {
        row: 0,
        message: e.to_string(),
    }
}

/// One row per metric, numbers rounded to three decimals.
pub fn summary_csv(summaries: &[StudySummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    let mut row = |scenario: &str, group: &str, metric: &str, n: usize, s: Option<&ReplicateSummary>, scalar: Option<f64>| {
        let (mean, sd, lo, hi) = match (s, scalar) {
            (Some(s), _) => (fmt3(s.mean), fmt3(s.sd), fmt3(s.ci95.0), fmt3(s.ci95.1)),
            (None, Some(v)) => (fmt3(v), String::new(), String::new(), String::new()),
            (None, None) => Default::default(),
        };
        w.write_record([scenario, group, metric, &n.to_string(), &mean, &sd, &lo, &hi])
    };
    for s in summaries {
        let n = s.replicates;
        row(&s.scenario, "", "ci", n, Some(&s.ci), None).map_err(csv_error)?;
        row(&s.scenario, "", "eci", n, Some(&s.eci), None).map_err(csv_error)?;
        row(&s.scenario, "", "dr", n, None, s.dr).map_err(csv_error)?;
        for g in &s.per_group {
            let k = g.replicates;
            row(&s.scenario, &g.label, "subci", k, g.subci.as_ref(), None).map_err(csv_error)?;
            row(&s.scenario, &g.label, "subeci", k, g.subeci.as_ref(), None).map_err(csv_error)?;
            row(&s.scenario, &g.label, "subdr", k, None, g.subdr).map_err(csv_error)?;
            row(&s.scenario, &g.label, "within_subci", k, g.within_subci.as_ref(), None).map_err(csv_error)?;
            row(&s.scenario, &g.label, "sign_p", k, None, g.sign_p).map_err(csv_error)?;
            row(&s.scenario, &g.label, "mann_whitney_p", k, None, g.mann_whitney_p).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Full-precision sweep table for external plotting.
pub fn sweep_csv(sweep: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "eci_mean", "eci_sd", "ci_mean", "ci_sd", "replicates", "argmin"])
        .map_err(csv_error)?;
    for r in &sweep.rows {
        w.write_record([
            r.fraction.to_string(),
            r.eci.mean.to_string(),
            r.eci.sd.to_string(),
            r.ci.mean.to_string(),
            r.ci.sd.to_string(),
            r.eci.values.len().to_string(),
            u8::from(r.fraction == sweep.argmin_fraction).to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn sweep_markdown(sweep: &SweepResult) -> String {
    let mut out = String::from("| Fraction | E[CI(M*)] mean | E[CI(M*)] sd | CI(M̂) mean |\n|---|---|---|---|\n");
    for r in &sweep.rows {
        let mark = if r.fraction == sweep.argmin_fraction { " (min sd)" } else { "" };
        let _ = writeln!(
            out,
            "| {}{} | {} | {:.5} | {} |",
            r.fraction,
            mark,
            fmt3(r.eci.mean),
            r.eci.sd,
            fmt3(r.ci.mean)
        );
    }
    let _ = writeln!(
        out,
        "\nSmallest sd at fraction {} ({}).",
        sweep.argmin_fraction,
        if sweep.interior_minimum { "interior" } else { "boundary" }
    );
    out
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), fmt3)
}

/// A single report as markdown.
pub fn concordance_markdown(report: &ConcordanceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "**{}**: {} members, {} comparable pairs\n\n| Metric | Value |\n|---|---|\n| CI | {} |\n| ECI | {} |\n| DR | {} |\n",
        report.scenario,
        report.members,
        report.pair_count,
        fmt3(report.ci),
        fmt3(report.eci),
        format_percent(report.dr)
    );
    out.push_str("| Group | Members | Pairs | SUBCI | SUBECI | SUBDR | Within SUBCI |\n|---|---|---|---|---|---|---|\n");
    for g in &report.per_group {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            g.label,
            g.members,
            g.pair_count,
            opt3(g.subci),
            opt3(g.subeci),
            format_percent(g.subdr),
            opt3(g.within_subci)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::replicate_summary;

    fn summary() -> StudySummary {
        let ci = replicate_summary(&[0.61, 0.62, 0.615], 0.95).unwrap();
        let eci = replicate_summary(&[0.79, 0.792, 0.791], 0.95).unwrap();
        StudySummary {
            scenario: "2002".into(),
            replicates: 3,
            dr: Some((ci.mean - 0.5) / (eci.mean - 0.5)),
            per_group: vec![GroupSummary {
                label: "Asian".into(),
                replicates: 3,
                subci: Some(replicate_summary(&[0.63, 0.62, 0.625], 0.95).unwrap()),
                subeci: Some(eci.clone()),
                subdr: Some(0.4),
                within_subci: None,
                sign_p: Some(0.25),
                mann_whitney_u: Some(9.0),
                mann_whitney_p: Some(0.04),
                sign_significant: false,
                mann_whitney_significant: true,
            }],
            ci,
            eci,
        }
    }

    #[test]
    fn markdown_has_marks_and_percent() {
        let md = tables_markdown(&[summary()]);
        assert!(md.contains("| 2002 | 0.615 ("));
        assert!(md.contains("| 39.52% |"));
        assert!(md.contains("| Asian | 0.625 ("));
        assert!(md.contains(")† |"));
        assert!(!md.contains(")§"));
    }

    #[test]
    fn summary_csv_rounds_to_three_decimals() {
        let text = summary_csv(&[summary()]).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3 + 6);
        assert_eq!(&rows[0][2], "ci");
        assert_eq!(&rows[0][4], "0.615");
        assert_eq!(&rows[2][5], "");
        assert_eq!(&rows[5][2], "subdr");
        assert_eq!(&rows[6][4], "");
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(Some(0.3918)), "39.18%");
        assert_eq!(format_percent(None), "n/a");
    }
}
