//! Cohort CSV files: `id,time,event,group,<covariates...>[,origin_time]`.
//!
//! Empty cells are missing values. Covariate columns holding any value that
//! is not a number are categorical and get one-hot encoded against their
//! first level. A column with a single level carries no information and
//! yields no indicators.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{validate_cohort, Cohort, RawRecord, Validated, ValidationOptions};
use crate::error::{Error, Result};

const FIXED: [&str; 4] = ["id", "time", "event", "group"];
const ORIGIN: &str = "origin_time";

/// How one categorical source column became indicator columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub column: String,
    /// Levels in order of first appearance; the first is the reference.
    pub levels: Vec<String>,
    /// Names of the generated indicator columns, `column=level`.
    pub indicators: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CohortCsv {
    pub validated: Validated,
    pub encodings: Vec<CategoricalEncoding>,
}

fn row_err(row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        message: message.into(),
    }
}

fn parse_num(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| row_err(row, format!("{column}: {cell:?} is not a number")))
}

pub fn read_cohort_path(path: &Path, options: &ValidationOptions) -> Result<CohortCsv> {
    read_cohort_csv(File::open(path)?, options)
}

/// Parses and validates a cohort. Malformed cells are errors carrying the
/// file line number; missing cells only drop the record.
pub fn read_cohort_csv<R: Read>(reader: R, options: &ValidationOptions) -> Result<CohortCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| row_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
        return Err(row_err(1, format!("header must start with {}", FIXED.join(","))));
    }
    let has_origin = header.last().is_some_and(|h| h == ORIGIN);
    let cov_end = if has_origin { header.len() - 1 } else { header.len() };
    let source_columns = header[FIXED.len()..cov_end].to_vec();
    if let Some(dup) = header.iter().enumerate().find(|(i, h)| header[..*i].contains(h)) {
        return Err(row_err(1, format!("duplicate column {:?}", dup.1)));
    }

    struct Row {
        id: String,
        time: Option<f64>,
        event: Option<bool>,
        group: Option<String>,
        cells: Vec<String>,
        origin: Option<f64>,
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            row_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(row_err(line, format!("{} fields, header has {}", rec.len(), header.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(row_err(line, "empty id"));
        }
        let event = match rec[2].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(row_err(line, format!("event must be 0 or 1, got {other:?}"))),
        };
        let group = Some(rec[3].trim()).filter(|g| !g.is_empty()).map(str::to_string);
        rows.push(Row {
            id,
            time: parse_num(&rec[1], line, "time")?,
            event,
            group,
            cells: rec.iter().skip(FIXED.len()).take(source_columns.len()).map(|c| c.trim().to_string()).collect(),
            origin: if has_origin { parse_num(&rec[header.len() - 1], line, ORIGIN)? } else { None },
        });
    }

    // Decide per source column: numeric or categorical.
    let mut covariate_names = Vec::new();
    let mut encodings = Vec::new();
    let mut extractors: Vec<Box<dyn Fn(&str) -> Vec<Option<f64>>>> = Vec::new();
    for (c, name) in source_columns.iter().enumerate() {
        let numeric = rows
            .iter()
            .all(|r| r.cells[c].is_empty() || r.cells[c].parse::<f64>().is_ok());
        if numeric {
            covariate_names.push(name.clone());
            extractors.push(Box::new(|cell: &str| vec![cell.parse::<f64>().ok()]));
            continue;
        }
        let mut levels: Vec<String> = Vec::new();
        for r in &rows {
            let v = &r.cells[c];
            if !v.is_empty() && !levels.contains(v) {
                levels.push(v.clone());
            }
        }
        let indicators: Vec<String> = levels[1..].iter().map(|l| format!("{name}={l}")).collect();
        covariate_names.extend(indicators.iter().cloned());
        let rest = levels[1..].to_vec();
        let width = rest.len();
        extractors.push(Box::new(move |cell: &str| {
            if cell.is_empty() {
                vec![None; width]
            } else {
                rest.iter().map(|l| Some(f64::from(u8::from(l == cell)))).collect()
            }
        }));
        encodings.push(CategoricalEncoding {
            column: name.clone(),
            levels,
            indicators,
        });
    }

    let mut raw = Vec::with_capacity(rows.len());
    for r in rows {
        let covariates = extractors
            .iter()
            .zip(&r.cells)
            .flat_map(|(f, cell)| f(cell))
            .collect();
        raw.push(RawRecord {
            id: r.id,
            time: r.time,
            event: r.event,
            group: r.group,
            covariates,
            origin_time: r.origin,
        });
    }
    let validated = validate_cohort(raw, &covariate_names, options)?;
    Ok(CohortCsv { validated, encodings })
}

/// Writes the cohort with shortest round-trip number formatting, so equal
/// cohorts give identical bytes. `origin_time` is written when any record has one.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let csv_err = |e: csv::Error| row_err(0, e.to_string());
    let with_origin = cohort.records().iter().any(|r| r.origin_time.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED.to_vec();
    header.extend(cohort.covariate_names().iter().map(String::as_str));
    if with_origin {
        header.push(ORIGIN);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in cohort.records() {
        let mut row = vec![
            r.id.clone(),
            r.observed_time.to_string(),
            u8::from(r.event).to_string(),
            r.group.clone(),
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        if with_origin {
            row.push(r.origin_time.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{RangeFilter, DROP_MISSING_PREDICTOR};

    fn read(text: &str) -> Result<CohortCsv> {
        read_cohort_csv(text.as_bytes(), &ValidationOptions::default())
    }

    #[test]
    fn reads_numeric_columns() {
        let c = read("id,time,event,group,age,kdpi\na,1.5,1,x,40,0.2\nb,2,0,y,50,0.9\n").unwrap();
        let cohort = &c.validated.cohort;
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort.covariate_names(), ["age", "kdpi"]);
        assert_eq!(cohort.records()[1].covariates, vec![50.0, 0.9]);
        assert!(!cohort.records()[1].event);
        assert!(c.encodings.is_empty());
    }

    #[test]
    fn one_hot_encodes_categorical_columns() {
        let c = read("id,time,event,group,blood\na,1,1,x,O\nb,2,1,x,A\nc,3,0,x,B\nd,4,1,x,A\n").unwrap();
        let cohort = &c.validated.cohort;
        assert_eq!(cohort.covariate_names(), ["blood=A", "blood=B"]);
        assert_eq!(cohort.records()[0].covariates, vec![0.0, 0.0]);
        assert_eq!(cohort.records()[2].covariates, vec![0.0, 1.0]);
        assert_eq!(c.encodings[0].levels, ["O", "A", "B"]);
    }

    #[test]
    fn missing_cells_drop_records() {
        let mut text = String::from("id,time,event,group,age\n");
        for i in 0..10 {
            let age = if i == 4 { String::new() } else { (30 + i).to_string() };
            text.push_str(&format!("m{i},{},1,g,{age}\n", i + 1));
        }
        let c = read(&text).unwrap();
        assert_eq!(c.validated.cohort.len(), 9);
        assert_eq!(c.validated.drops.dropped[DROP_MISSING_PREDICTOR], 1);
    }

    #[test]
    fn single_level_category_is_unused() {
        let c = read("id,time,event,group,site\na,1,1,g,north\nb,2,1,g,\n").unwrap();
        assert_eq!(c.validated.cohort.len(), 2);
        assert_eq!(c.validated.cohort.covariate_dim(), 0);
        assert!(c.encodings[0].indicators.is_empty());
    }

    #[test]
    fn bad_event_reports_row() {
        let err = read("id,time,event,group\na,1,1,g\nb,2,yes,g\n").unwrap_err();
        match err {
            Error::Csv { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("event"));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(read("id,time,event,group\na,x,1,g\n").is_err());
        assert!(read("id,time,group,event\na,1,g,1\n").is_err());
        assert!(matches!(read("id,time,event,group\na,1,1,g\na,2,1,g\n"), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn range_filters_and_origin_time() {
        let opts = ValidationOptions {
            range_filters: vec![RangeFilter {
                column: "age".into(),
                min: Some(0.0),
                max: Some(100.0),
            }],
            time_unit: Some("years".into()),
        };
        let text = "id,time,event,group,age,origin_time\na,1,1,g,40,2002.5\nb,2,1,g,120,\nc,3,0,g,60,2003\n";
        let c = read_cohort_csv(text.as_bytes(), &opts).unwrap();
        let cohort = &c.validated.cohort;
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort.records()[0].origin_time, Some(2002.5));
        assert_eq!(cohort.time_unit(), Some("years"));
    }

    #[test]
    fn write_then_read_round_trips() {
        let text = "id,time,event,group,x,origin_time\na,0.1,1,g,-1.25,\nb,2.000001,0,h,3,7\n";
        let c = read(text).unwrap().validated.cohort;
        let mut out = Vec::new();
        write_cohort_csv(&c, &mut out).unwrap();
        let back = read(std::str::from_utf8(&out).unwrap()).unwrap().validated.cohort;
        assert_eq!(back, c);
        let mut again = Vec::new();
        write_cohort_csv(&back, &mut again).unwrap();
        assert_eq!(out, again);
    }
}
