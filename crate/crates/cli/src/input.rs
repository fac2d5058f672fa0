//! CSV ingestion.
//!
//! A data file holds either one column of values or two columns
//! `time,value`, optionally preceded by a header row. Lines starting with
//! `#` are skipped. Times are kept as text: observations are used in
//! arrival order as equally spaced indices.

use std::io::Read;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct InputData {
    pub values: Vec<f64>,
    pub times: Option<Vec<String>>,
    pub header: Option<Vec<String>>,
    pub warnings: Vec<String>,
}

pub fn read_series<R: Read>(reader: R, source: &str) -> CliResult<InputData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut values = Vec::new();
    let mut times: Vec<String> = Vec::new();
    let mut header = None;
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::parse(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if !(1..=2).contains(&record.len()) {
            return Err(CliError::parse(source, line, format!("expected 1 or 2 columns, found {}", record.len())));
        }
        let value_field = &record[record.len() - 1];
        let parsed = value_field.parse::<f64>().ok().filter(|v| v.is_finite());
        if i == 0 && parsed.is_none() && value_field.parse::<f64>().is_err() {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(CliError::parse(source, line, format!("expected {w} columns, found {}", record.len())));
            }
            Some(_) => {}
        }
        let value = parsed.ok_or_else(|| CliError::parse(source, line, format!("cannot parse `{value_field}` as a finite number")))?;
        values.push(value);
        if record.len() == 2 {
            times.push(record[0].to_string());
        }
    }
    if values.is_empty() {
        return Err(CliError::parse(source, 0, "no observations"));
    }
    let times = (width == Some(2)).then_some(times);
    let mut warnings = Vec::new();
    if let Some(t) = &times {
        if !uniform_times(t) {
            warnings.push(format!(
                "{source}: time column is not equally spaced; observations are used in arrival order"
            ));
        }
    }
    Ok(InputData {
        values,
        times,
        header,
        warnings,
    })
}

/// True when every time parses as a number and consecutive gaps agree.
/// Non-numeric times cannot be checked and count as uniform.
fn uniform_times(times: &[String]) -> bool {
    let Ok(t) = times.iter().map(|s| s.parse::<f64>()).collect::<Result<Vec<f64>, _>>() else {
        return true;
    };
    if t.len() < 3 {
        return true;
    }
    let d0 = t[1] - t[0];
    t.windows(2).all(|w| ((w[1] - w[0]) - d0).abs() <= 1e-9 * d0.abs().max(1.0))
}

/// Number of leading observations whose time does not exceed `split`.
/// Numeric times compare numerically, others as text (ISO dates sort
/// correctly that way).
pub fn split_index(times: &[String], split: &str) -> usize {
    let numeric = split.parse::<f64>().ok();
    times
        .iter()
        .position(|t| match (numeric, t.parse::<f64>()) {
            (Some(s), Ok(v)) => v > s,
            _ => t.as_str() > split,
        })
        .unwrap_or(times.len())
}
