//! Incidence CSV ingestion: `location,time_index,value[,season][,x_*...]`.
//!
//! `time_index` runs 1, 2, ... per location without gaps. An optional
//! `season` column labels time indices; each label must cover one
//! contiguous run. Columns prefixed `x_` become covariates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{Covariates, Season, TimeSeries};

/// One schema problem, with its 1-based line number (the header is line 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

struct Row {
    line: usize,
    time_index: i64,
    value: f64,
    season: Option<String>,
    covariates: Vec<f64>,
}

fn diag(line: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line,
        message: message.into(),
    }
}

/// Parse an incidence CSV into one series per location (sorted by
/// location). All problems are collected rather than stopping at the first.
pub fn read_incidence_csv<R: Read>(
    input: R,
    cycle_length: usize,
    t0: i64,
) -> std::result::Result<Vec<TimeSeries>, Vec<Diagnostic>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => return Err(vec![diag(1, e.to_string())]),
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_loc), Some(c_t), Some(c_v)) = (col("location"), col("time_index"), col("value")) else {
        return Err(vec![diag(1, "header must include location, time_index and value")]);
    };
    let c_season = col("season");
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("x_"))
        .map(|(i, h)| (i, h.clone()))
        .collect();
    let known = 3 + usize::from(c_season.is_some()) + cov_cols.len();
    let mut problems = Vec::new();
    if known != headers.len() {
        problems.push(diag(1, "unexpected column: only season and x_* may follow location,time_index,value"));
    }

    let mut by_location: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                problems.push(diag(line, e.to_string()));
                continue;
            }
        };
        if record.len() != headers.len() {
            problems.push(diag(line, format!("{} fields, expected {}", record.len(), headers.len())));
            continue;
        }
        let location = record[c_loc].to_string();
        if location.is_empty() {
            problems.push(diag(line, "empty location"));
            continue;
        }
        let time_index = match record[c_t].parse::<i64>() {
            Ok(t) => t,
            Err(_) => {
                problems.push(diag(line, format!("time_index '{}' is not an integer", &record[c_t])));
                continue;
            }
        };
        let value = match record[c_v].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                problems.push(diag(line, format!("value '{}' is not a finite number", &record[c_v])));
                continue;
            }
        };
        if value < 0.0 {
            problems.push(diag(line, format!("negative value {value}")));
            continue;
        }
        let mut covariates = Vec::with_capacity(cov_cols.len());
        let mut bad_cov = false;
        for (c, name) in &cov_cols {
            match record[*c].parse::<f64>() {
                Ok(v) if v.is_finite() => covariates.push(v),
                _ => {
                    problems.push(diag(line, format!("{name} '{}' is not a finite number", &record[*c])));
                    bad_cov = true;
                }
            }
        }
        if bad_cov {
            continue;
        }
        let season = c_season.map(|c| record[c].to_string()).filter(|s| !s.is_empty());
        by_location.entry(location).or_default().push(Row {
            line,
            time_index,
            value,
            season,
            covariates,
        });
    }

    let mut out = Vec::new();
    for (location, mut rows) in by_location {
        rows.sort_by_key(|r| (r.time_index, r.line));
        let mut expected = 1;
        let mut ok = true;
        for r in &rows {
            if r.time_index != expected {
                ok = false;
                if r.time_index < expected {
                    problems.push(diag(
                        r.line,
                        format!("duplicate time_index {} for '{location}'", r.time_index),
                    ));
                } else {
                    problems.push(diag(
                        r.line,
                        format!(
                            "gap in time_index for '{location}': expected {expected}, found {}",
                            r.time_index
                        ),
                    ));
                    expected = r.time_index + 1;
                }
                continue;
            }
            expected += 1;
        }
        if !ok {
            continue;
        }
        let seasons = match season_runs(&rows) {
            Ok(s) => s,
            Err(d) => {
                problems.push(d);
                continue;
            }
        };
        let values = rows.iter().map(|r| r.value).collect();
        let built = TimeSeries::new(location.clone(), t0, values, cycle_length).and_then(|s| {
            if cov_cols.is_empty() {
                Ok(s)
            } else {
                s.with_covariates(Covariates {
                    names: cov_cols.iter().map(|(_, n)| n.clone()).collect(),
                    rows: rows.iter().map(|r| r.covariates.clone()).collect(),
                })
            }
        });
        match built {
            Ok(s) => out.push(s.with_seasons(seasons)),
            Err(e) => problems.push(diag(rows[0].line, e.to_string())),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        problems.sort_by_key(|d| d.line);
        Err(problems)
    }
}

fn season_runs(rows: &[Row]) -> std::result::Result<Vec<Season>, Diagnostic> {
    let mut seasons: Vec<Season> = Vec::new();
    let mut current: Option<(String, usize, usize)> = None;
    let flush = |run: Option<(String, usize, usize)>, seasons: &mut Vec<Season>, line: usize| {
        if let Some((label, start, end)) = run {
            if seasons.iter().any(|s| s.label == label) {
                return Err(diag(line, format!("season '{label}' is not contiguous")));
            }
            seasons.push(Season::new(label, start, end).expect("runs are non-empty"));
        }
        Ok(())
    };
    for r in rows {
        let t = r.time_index as usize;
        match (&mut current, &r.season) {
            (Some((label, _, end)), Some(s)) if label == s => *end = t,
            (_, s) => {
                flush(current.take(), &mut seasons, r.line)?;
                current = s.as_ref().map(|s| (s.clone(), t, t));
            }
        }
    }
    flush(current, &mut seasons, rows.last().map_or(1, |r| r.line))?;
    Ok(seasons)
}

/// Convenience wrapper mapping diagnostics to a data error.
pub fn load_incidence(path: &std::path::Path, cycle_length: usize, t0: i64) -> Result<Vec<TimeSeries>> {
    let file = std::fs::File::open(path)?;
    read_incidence_csv(file, cycle_length, t0).map_err(|d| {
        Error::Data(format!(
            "{}: {}",
            path.display(),
            d.iter().map(Diagnostic::to_string).collect::<Vec<_>>().join("; ")
        ))
    })
}
