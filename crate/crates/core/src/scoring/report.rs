use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one scored case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseId {
    pub location: String,
    pub origin_t: i64,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case: CaseId,
    pub score: f64,
}

/// Per-case scores of one model under one metric, with their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub model_id: String,
    pub metric: String,
    pub per_case: Vec<CaseScore>,
    pub aggregate: f64,
    pub n: usize,
}

impl ScoreReport {
    pub fn new(model_id: impl Into<String>, metric: impl Into<String>, per_case: Vec<CaseScore>) -> Self {
        let n = per_case.len();
        let aggregate = if n == 0 {
            f64::NAN
        } else {
            per_case.iter().map(|c| c.score).sum::<f64>() / n as f64
        };
        Self {
            model_id: model_id.into(),
            metric: metric.into(),
            per_case,
            aggregate,
            n,
        }
    }
}

pub const AGGREGATE_LOCATION: &str = "*";
pub const AGGREGATE_TARGET: &str = "mean";

/// Writes `model,metric,location,origin_t,target,score` rows, followed by one
/// aggregate row per report (location `*`, empty origin, target `mean`).
/// Scores are written with Rust's shortest round-trip float formatting.
pub fn write_score_csv<W: Write>(out: W, reports: &[ScoreReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "metric", "location", "origin_t", "target", "score"])?;
    for r in reports {
        for c in &r.per_case {
            w.write_record([
                r.model_id.as_str(),
                r.metric.as_str(),
                c.case.location.as_str(),
                &c.case.origin_t.to_string(),
                c.case.target.as_str(),
                &c.score.to_string(),
            ])?;
        }
    }
    for r in reports {
        w.write_record([
            r.model_id.as_str(),
            r.metric.as_str(),
            AGGREGATE_LOCATION,
            "",
            AGGREGATE_TARGET,
            &r.aggregate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score CSV back into reports, recomputing aggregates from the
/// per-case rows. Lines starting with `#` are ignored.
pub fn read_score_csv<R: Read>(input: R) -> Result<Vec<ScoreReport>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut reports: Vec<ScoreReport> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 6 {
            return Err(Error::Data(format!("score row has {} fields, expected 6", row.len())));
        }
        if &row[2] == AGGREGATE_LOCATION {
            continue;
        }
        let origin_t = row[3]
            .parse()
            .map_err(|_| Error::Data(format!("bad origin_t '{}'", &row[3])))?;
        let score = row[5]
            .parse()
            .map_err(|_| Error::Data(format!("bad score '{}'", &row[5])))?;
        let case = CaseScore {
            case: CaseId {
                location: row[2].to_string(),
                origin_t,
                target: row[4].to_string(),
            },
            score,
        };
        match reports
            .iter_mut()
            .find(|r| r.model_id == row[0] && r.metric == row[1])
        {
            Some(r) => r.per_case.push(case),
            None => reports.push(ScoreReport {
                model_id: row[0].to_string(),
                metric: row[1].to_string(),
                per_case: vec![case],
                aggregate: f64::NAN,
                n: 0,
            }),
        }
    }
    Ok(reports
        .into_iter()
        .map(|r| ScoreReport::new(r.model_id, r.metric, r.per_case))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_recomputes_aggregates() {
        let case = |t: i64, s: f64| CaseScore {
            case: CaseId {
                location: "A".into(),
                origin_t: t,
                target: "step_ahead(k=1)".into(),
            },
            score: s,
        };
        let reports = vec![ScoreReport::new("m", "mae", vec![case(1, 1.0), case(2, 2.0)])];
        assert_eq!(reports[0].aggregate, 1.5);
        let mut buf = Vec::new();
        write_score_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,metric,location,origin_t,target,score\n"));
        assert!(text.contains("m,mae,*,,mean,1.5"));
        assert_eq!(read_score_csv(buf.as_slice()).unwrap(), reports);
    }
}
