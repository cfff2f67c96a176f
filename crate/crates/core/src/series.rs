//! Surveillance time series, seasons and forecast targets.
//!
//! Time indices are 1-based positions within a series (`1..=T`). The epoch
//! index of the first observation is `t0`, so position `t` corresponds to
//! epoch `t0 + t - 1`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named covariate matrix, one row per time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// A labelled, contiguous, inclusive range of time indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Season {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Season {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Result<Self> {
        if start == 0 || end < start {
            return Err(Error::Argument(format!(
                "season range {start}..={end} is empty or starts before 1"
            )));
        }
        Ok(Self {
            label: label.into(),
            start,
            end,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Regularly spaced incidence observations for one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    location_id: String,
    t0: i64,
    values: Vec<f64>,
    cycle_length: usize,
    covariates: Option<Covariates>,
    seasons: Vec<Season>,
}

impl TimeSeries {
    pub fn new(
        location_id: impl Into<String>,
        t0: i64,
        values: Vec<f64>,
        cycle_length: usize,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("time series must have at least one value".into()));
        }
        if cycle_length == 0 {
            return Err(Error::Argument("cycle length must be at least 1".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Argument(format!(
                "value {v} at time index {} is negative or not finite",
                i + 1
            )));
        }
        Ok(Self {
            location_id: location_id.into(),
            t0,
            values,
            cycle_length,
            covariates: None,
            seasons: Vec::new(),
        })
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Result<Self> {
        if covariates.rows.len() != self.values.len() {
            return Err(Error::Argument(format!(
                "{} covariate rows for {} time indices",
                covariates.rows.len(),
                self.values.len()
            )));
        }
        if covariates.rows.iter().any(|r| r.len() != covariates.names.len()) {
            return Err(Error::Argument("covariate row width differs from name count".into()));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    /// Attach the season calendar. Seasons may extend past the observed data
    /// (a forecast season); ranges are checked when a target resolves them.
    pub fn with_seasons(mut self, seasons: Vec<Season>) -> Self {
        self.seasons = seasons;
        self
    }

    pub fn location_id(&self) -> &str {
        &self.location_id
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cycle_length(&self) -> usize {
        self.cycle_length
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn seasons(&self) -> &[Season] {
        &self.seasons
    }

    /// Observation at 1-based time index `t`.
    pub fn value(&self, t: i64) -> Result<f64> {
        if t < 1 || t as usize > self.values.len() {
            return Err(Error::Range {
                index: t,
                len: self.values.len(),
            });
        }
        Ok(self.values[t as usize - 1])
    }

    pub fn season(&self, label: &str) -> Result<&Season> {
        self.seasons
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::UnknownSeason(label.to_string()))
    }

    /// Position within the seasonal cycle, in `1..=L`.
    pub fn season_index(&self, t: i64) -> usize {
        season_index(self.t0, self.cycle_length, t)
    }

    /// Prefix of the first `through_t` observations, keeping the season
    /// calendar.
    pub fn train_view(&self, through_t: usize) -> Result<TimeSeries> {
        if through_t == 0 || through_t > self.values.len() {
            return Err(Error::Range {
                index: through_t as i64,
                len: self.values.len(),
            });
        }
        let covariates = self.covariates.as_ref().map(|c| Covariates {
            names: c.names.clone(),
            rows: c.rows[..through_t].to_vec(),
        });
        Ok(TimeSeries {
            location_id: self.location_id.clone(),
            t0: self.t0,
            values: self.values[..through_t].to_vec(),
            cycle_length: self.cycle_length,
            covariates,
            seasons: self.seasons.clone(),
        })
    }

    /// Replace the values, keeping all metadata. Used by nowcasting, which
    /// rescales counts without changing the time axis.
    pub fn with_values(&self, values: Vec<f64>) -> Result<TimeSeries> {
        if values.len() != self.values.len() {
            return Err(Error::Argument("replacement values change the series length".into()));
        }
        let mut out = TimeSeries::new(self.location_id.clone(), self.t0, values, self.cycle_length)?;
        out.covariates = self.covariates.clone();
        out.seasons = self.seasons.clone();
        Ok(out)
    }
}

/// `((t0 + t - 2) mod L) + 1`, using Euclidean remainder so negative epochs wrap.
pub fn season_index(t0: i64, cycle_length: usize, t: i64) -> usize {
    let l = cycle_length as i64;
    ((t0 + t - 2).rem_euclid(l) + 1) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    StepAhead { k: i64 },
    PeakIncidence { season: String },
    PeakTiming { season: String },
    ThresholdExceedance { k: i64, threshold: f64 },
}

/// A forecastable quantity positioned relative to an origin time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    #[serde(flatten)]
    pub kind: TargetKind,
    pub origin_t: i64,
}

impl Target {
    pub fn step_ahead(origin_t: i64, k: i64) -> Self {
        Self {
            kind: TargetKind::StepAhead { k },
            origin_t,
        }
    }

    pub fn peak_incidence(origin_t: i64, season: impl Into<String>) -> Self {
        Self {
            kind: TargetKind::PeakIncidence {
                season: season.into(),
            },
            origin_t,
        }
    }

    pub fn peak_timing(origin_t: i64, season: impl Into<String>) -> Self {
        Self {
            kind: TargetKind::PeakTiming {
                season: season.into(),
            },
            origin_t,
        }
    }

    pub fn threshold(origin_t: i64, k: i64, threshold: f64) -> Self {
        Self {
            kind: TargetKind::ThresholdExceedance { k, threshold },
            origin_t,
        }
    }

    /// Absolute time index for step-based targets.
    pub fn time_index(&self) -> Option<i64> {
        match self.kind {
            TargetKind::StepAhead { k } | TargetKind::ThresholdExceedance { k, .. } => {
                Some(self.origin_t + k)
            }
            _ => None,
        }
    }

    /// Short descriptor used in score tables, e.g. `step_ahead(k=2)`.
    pub fn descriptor(&self) -> String {
        self.kind.to_string()
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::StepAhead { k } => write!(f, "step_ahead(k={k})"),
            TargetKind::PeakIncidence { season } => write!(f, "peak_incidence({season})"),
            TargetKind::PeakTiming { season } => write!(f, "peak_timing({season})"),
            TargetKind::ThresholdExceedance { k, threshold } => {
                write!(f, "threshold(k={k},c={threshold})")
            }
        }
    }
}

/// Observed value of a target.
#[derive(Debug, Clone, PartialEq)]
pub enum Realized {
    Value(f64),
    Indices(BTreeSet<usize>),
    Flag(bool),
}

impl Realized {
    /// Scalar used by point and distance-based metrics. Peak timing collapses
    /// to its earliest index; flags map to 0/1.
    pub fn scalar(&self) -> f64 {
        match self {
            Realized::Value(v) => *v,
            Realized::Indices(set) => set.iter().next().copied().unwrap_or(0) as f64,
            Realized::Flag(b) => f64::from(u8::from(*b)),
        }
    }
}

pub fn realized_target(series: &TimeSeries, target: &Target) -> Result<Realized> {
    match &target.kind {
        TargetKind::StepAhead { k } => series.value(target.origin_t + k).map(Realized::Value),
        TargetKind::ThresholdExceedance { k, threshold } => series
            .value(target.origin_t + k)
            .map(|v| Realized::Flag(v > *threshold)),
        TargetKind::PeakIncidence { season } => {
            let (_, peak) = season_peak(series, season)?;
            Ok(Realized::Value(peak))
        }
        TargetKind::PeakTiming { season } => {
            let (s, peak) = season_peak(series, season)?;
            let values = series.values();
            let set = s.indices().filter(|&t| values[t - 1] == peak).collect();
            Ok(Realized::Indices(set))
        }
    }
}

fn season_peak<'a>(series: &'a TimeSeries, label: &str) -> Result<(&'a Season, f64)> {
    let s = series.season(label)?;
    if s.end > series.len() {
        return Err(Error::Range {
            index: s.end as i64,
            len: series.len(),
        });
    }
    let peak = series.values()[s.start - 1..s.end]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((s, peak))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> TimeSeries {
        let n = values.len();
        TimeSeries::new("loc", 1, values.to_vec(), 12)
            .unwrap()
            .with_seasons(vec![Season::new("all", 1, n).unwrap()])
    }

    #[test]
    fn peak_incidence_over_all() {
        let s = series(&[1.0, 3.0, 2.0]);
        let r = realized_target(&s, &Target::peak_incidence(0, "all")).unwrap();
        assert_eq!(r, Realized::Value(3.0));
    }

    #[test]
    fn peak_timing_keeps_ties() {
        let s = series(&[3.0, 1.0, 3.0]);
        let r = realized_target(&s, &Target::peak_timing(0, "all")).unwrap();
        assert_eq!(r, Realized::Indices([1, 3].into_iter().collect()));
    }

    #[test]
    fn minus_one_step_ahead_is_a_lookup() {
        let s = series(&[0.0, 0.0, 0.0, 7.0, 0.0, 0.0]);
        let r = realized_target(&s, &Target::step_ahead(5, -1)).unwrap();
        assert_eq!(r, Realized::Value(7.0));
    }

    #[test]
    fn threshold_exceedance() {
        let s = series(&[0.0, 0.0, 0.0, 25.0]);
        let r = realized_target(&s, &Target::threshold(3, 1, 10.0)).unwrap();
        assert_eq!(r, Realized::Flag(true));
        let r = realized_target(&s, &Target::threshold(3, 1, 25.0)).unwrap();
        assert_eq!(r, Realized::Flag(false));
    }

    #[test]
    fn out_of_range_names_the_index() {
        let s = series(&[1.0, 2.0]);
        match realized_target(&s, &Target::step_ahead(2, 3)) {
            Err(Error::Range { index, len }) => assert_eq!((index, len), (5, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_season_is_a_lookup_error() {
        let s = series(&[1.0, 2.0]);
        assert!(matches!(
            realized_target(&s, &Target::peak_incidence(0, "2010")),
            Err(Error::UnknownSeason(_))
        ));
    }

    #[test]
    fn train_view_prefixes() {
        let s = series(&(1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.train_view(10).unwrap(), s);
        assert_eq!(s.train_view(3).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(matches!(s.train_view(0), Err(Error::Range { .. })));
        assert!(s.train_view(11).is_err());
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn season_index_wraps() {
        assert_eq!(season_index(1, 12, 13), 1);
        assert_eq!(season_index(1, 12, 12), 12);
        // (3 + 1 - 2) mod 4 + 1
        assert_eq!(season_index(3, 4, 1), 3);
    }

    #[test]
    fn rejects_negative_and_non_finite_values() {
        assert!(TimeSeries::new("x", 1, vec![1.0, -1.0], 1).is_err());
        assert!(TimeSeries::new("x", 1, vec![f64::NAN], 1).is_err());
        assert!(TimeSeries::new("x", 1, vec![], 1).is_err());
        assert!(TimeSeries::new("x", 1, vec![1.0], 0).is_err());
    }

    #[test]
    fn covariates_must_align() {
        let s = TimeSeries::new("x", 1, vec![1.0, 2.0], 1).unwrap();
        let bad = Covariates {
            names: vec!["x_temp".into()],
            rows: vec![vec![1.0]],
        };
        assert!(s.clone().with_covariates(bad).is_err());
        let good = Covariates {
            names: vec!["x_temp".into()],
            rows: vec![vec![1.0], vec![2.0]],
        };
        let s = s.with_covariates(good).unwrap();
        assert_eq!(s.train_view(1).unwrap().covariates().unwrap().rows.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn peak_timing_indices_hold_the_peak(values in prop::collection::vec(0u8..5, 1..30)) {
                let values: Vec<f64> = values.into_iter().map(f64::from).collect();
                let s = series(&values);
                let peak = realized_target(&s, &Target::peak_incidence(0, "all")).unwrap();
                let Realized::Indices(set) = realized_target(&s, &Target::peak_timing(0, "all")).unwrap() else {
                    unreachable!()
                };
                prop_assert!(!set.is_empty());
                for t in set {
                    let at = realized_target(&s, &Target::step_ahead(t as i64, 0)).unwrap();
                    prop_assert_eq!(&at, &peak);
                }
            }

            #[test]
            fn step_ahead_depends_on_absolute_index(
                values in prop::collection::vec(0.0f64..100.0, 1..30),
                a in 0i64..30, b in 0i64..30,
            ) {
                let s = series(&values);
                let idx = (a.max(b) % values.len() as i64) + 1;
                let r1 = realized_target(&s, &Target::step_ahead(a, idx - a));
                let r2 = realized_target(&s, &Target::step_ahead(b, idx - b));
                prop_assert_eq!(r1.unwrap(), r2.unwrap());
            }

            #[test]
            fn train_view_is_idempotent(values in prop::collection::vec(0.0f64..100.0, 1..30), cut in 1usize..30) {
                let s = series(&values);
                let cut = cut.min(values.len());
                let once = s.train_view(cut).unwrap();
                prop_assert_eq!(once.train_view(cut).unwrap(), once);
            }
        }
    }
}
