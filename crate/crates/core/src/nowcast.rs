//! Reporting delays: vintage storage with as-of queries, completeness
//! profiles, truncation of incomplete recent data, and completeness-scaled
//! nowcasts.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::forecast::BinnedForecast;
use crate::series::TimeSeries;

/// Incremental case counts by event time and reporting delay for one
/// location. Counts only accumulate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportingTriangle {
    pub location_id: String,
    counts: BTreeMap<(i64, u32), u64>,
}

impl ReportingTriangle {
    pub fn new(location_id: impl Into<String>) -> Self {
        Self {
            location_id: location_id.into(),
            counts: BTreeMap::new(),
        }
    }

    /// Add `count` cases for `event_t` first reported `delay` intervals later.
    pub fn add(&mut self, event_t: i64, delay: u32, count: u64) {
        *self.counts.entry((event_t, delay)).or_default() += count;
    }

    pub fn add_record(&mut self, record: &VintageRecord) -> Result<()> {
        record.check()?;
        self.add(record.event_time, (record.report_time - record.event_time) as u32, record.count_delta);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> impl Iterator<Item = (i64, u32, u64)> + '_ {
        self.counts.iter().map(|(&(e, d), &c)| (e, d, c))
    }

    /// First and last event times with any record.
    pub fn event_span(&self) -> Option<(i64, i64)> {
        let first = self.counts.keys().next()?.0;
        let last = self.counts.keys().next_back()?.0;
        Some((first, last))
    }

    pub fn max_delay(&self) -> u32 {
        self.counts.keys().map(|k| k.1).max().unwrap_or(0)
    }

    /// Total count for `event_t` over all delays.
    pub fn finalized(&self, event_t: i64) -> u64 {
        self.counts.range((event_t, 0)..=(event_t, u32::MAX)).map(|(_, c)| c).sum()
    }

    /// Count for `event_t` known at `report_time`.
    pub fn known_at(&self, event_t: i64, report_time: i64) -> u64 {
        self.counts
            .range((event_t, 0)..=(event_t, u32::MAX))
            .filter(|((e, d), _)| e + *d as i64 <= report_time)
            .map(|(_, c)| c)
            .sum()
    }

    /// The series as it stood at `report_time`, over every recorded event
    /// time (zeros for events not yet reported). Time index 1 is the first
    /// recorded event; `t0` carries its calendar position.
    pub fn as_of(&self, report_time: i64, cycle_length: usize) -> Result<TimeSeries> {
        let (first, last) = self
            .event_span()
            .ok_or_else(|| Error::Data(format!("no vintage records for location '{}'", self.location_id)))?;
        let values = (first..=last).map(|e| self.known_at(e, report_time) as f64).collect();
        TimeSeries::new(self.location_id.clone(), first, values, cycle_length)
    }
}

/// `pi[d]`: expected cumulative fraction of cases reported within delay `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessProfile {
    pi: Vec<f64>,
}

impl CompletenessProfile {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        let ok = !pi.is_empty()
            && pi.iter().all(|p| (0.0..=1.0).contains(p))
            && pi.windows(2).all(|w| w[1] >= w[0])
            && (pi[pi.len() - 1] - 1.0).abs() < 1e-12;
        if !ok {
            return Err(Error::Argument(
                "completeness must be non-decreasing in [0, 1] and end at 1".into(),
            ));
        }
        Ok(Self { pi })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Completeness after `delay` intervals; 1 beyond the profile.
    pub fn at(&self, delay: u32) -> f64 {
        self.pi.get(delay as usize).copied().unwrap_or(1.0)
    }

    /// Smallest delay whose completeness reaches `level`.
    pub fn delay_reaching(&self, level: f64) -> u32 {
        self.pi.iter().position(|&p| p >= level).unwrap_or(self.pi.len() - 1) as u32
    }
}

/// Pooled delay distribution over matured training events.
pub fn estimate_completeness(
    triangle: &ReportingTriangle,
    training_events: RangeInclusive<i64>,
) -> Result<CompletenessProfile> {
    let mut by_delay = vec![0u64; triangle.max_delay() as usize + 1];
    for (e, d, c) in triangle.counts() {
        if training_events.contains(&e) {
            by_delay[d as usize] += c;
        }
    }
    let total: u64 = by_delay.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateProfile);
    }
    // trailing delays with no training mass add nothing
    while by_delay.len() > 1 && by_delay[by_delay.len() - 1] == 0 {
        by_delay.pop();
    }
    let mut running = 0u64;
    let pi = by_delay
        .iter()
        .map(|c| {
            running += c;
            running as f64 / total as f64
        })
        .collect();
    CompletenessProfile::new(pi)
}

/// Drop the last `k` observations so models see only sufficiently complete
/// data; forecasting the dropped steps is then a nowcast.
pub fn truncate_incomplete(series: &TimeSeries, k: usize) -> Result<TimeSeries> {
    if k >= series.len() {
        return Err(Error::Range {
            index: k as i64,
            len: series.len(),
        });
    }
    series.train_view(series.len() - k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nowcast {
    /// `partial / pi`.
    pub point: f64,
    /// Posterior for the true count on unit bins `[n, n+1)`.
    pub density: BinnedForecast,
}

impl Nowcast {
    /// Mean of the posterior, `(r + 1) / pi - 1` up to tail truncation.
    pub fn mean(&self) -> f64 {
        self.density
            .edges()
            .iter()
            .zip(self.density.probs())
            .map(|(n, p)| n * p)
            .sum()
    }
}

const TAIL_MASS: f64 = 1e-12;

/// Completeness-scaled nowcast of a partially reported count.
///
/// If reported `r ~ Binomial(n, pi)` with a flat prior on `n`, then
/// `n - r ~ NegBinomial(r + 1, pi)`: `P(n - r = j) = C(j + r, j) pi^(r+1) (1 - pi)^j`,
/// with mean `(r + 1)/pi - 1`. The point estimate is the unbiased `r / pi`.
/// Fractional partial counts are rounded for the density.
pub fn scale_nowcast(partial: f64, pi: f64) -> Result<Nowcast> {
    if !(partial >= 0.0 && partial.is_finite()) {
        return Err(Error::Argument(format!("partial count {partial} must be finite and non-negative")));
    }
    if pi == 0.0 {
        return Err(Error::Unidentifiable);
    }
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::Argument(format!("completeness {pi} outside (0, 1]")));
    }
    let r = partial.round();
    let mut probs = Vec::new();
    if pi == 1.0 {
        probs.push(1.0);
    } else {
        let (ln_p, ln_q) = (pi.ln(), (1.0 - pi).ln());
        let mut cum = 0.0;
        let mut j = 0.0f64;
        while cum < 1.0 - TAIL_MASS {
            let lp = ln_gamma(j + r + 1.0) - ln_gamma(j + 1.0) - ln_gamma(r + 1.0) + (r + 1.0) * ln_p + j * ln_q;
            let p = lp.exp();
            probs.push(p);
            cum += p;
            j += 1.0;
        }
        let last = probs.len() - 1;
        probs[last] += 1.0 - cum;
    }
    let edges = (0..=probs.len()).map(|j| r + j as f64).collect();
    Ok(Nowcast {
        point: partial / pi,
        density: BinnedForecast::new(edges, probs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NowcastRow {
    pub location: String,
    pub event_time: i64,
    pub delay: u32,
    pub partial: f64,
    pub completeness: f64,
    pub point: f64,
    pub mean: f64,
}

/// Nowcasts for the `k` most recent event times known at `report_time`.
/// With completeness 1 everywhere the points equal the reported counts.
pub fn nowcast_recent(
    triangle: &ReportingTriangle,
    profile: &CompletenessProfile,
    report_time: i64,
    k: usize,
) -> Result<Vec<NowcastRow>> {
    let (first, _) = triangle
        .event_span()
        .ok_or_else(|| Error::Data(format!("no vintage records for location '{}'", triangle.location_id)))?;
    let from = (report_time - k as i64 + 1).max(first);
    (from..=report_time)
        .map(|e| {
            let delay = (report_time - e) as u32;
            let partial = triangle.known_at(e, report_time) as f64;
            let completeness = profile.at(delay);
            let nc = scale_nowcast(partial, completeness)?;
            Ok(NowcastRow {
                location: triangle.location_id.clone(),
                event_time: e,
                delay,
                partial,
                completeness,
                point: nc.point,
                mean: nc.mean(),
            })
        })
        .collect()
}

/// One row of the vintage CSV `location,event_time,report_time,count_delta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VintageRecord {
    pub location: String,
    pub event_time: i64,
    pub report_time: i64,
    /// Newly reported cases; downward revisions are not representable.
    pub count_delta: u64,
}

impl VintageRecord {
    fn check(&self) -> Result<()> {
        if self.report_time < self.event_time {
            return Err(Error::Data(format!(
                "report_time {} precedes event_time {} for '{}'",
                self.report_time, self.event_time, self.location
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RawVintage {
    location: String,
    event_time: i64,
    report_time: i64,
    count_delta: f64,
}

/// Parse a vintage CSV, reporting every bad row with its line number.
pub fn read_vintage_csv<R: Read>(input: R) -> std::result::Result<Vec<VintageRecord>, Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    let mut problems = Vec::new();
    match reader.headers() {
        Ok(h) => {
            let expected = ["location", "event_time", "report_time", "count_delta"];
            if h.iter().collect::<Vec<_>>() != expected {
                problems.push(format!("line 1: header must be {}", expected.join(",")));
                return Err(problems);
            }
        }
        Err(e) => return Err(vec![format!("line 1: {e}")]),
    }
    for (i, row) in reader.deserialize::<RawVintage>().enumerate() {
        let line = i + 2;
        match row {
            Err(e) => problems.push(format!("line {line}: {e}")),
            Ok(r) => {
                if !(r.count_delta >= 0.0) || r.count_delta.fract() != 0.0 {
                    problems.push(format!(
                        "line {line}: count_delta {} must be a non-negative integer",
                        r.count_delta
                    ));
                } else if r.report_time < r.event_time {
                    problems.push(format!(
                        "line {line}: report_time {} precedes event_time {}",
                        r.report_time, r.event_time
                    ));
                } else {
                    out.push(VintageRecord {
                        location: r.location,
                        event_time: r.event_time,
                        report_time: r.report_time,
                        count_delta: r.count_delta as u64,
                    });
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

/// Triangles grouped by location.
pub fn triangles(records: &[VintageRecord]) -> Result<BTreeMap<String, ReportingTriangle>> {
    let mut out: BTreeMap<String, ReportingTriangle> = BTreeMap::new();
    for r in records {
        out.entry(r.location.clone())
            .or_insert_with(|| ReportingTriangle::new(r.location.clone()))
            .add_record(r)?;
    }
    Ok(out)
}

#[derive(Debug, Default)]
struct StoreState {
    triangles: BTreeMap<String, ReportingTriangle>,
    last_report: BTreeMap<String, i64>,
}

/// Append-only vintage store backed by a JSON-lines journal. Report times
/// must be non-decreasing per location. Readers share a lock; appends are
/// serialized.
#[derive(Debug)]
pub struct VintageStore {
    journal: Option<PathBuf>,
    state: RwLock<StoreState>,
}

impl VintageStore {
    pub fn in_memory() -> Self {
        Self {
            journal: None,
            state: RwLock::default(),
        }
    }

    /// Open (or create) a journal, replaying existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let store = Self {
            journal: None,
            state: RwLock::default(),
        };
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let mut records = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                records.push(
                    serde_json::from_str::<VintageRecord>(&line)
                        .map_err(|e| Error::Data(format!("journal line {}: {e}", i + 1)))?,
                );
            }
            store.append(&records)?;
        }
        Ok(Self {
            journal: Some(path),
            ..store
        })
    }

    /// Validate and append a batch atomically (all or nothing).
    pub fn append(&self, records: &[VintageRecord]) -> Result<()> {
        let mut state = self.state.write().expect("vintage store lock poisoned");
        let mut last = state.last_report.clone();
        for r in records {
            r.check()?;
            if let Some(&prev) = last.get(&r.location) {
                if r.report_time < prev {
                    return Err(Error::Data(format!(
                        "report_time {} for '{}' is earlier than already stored {prev}",
                        r.report_time, r.location
                    )));
                }
            }
            last.insert(r.location.clone(), r.report_time);
        }
        if let Some(path) = &self.journal {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            for r in records {
                writeln!(file, "{}", serde_json::to_string(r)?)?;
            }
            file.flush()?;
        }
        for r in records {
            state
                .triangles
                .entry(r.location.clone())
                .or_insert_with(|| ReportingTriangle::new(r.location.clone()))
                .add_record(r)?;
        }
        state.last_report = last;
        Ok(())
    }

    /// Snapshot of one location's triangle.
    pub fn triangle(&self, location: &str) -> Option<ReportingTriangle> {
        self.state
            .read()
            .expect("vintage store lock poisoned")
            .triangles
            .get(location)
            .cloned()
    }

    pub fn locations(&self) -> Vec<String> {
        self.state
            .read()
            .expect("vintage store lock poisoned")
            .triangles
            .keys()
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn as_of_examples() {
        let mut tri = ReportingTriangle::new("A");
        tri.add(5, 2, 1);
        assert_eq!(tri.as_of(6, 1).unwrap().values(), &[0.0]);
        assert_eq!(tri.as_of(7, 1).unwrap().values(), &[1.0]);
        assert_eq!(tri.as_of(0, 1).unwrap().values(), &[0.0]);
        tri.add(6, 0, 4);
        tri.add(6, 3, 2);
        assert_eq!(tri.as_of(100, 1).unwrap().values(), &[1.0, 6.0]);
        assert_eq!(tri.finalized(6), 6);
        assert_eq!(tri.as_of(100, 1).unwrap().t0(), 5);
    }

    #[test]
    fn completeness_examples() {
        let mut tri = ReportingTriangle::new("A");
        for e in 1..=4 {
            tri.add(e, 0, 10);
        }
        assert_eq!(estimate_completeness(&tri, 1..=4).unwrap().pi(), &[1.0]);
        let mut tri = ReportingTriangle::new("A");
        tri.add(1, 0, 5);
        tri.add(1, 1, 5);
        assert_eq!(estimate_completeness(&tri, 1..=1).unwrap().pi(), &[0.5, 1.0]);
        assert!(matches!(estimate_completeness(&tri, 3..=9), Err(Error::DegenerateProfile)));
    }

    #[test]
    fn geometric_delays_match_generating_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q: f64 = 0.35;
        let mut tri = ReportingTriangle::new("A");
        for case in 0..10_000 {
            let mut d = 0;
            while rng.random::<f64>() < q {
                d += 1;
            }
            tri.add((case % 50) as i64, d, 1);
        }
        let prof = estimate_completeness(&tri, 0..=49).unwrap();
        for (d, p) in prof.pi().iter().enumerate() {
            let truth = 1.0 - q.powi(d as i32 + 1);
            assert!((p - truth).abs() < 0.02, "d={d} {p} vs {truth}");
        }
    }

    #[test]
    fn truncation() {
        let s = TimeSeries::new("A", 1, (0..100).map(f64::from).collect(), 52).unwrap();
        assert_eq!(truncate_incomplete(&s, 0).unwrap(), s);
        assert_eq!(truncate_incomplete(&s, 6).unwrap().len(), 94);
        assert!(matches!(truncate_incomplete(&s, 100), Err(Error::Range { .. })));
    }

    #[test]
    fn scaling_examples() {
        let full = scale_nowcast(10.0, 1.0).unwrap();
        assert_eq!(full.point, 10.0);
        assert_eq!(full.density.mass_at(10.0), 1.0);
        assert_eq!(scale_nowcast(10.0, 0.5).unwrap().point, 20.0);
        assert!(matches!(scale_nowcast(10.0, 0.0), Err(Error::Unidentifiable)));
        for (r, pi) in [(10.0, 0.5), (0.0, 0.3), (40.0, 0.4), (3.0, 0.9)] {
            let nc = scale_nowcast(r, pi).unwrap();
            assert!((nc.mean() - ((r + 1.0) / pi - 1.0)).abs() < 1e-6, "{r} {pi}");
            assert!(crate::forecast::Repr::Binned(nc.density).validate(true).is_ok());
        }
    }

    #[test]
    fn identity_when_reporting_is_complete() {
        let mut tri = ReportingTriangle::new("A");
        for e in 1..=10 {
            tri.add(e, 0, e as u64 * 3);
        }
        let prof = estimate_completeness(&tri, 1..=10).unwrap();
        for row in nowcast_recent(&tri, &prof, 10, 4).unwrap() {
            assert_eq!(row.point, row.partial);
            assert_eq!(row.point, row.event_time as f64 * 3.0);
        }
    }

    #[test]
    fn vintage_csv_diagnostics() {
        let good = "location,event_time,report_time,count_delta\nA,1,1,3\nA,1,2,2\n";
        let recs = read_vintage_csv(good.as_bytes()).unwrap();
        assert_eq!(triangles(&recs).unwrap()["A"].finalized(1), 5);
        let bad = "location,event_time,report_time,count_delta\nA,1,1,-3\nA,4,2,1\nA,x,2,1\n";
        let problems = read_vintage_csv(bad.as_bytes()).unwrap_err();
        assert_eq!(problems.len(), 3);
        assert!(problems[0].starts_with("line 2:"));
        assert!(problems[1].starts_with("line 3:"));
        assert!(problems[2].starts_with("line 4:"));
    }

    #[test]
    fn journal_is_append_only_and_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vintages.jsonl");
        let rec = |e, r, c| VintageRecord {
            location: "A".into(),
            event_time: e,
            report_time: r,
            count_delta: c,
        };
        {
            let store = VintageStore::open(&path).unwrap();
            store.append(&[rec(1, 1, 2), rec(2, 2, 1)]).unwrap();
            assert!(store.append(&[rec(1, 1, 5)]).is_err());
            store.append(&[rec(1, 3, 4)]).unwrap();
        }
        let store = VintageStore::open(&path).unwrap();
        let tri = store.triangle("A").unwrap();
        assert_eq!(tri.finalized(1), 6);
        assert_eq!(tri.known_at(1, 2), 2);
        assert_eq!(store.locations(), vec!["A".to_string()]);
    }

    proptest! {
        #[test]
        fn as_of_is_monotone_in_report_time(
            entries in prop::collection::vec((0i64..20, 0u32..6, 0u64..50), 1..40),
            t1 in 0i64..30,
            dt in 0i64..10,
        ) {
            let mut tri = ReportingTriangle::new("A");
            for (e, d, c) in entries {
                tri.add(e, d, c);
            }
            let a = tri.as_of(t1, 1).unwrap();
            let b = tri.as_of(t1 + dt, 1).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(x <= y);
            }
            if let Ok(p) = estimate_completeness(&tri, 0..=19) {
                prop_assert!(p.pi().windows(2).all(|w| w[1] >= w[0]));
                prop_assert!((p.pi()[p.pi().len() - 1] - 1.0).abs() < 1e-12);
            }
        }
    }
}
