//! Train / cross-validate / test workflow: leave-one-season-out (or
//! prospective) cross-validation, one-standard-error model selection, and
//! rolling-origin testing with refits before each test season.
//!
//! Every evaluated season is forecast from the end of the data preceding
//! it: targets are `k = 1..=len(season)` steps ahead of `season.start - 1`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{combine, train_weights_from_masses, TrainedWeights};
use crate::error::{Error, Result};
use crate::forecast::{point_from_density, Loss};
use crate::models::{FitData, FitResult, Forecaster, ForecasterRegistry, ForecasterSpec, ModelForecast};
use crate::scoring::{rmae, CaseId, CaseScore, Metric, ScoreReport};
use crate::series::{realized_target, Realized, Season, Target, TimeSeries};

/// A named, built forecaster.
#[derive(Clone)]
pub struct ModelEntry {
    pub id: String,
    pub forecaster: Arc<dyn Forecaster>,
}

impl ModelEntry {
    pub fn new(id: impl Into<String>, forecaster: Arc<dyn Forecaster>) -> Self {
        Self {
            id: id.into(),
            forecaster,
        }
    }

    pub fn from_spec(id: impl Into<String>, spec: &ForecasterSpec, registry: &ForecasterRegistry) -> Result<Self> {
        Ok(Self::new(id, Arc::from(registry.build(spec)?)))
    }

    pub fn size(&self) -> usize {
        self.forecaster.size()
    }
}

impl std::fmt::Debug for ModelEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEntry")
            .field("id", &self.id)
            .field("family", &self.forecaster.family())
            .finish()
    }
}

/// Training and testing seasons, by label in each series' season calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub training_seasons: Vec<String>,
    pub testing_seasons: Vec<String>,
}

impl SplitSpec {
    pub fn new(training_seasons: Vec<String>, testing_seasons: Vec<String>) -> Result<Self> {
        let split = Self {
            training_seasons,
            testing_seasons,
        };
        let mut seen = std::collections::BTreeSet::new();
        for label in split.training_seasons.iter().chain(&split.testing_seasons) {
            if !seen.insert(label) {
                return Err(Error::Argument(format!("season '{label}' appears twice in the split")));
            }
        }
        Ok(split)
    }

    /// Resolve labels against a series; testing seasons must follow every
    /// training season.
    pub fn resolve(&self, series: &TimeSeries) -> Result<(Vec<Season>, Vec<Season>)> {
        let get = |labels: &[String]| -> Result<Vec<Season>> {
            labels.iter().map(|l| series.season(l).cloned()).collect()
        };
        let train = get(&self.training_seasons)?;
        let test = get(&self.testing_seasons)?;
        for (i, a) in train.iter().enumerate() {
            for b in &train[i + 1..] {
                if a.start <= b.end && b.start <= a.end {
                    return Err(Error::Argument(format!("seasons '{}' and '{}' overlap", a.label, b.label)));
                }
            }
        }
        let train_end = train.iter().map(|s| s.end).max().unwrap_or(0);
        if let Some(s) = test.iter().find(|s| s.start <= train_end) {
            return Err(Error::Argument(format!(
                "testing season '{}' does not follow all training seasons",
                s.label
            )));
        }
        if let Some(s) = train.iter().chain(&test).find(|s| s.end > series.len()) {
            return Err(Error::Range {
                index: s.end as i64,
                len: series.len(),
            });
        }
        Ok((train, test))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Fit on every other training season, with the held-out one masked.
    #[default]
    LeaveOneSeasonOut,
    /// Fit only on data before the held-out season.
    Prospective,
}

/// Band used by the one-standard-error selection rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadRule {
    /// Standard error of the best model's fold scores, `sd / sqrt(folds)`.
    #[default]
    StandardError,
    /// Raw standard deviation of the fold scores.
    StandardDeviation,
}

/// A forecast for one case with its realized outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseForecast {
    pub case: CaseId,
    pub season: String,
    pub forecast: ModelForecast,
    pub truth: Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldScore {
    pub season: String,
    /// Mean metric over all locations and targets of the season; `None`
    /// when the fold failed.
    pub score: Option<f64>,
    pub n_cases: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub model_id: String,
    pub size: usize,
    pub metric: String,
    pub folds: Vec<FoldScore>,
    /// Mean of the successful fold scores.
    pub cv_error: f64,
    /// Sample standard deviation of the successful fold scores.
    pub cv_sd: f64,
    /// `cv_sd / sqrt(folds)`.
    pub cv_se: f64,
    /// Pooled in-sample RMSE of fits on the whole training span.
    pub training_error: Option<f64>,
    #[serde(skip)]
    pub cases: Vec<CaseForecast>,
}

impl CvResult {
    pub fn spread(&self, rule: SpreadRule) -> f64 {
        match rule {
            SpreadRule::StandardError => self.cv_se,
            SpreadRule::StandardDeviation => self.cv_sd,
        }
    }

    pub fn failed_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.score.is_none()).count()
    }
}

/// Step-ahead targets covering `season`, all from its eve.
pub fn season_targets(season: &Season) -> Vec<Target> {
    let origin = season.start as i64 - 1;
    (1..=season.len() as i64).map(|k| Target::step_ahead(origin, k)).collect()
}

/// Forecast `season` with a fitted model, conditioning only on data before it.
pub fn forecast_season(
    model: &ModelEntry,
    fit: &FitResult,
    series: &TimeSeries,
    season: &Season,
) -> Result<Vec<CaseForecast>> {
    if season.start < 2 {
        return Err(Error::Argument(format!("season '{}' has no data before it", season.label)));
    }
    let history = series.train_view(season.start - 1)?;
    let targets = season_targets(season);
    let forecasts = model.forecaster.forecast(fit, &history, &targets)?;
    forecasts
        .into_iter()
        .map(|f| {
            let truth = realized_target(series, &f.target)?;
            Ok(CaseForecast {
                case: CaseId {
                    location: series.location_id().to_string(),
                    origin_t: f.target.origin_t,
                    target: f.target.descriptor(),
                },
                season: season.label.clone(),
                forecast: f,
                truth,
            })
        })
        .collect()
}

pub fn score_cases(metric: &dyn Metric, cases: &[CaseForecast]) -> Result<Vec<CaseScore>> {
    cases
        .iter()
        .map(|c| {
            Ok(CaseScore {
                case: c.case.clone(),
                score: metric.score(&c.forecast, &c.truth)?,
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn one_fold(
    model: &ModelEntry,
    data: &[TimeSeries],
    split: &SplitSpec,
    label: &str,
    mode: CvMode,
    metric: &dyn Metric,
) -> Result<Vec<CaseForecast>> {
    let mut cases = Vec::new();
    for series in data {
        let (train, _) = split.resolve(series)?;
        let season = series.season(label)?;
        let fit = match mode {
            CvMode::LeaveOneSeasonOut => {
                let span_end = train.iter().map(|s| s.end).max().unwrap_or(0);
                let span = series.train_view(span_end)?;
                model
                    .forecaster
                    .fit(&FitData::excluding(&span, season.start..=season.end))?
            }
            CvMode::Prospective => {
                let before = series.train_view(season.start.saturating_sub(1).max(1))?;
                model.forecaster.fit(&FitData::new(&before))?
            }
        };
        cases.extend(forecast_season(model, &fit, series, season)?);
    }
    // surface scoring problems as fold failures
    score_cases(metric, &cases)?;
    Ok(cases)
}

/// Pooled in-sample RMSE over all locations, fitting on the whole training span.
pub fn training_error(model: &ModelEntry, data: &[TimeSeries], split: &SplitSpec) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for series in data {
        let (train, _) = split.resolve(series)?;
        let span_end = train.iter().map(|s| s.end).max().unwrap_or(series.len());
        let fit = model.forecaster.fit(&FitData::new(&series.train_view(span_end)?))?;
        sse += fit.training_loss;
        n += fit.n_obs;
    }
    if n == 0 {
        return Err(Error::Training("no training observations".into()));
    }
    Ok((sse / n as f64).sqrt())
}

/// Cross-validation over the training seasons. Failed folds are recorded
/// and excluded from the aggregate.
pub fn cross_validate(
    model: &ModelEntry,
    data: &[TimeSeries],
    split: &SplitSpec,
    metric: &dyn Metric,
    mode: CvMode,
) -> Result<CvResult> {
    if data.is_empty() {
        return Err(Error::Argument("no series to cross-validate on".into()));
    }
    if split.training_seasons.len() < 2 {
        return Err(Error::Argument(format!(
            "cross-validation needs at least 2 training seasons, got {}",
            split.training_seasons.len()
        )));
    }
    for s in data {
        split.resolve(s)?;
    }
    let outcomes: Vec<(String, Result<Vec<CaseForecast>>)> = split
        .training_seasons
        .par_iter()
        .map(|label| (label.clone(), one_fold(model, data, split, label, mode, metric)))
        .collect();

    let mut folds = Vec::with_capacity(outcomes.len());
    let mut cases = Vec::new();
    let mut scores = Vec::new();
    for (season, outcome) in outcomes {
        match outcome {
            Ok(fold_cases) => {
                let per_case = score_cases(metric, &fold_cases)?;
                let s = mean(&per_case.iter().map(|c| c.score).collect::<Vec<_>>());
                scores.push(s);
                folds.push(FoldScore {
                    season,
                    score: Some(s),
                    n_cases: fold_cases.len(),
                    error: None,
                });
                cases.extend(fold_cases);
            }
            Err(e) => folds.push(FoldScore {
                season,
                score: None,
                n_cases: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    if scores.len() < folds.len() {
        warn!(
            "model '{}': {} of {} folds failed; CV error uses the rest",
            model.id,
            folds.len() - scores.len(),
            folds.len()
        );
    }
    let (cv_error, cv_sd) = if scores.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (mean(&scores), sample_sd(&scores))
    };
    Ok(CvResult {
        model_id: model.id.clone(),
        size: model.size(),
        metric: metric.name(),
        folds,
        cv_error,
        cv_sd,
        cv_se: cv_sd / (scores.len() as f64).sqrt(),
        training_error: training_error(model, data, split).ok(),
        cases,
    })
}

/// Leave-one-season-out cross-validation.
pub fn loyo_cv(model: &ModelEntry, data: &[TimeSeries], split: &SplitSpec, metric: &dyn Metric) -> Result<CvResult> {
    cross_validate(model, data, split, metric, CvMode::LeaveOneSeasonOut)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub best: String,
    pub parsimonious: String,
}

/// `best` minimizes CV error (ties: smaller size, then id). `parsimonious`
/// is the smallest model within one spread of the minimum, where the spread
/// is the best model's standard error (or standard deviation).
pub fn select_models(results: &[CvResult], rule: SpreadRule) -> Result<Selection> {
    let usable: Vec<&CvResult> = results.iter().filter(|r| r.cv_error.is_finite()).collect();
    let by_rank = |a: &CvResult, b: &CvResult| {
        a.cv_error
            .total_cmp(&b.cv_error)
            .then(a.size.cmp(&b.size))
            .then(a.model_id.cmp(&b.model_id))
    };
    let best = usable
        .iter()
        .min_by(|a, b| by_rank(a, b))
        .ok_or_else(|| Error::Argument("no model has a finite CV error".into()))?;
    let band = best.cv_error + best.spread(rule);
    let parsimonious = usable
        .iter()
        .filter(|r| r.cv_error <= band)
        .min_by(|a, b| a.size.cmp(&b.size).then(by_rank(a, b)))
        .expect("best is within its own band");
    Ok(Selection {
        best: best.model_id.clone(),
        parsimonious: parsimonious.model_id.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefitRecord {
    pub season: String,
    pub location: String,
    /// Last time index in the fit window.
    pub fit_through: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ModelTest {
    pub model_id: String,
    pub size: usize,
    pub refits: Vec<RefitRecord>,
    pub cases: Vec<CaseForecast>,
}

impl ModelTest {
    pub fn report(&self, metric: &dyn Metric) -> Result<ScoreReport> {
        Ok(ScoreReport::new(self.model_id.clone(), metric.name(), score_cases(metric, &self.cases)?))
    }

    pub fn absolute_errors(&self) -> Vec<f64> {
        self.cases
            .iter()
            .map(|c| (c.forecast.point - c.truth.scalar()).abs())
            .collect()
    }
}

/// Rolling-origin testing: before each testing season, refit on all data
/// strictly before it (earlier test seasons included), then forecast it.
/// A failed refit skips that season for that location.
pub fn rolling_origin_test(models: &[ModelEntry], data: &[TimeSeries], split: &SplitSpec) -> Result<Vec<ModelTest>> {
    if split.testing_seasons.is_empty() {
        return Err(Error::Argument("no testing seasons".into()));
    }
    for s in data {
        split.resolve(s)?;
    }
    let units: Vec<(usize, usize, &String)> = (0..models.len())
        .flat_map(|m| (0..data.len()).flat_map(move |d| split.testing_seasons.iter().map(move |l| (m, d, l))))
        .collect();
    let outcomes: Vec<(RefitRecord, Vec<CaseForecast>)> = units
        .par_iter()
        .map(|&(m, d, label)| {
            let (model, series) = (&models[m], &data[d]);
            let season = series.season(label).expect("resolved above");
            let fit_through = season.start - 1;
            let run = || -> Result<Vec<CaseForecast>> {
                let window = series.train_view(fit_through)?;
                let fit = model.forecaster.fit(&FitData::new(&window))?;
                forecast_season(model, &fit, series, season)
            };
            let (error, cases) = match run() {
                Ok(c) => (None, c),
                Err(e) => {
                    warn!("model '{}' skipped season '{label}' at '{}': {e}", model.id, series.location_id());
                    (Some(e.to_string()), Vec::new())
                }
            };
            let record = RefitRecord {
                season: label.clone(),
                location: series.location_id().to_string(),
                fit_through,
                error,
            };
            (record, cases)
        })
        .collect();

    let per_model = data.len() * split.testing_seasons.len();
    Ok(models
        .iter()
        .zip(outcomes.chunks(per_model))
        .map(|(model, chunk)| ModelTest {
            model_id: model.id.clone(),
            size: model.size(),
            refits: chunk.iter().map(|(r, _)| r.clone()).collect(),
            cases: chunk.iter().flat_map(|(_, c)| c.iter().cloned()).collect(),
        })
        .collect())
}

/// Ratio of a model's test MAE to a baseline's over the cases both forecast.
pub fn relative_mae(model: &ModelTest, baseline: &ModelTest) -> Result<f64> {
    let base: BTreeMap<&CaseId, f64> = baseline
        .cases
        .iter()
        .map(|c| (&c.case, (c.forecast.point - c.truth.scalar()).abs()))
        .collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for c in &model.cases {
        if let Some(&e) = base.get(&c.case) {
            a.push((c.forecast.point - c.truth.scalar()).abs());
            b.push(e);
        }
    }
    if a.is_empty() {
        return Err(Error::Argument(format!(
            "'{}' and '{}' share no forecast cases",
            model.model_id, baseline.model_id
        )));
    }
    rmae(&a, &b)
}

/// Per-case component masses on the realized outcome, over cases that every
/// component forecast, in case order.
fn aligned_cases<'a>(components: &[&'a [CaseForecast]]) -> Vec<Vec<&'a CaseForecast>> {
    let index: Vec<BTreeMap<&CaseId, &CaseForecast>> = components
        .iter()
        .map(|cs| cs.iter().map(|c| (&c.case, c)).collect())
        .collect();
    let Some(first) = index.first() else {
        return Vec::new();
    };
    first
        .keys()
        .filter_map(|id| index.iter().map(|m| m.get(id).copied()).collect::<Option<Vec<_>>>())
        .collect()
}

fn truth_mass(c: &CaseForecast) -> f64 {
    match &c.truth {
        Realized::Indices(set) => set.iter().map(|&t| c.forecast.density.mass_at(t as f64)).sum(),
        other => c.forecast.density.mass_at(other.scalar()),
    }
}

/// Train linear-pool weights on out-of-sample component forecasts.
pub fn train_ensemble(components: &[&[CaseForecast]]) -> Result<TrainedWeights> {
    let aligned = aligned_cases(components);
    if aligned.is_empty() {
        return Err(Error::Argument("ensemble components share no cases".into()));
    }
    let masses: Vec<Vec<f64>> = aligned.iter().map(|cs| cs.iter().map(|c| truth_mass(c)).collect()).collect();
    train_weights_from_masses(&masses)
}

/// Mixture forecasts for every case all components forecast. The point is
/// the mixture median.
pub fn ensemble_cases(components: &[&[CaseForecast]], weights: &[f64]) -> Result<Vec<CaseForecast>> {
    aligned_cases(components)
        .into_iter()
        .map(|cs| {
            let densities: Vec<_> = cs.iter().map(|c| &c.forecast.density).collect();
            let density = combine(&densities, weights)?;
            let point = point_from_density(&density, Loss::Absolute).value;
            Ok(CaseForecast {
                case: cs[0].case.clone(),
                season: cs[0].season.clone(),
                forecast: ModelForecast {
                    target: cs[0].forecast.target.clone(),
                    point,
                    density,
                },
                truth: cs[0].truth.clone(),
            })
        })
        .collect()
}

/// One call into a forecaster, as seen by [`Audited`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Fit {
        location: String,
        /// Length of the series handed to `fit`.
        len: usize,
    },
    Forecast {
        location: String,
        /// Length of the data the fit was trained on.
        fit_len: usize,
        /// Length of the conditioning history.
        history_len: usize,
        /// Earliest time index among the requested targets.
        first_target: i64,
    },
}

const AUDIT_TABLE: &str = "audit_fit_len";

/// Decorator that records every fit and forecast call, so a run can be
/// checked for access to data at or after the forecast targets.
pub struct Audited {
    inner: Arc<dyn Forecaster>,
    log: Arc<Mutex<Vec<Access>>>,
}

impl Audited {
    pub fn new(inner: Arc<dyn Forecaster>) -> (Self, Arc<Mutex<Vec<Access>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: Arc::clone(&log),
            },
            log,
        )
    }

    fn record(&self, a: Access) {
        self.log.lock().expect("audit log poisoned").push(a);
    }
}

impl Forecaster for Audited {
    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn spec(&self) -> &ForecasterSpec {
        self.inner.spec()
    }

    fn size(&self) -> usize {
        self.inner.size()
    }

    fn min_train_len(&self, cycle_length: usize) -> usize {
        self.inner.min_train_len(cycle_length)
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        self.record(Access::Fit {
            location: data.series.location_id().to_string(),
            len: data.series.len(),
        });
        let mut fit = self.inner.fit(data)?;
        fit.tables.insert(AUDIT_TABLE.into(), vec![data.series.len() as f64]);
        Ok(fit)
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        self.inner.mean_path(fit, history, horizon)
    }

    fn forecast(&self, fit: &FitResult, history: &TimeSeries, targets: &[Target]) -> Result<Vec<ModelForecast>> {
        let fit_len = fit.table(AUDIT_TABLE).map_or(usize::MAX, |t| t[0] as usize);
        self.record(Access::Forecast {
            location: history.location_id().to_string(),
            fit_len,
            history_len: history.len(),
            first_target: targets.iter().filter_map(Target::time_index).min().unwrap_or(i64::MAX),
        });
        self.inner.forecast(fit, history, targets)
    }
}
