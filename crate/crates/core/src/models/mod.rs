//! Forecaster families behind a common fit/forecast contract.
//!
//! Each family implements [`Forecaster`] and is registered by name in a
//! [`ForecasterRegistry`]; experiment configs select families at runtime.
//! All families emit binned predictive densities on the grid given in their
//! [`ForecasterSpec`].

mod density;
mod growth;
mod holt_winters;
mod params;
mod seasonal_ar;
mod seasonal_median;
pub mod simplex;
pub mod sir;

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use density::{empirical_on_grid, gaussian_on_grid};
pub use growth::{growth_peak, QuadGrowth};
pub use holt_winters::HoltWinters;
pub use params::HyperParams;
pub use seasonal_ar::SeasonalAr;
pub use seasonal_median::SeasonalMedian;
pub use sir::{simulate_sir, sir_step, Sir, SirState};

use crate::error::{Error, Result};
use crate::forecast::{interval_from_density, BinnedForecast, IntervalForecast};
use crate::scoring::Scorable;
use crate::series::{Target, TargetKind, TimeSeries};

/// Trajectory draws used for peak, peak-timing and threshold targets.
pub const MC_DRAWS: usize = 2_000;

/// Default limit on steps past the end of the conditioning data.
pub const DEFAULT_MAX_HORIZON: usize = 520;

/// Edges of the emitted density grid: explicit, or a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinGrid {
    Edges(Vec<f64>),
    Regular { start: f64, stop: f64, width: f64 },
}

impl BinGrid {
    pub fn edges(&self) -> Result<Vec<f64>> {
        let edges = match self {
            BinGrid::Edges(e) => e.clone(),
            BinGrid::Regular { start, stop, width } => {
                if !(width > &0.0) || !(stop > start) {
                    return Err(Error::Argument(format!(
                        "regular grid needs start < stop and width > 0, got {start}..{stop} by {width}"
                    )));
                }
                let n = ((stop - start) / width).round() as usize;
                (0..=n).map(|i| start + i as f64 * width).collect()
            }
        };
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("bin grid edges must be strictly increasing with at least one bin".into()));
        }
        Ok(edges)
    }
}

/// Configuration of one forecaster: family name, hyperparameters, output
/// grid and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterSpec {
    pub family: String,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    pub bin_grid: BinGrid,
    #[serde(default)]
    pub seed: u64,
}

impl ForecasterSpec {
    pub fn new(family: impl Into<String>, bin_grid: BinGrid) -> Self {
        Self {
            family: family.into(),
            hyperparameters: BTreeMap::new(),
            bin_grid,
            seed: 0,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Training data: a series plus an optional block of time indices whose
/// observations must not enter the training loss. Excluded observations can
/// still serve as lagged predictors.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub series: &'a TimeSeries,
    pub exclude: Option<(usize, usize)>,
}

impl<'a> FitData<'a> {
    pub fn new(series: &'a TimeSeries) -> Self {
        Self {
            series,
            exclude: None,
        }
    }

    pub fn excluding(series: &'a TimeSeries, block: RangeInclusive<usize>) -> Self {
        Self {
            series,
            exclude: Some((*block.start(), *block.end())),
        }
    }

    /// Whether the observation at 1-based `t` may enter the training loss.
    pub fn uses(&self, t: usize) -> bool {
        self.exclude.is_none_or(|(a, b)| t < a || t > b)
    }

    pub fn n_used(&self) -> usize {
        (1..=self.series.len()).filter(|&t| self.uses(t)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub parameters: BTreeMap<String, f64>,
    /// Family-specific fitted tables (e.g. regression coefficients, per
    /// season-index history).
    #[serde(default)]
    pub tables: BTreeMap<String, Vec<f64>>,
    pub training_loss: f64,
    pub residual_sd: f64,
    pub converged: bool,
    /// Observations entering the training loss.
    pub n_obs: usize,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Result<f64> {
        self.parameters
            .get(name)
            .copied()
            .ok_or_else(|| Error::Argument(format!("fit has no parameter '{name}'")))
    }

    pub fn table(&self, name: &str) -> Result<&[f64]> {
        self.tables
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Argument(format!("fit has no table '{name}'")))
    }

    /// Root mean squared in-sample error.
    pub fn training_rmse(&self) -> f64 {
        if self.n_obs == 0 {
            0.0
        } else {
            (self.training_loss / self.n_obs as f64).sqrt()
        }
    }
}

/// A model forecast for one target: the family's point prediction plus its
/// binned predictive density.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecast {
    pub target: Target,
    pub point: f64,
    pub density: BinnedForecast,
}

impl Scorable for ModelForecast {
    fn point(&self) -> Option<f64> {
        Some(self.point)
    }

    fn binned(&self) -> Option<&BinnedForecast> {
        Some(&self.density)
    }

    fn interval(&self, alpha: f64) -> Option<IntervalForecast> {
        interval_from_density(&self.density, alpha).ok()
    }
}

/// The fit/forecast contract shared by every family.
pub trait Forecaster: Send + Sync {
    fn family(&self) -> &'static str;

    fn spec(&self) -> &ForecasterSpec;

    /// Model size used for parsimony comparisons (covariate or parameter count).
    fn size(&self) -> usize;

    /// Minimum number of training observations for a series with the given
    /// cycle length.
    fn min_train_len(&self, cycle_length: usize) -> usize;

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult>;

    /// Expected values for steps `1..=horizon` after the end of `history`.
    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>>;

    /// Variance multiplier for the Gaussian predictive at `step`.
    fn horizon_scale(&self, _step: usize) -> f64 {
        1.0
    }

    fn max_horizon(&self) -> usize {
        self.spec()
            .hyperparameters
            .get("max_horizon")
            .map_or(DEFAULT_MAX_HORIZON, |&h| h as usize)
    }

    /// Predictive density for one step, given the mean path value there.
    fn step_density(
        &self,
        fit: &FitResult,
        _history: &TimeSeries,
        step: usize,
        mean: f64,
        edges: &[f64],
    ) -> Result<BinnedForecast> {
        let sd = fit.residual_sd * self.horizon_scale(step).sqrt();
        gaussian_on_grid(edges, mean, sd)
    }

    /// One random trajectory for steps `1..=mean.len()`.
    fn sample_path(
        &self,
        fit: &FitResult,
        _history: &TimeSeries,
        mean: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        mean.iter()
            .enumerate()
            .map(|(j, &m)| {
                let sd = fit.residual_sd * self.horizon_scale(j + 1).sqrt();
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (m + sd * z).max(0.0)
            })
            .collect()
    }

    fn forecast(
        &self,
        fit: &FitResult,
        history: &TimeSeries,
        targets: &[Target],
    ) -> Result<Vec<ModelForecast>> {
        forecast_targets(self, fit, history, targets)
    }
}

fn check_family(f: &(impl Forecaster + ?Sized), fit: &FitResult) -> Result<()> {
    if fit.family != f.family() {
        return Err(Error::Argument(format!(
            "fit from family '{}' used with '{}'",
            fit.family,
            f.family()
        )));
    }
    Ok(())
}

fn steps_ahead(f: &(impl Forecaster + ?Sized), history: &TimeSeries, time_index: i64) -> Result<usize> {
    let step = time_index - history.len() as i64;
    if step < 1 || step as usize > f.max_horizon() {
        return Err(Error::Horizon {
            step,
            max: f.max_horizon(),
        });
    }
    Ok(step as usize)
}

/// Shared forecasting routine: step targets from the mean path and step
/// density; peak, timing and threshold targets by Monte Carlo over seeded
/// trajectory draws.
pub fn forecast_targets<F: Forecaster + ?Sized>(
    f: &F,
    fit: &FitResult,
    history: &TimeSeries,
    targets: &[Target],
) -> Result<Vec<ModelForecast>> {
    check_family(f, fit)?;
    let edges = f.spec().bin_grid.edges()?;
    let mut out = Vec::with_capacity(targets.len());
    for (idx, target) in targets.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(
            f.spec()
                .seed
                .wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .wrapping_add(target.origin_t as u64),
        );
        let forecast = match &target.kind {
            TargetKind::StepAhead { k } => {
                let step = steps_ahead(f, history, target.origin_t + k)?;
                let path = f.mean_path(fit, history, step)?;
                let mean = path[step - 1];
                ModelForecast {
                    target: target.clone(),
                    point: mean.max(0.0),
                    density: f.step_density(fit, history, step, mean, &edges)?,
                }
            }
            TargetKind::ThresholdExceedance { k, threshold } => {
                let step = steps_ahead(f, history, target.origin_t + k)?;
                let path = f.mean_path(fit, history, step)?;
                let hits = (0..MC_DRAWS)
                    .filter(|_| f.sample_path(fit, history, &path, &mut rng)[step - 1] > *threshold)
                    .count();
                let p = hits as f64 / MC_DRAWS as f64;
                ModelForecast {
                    target: target.clone(),
                    point: p,
                    density: BinnedForecast::new(vec![0.0, 1.0, 2.0], vec![1.0 - p, p])?,
                }
            }
            TargetKind::PeakIncidence { season } | TargetKind::PeakTiming { season } => {
                let s = history.season(season)?.clone();
                let observed = history.len();
                let horizon = s.end.saturating_sub(observed);
                if horizon > f.max_horizon() {
                    return Err(Error::Horizon {
                        step: horizon as i64,
                        max: f.max_horizon(),
                    });
                }
                let path = if horizon > 0 {
                    f.mean_path(fit, history, horizon)?
                } else {
                    Vec::new()
                };
                let values = history.values();
                let mut peaks = Vec::with_capacity(MC_DRAWS);
                let mut timing = vec![0.0; s.len()];
                for _ in 0..MC_DRAWS {
                    let draw = if horizon > 0 {
                        f.sample_path(fit, history, &path, &mut rng)
                    } else {
                        Vec::new()
                    };
                    let at = |t: usize| {
                        if t <= observed {
                            values[t - 1]
                        } else {
                            draw[t - observed - 1]
                        }
                    };
                    let peak = s.indices().map(at).fold(f64::NEG_INFINITY, f64::max);
                    let winners: Vec<usize> = s.indices().filter(|&t| at(t) == peak).collect();
                    for t in &winners {
                        timing[t - s.start] += 1.0 / winners.len() as f64;
                    }
                    peaks.push(peak);
                }
                if matches!(target.kind, TargetKind::PeakIncidence { .. }) {
                    let mean = peaks.iter().sum::<f64>() / peaks.len() as f64;
                    ModelForecast {
                        target: target.clone(),
                        point: mean,
                        density: empirical_on_grid(&edges, &peaks)?,
                    }
                } else {
                    let probs: Vec<f64> = timing.iter().map(|c| c / MC_DRAWS as f64).collect();
                    let mode = probs
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                        .0;
                    let timing_edges: Vec<f64> =
                        (s.start..=s.end + 1).map(|t| t as f64 - 0.5).collect();
                    ModelForecast {
                        target: target.clone(),
                        point: (s.start + mode) as f64,
                        density: normalized(timing_edges, probs)?,
                    }
                }
            }
        };
        out.push(forecast);
    }
    Ok(out)
}

pub(crate) fn normalized(edges: Vec<f64>, mut probs: Vec<f64>) -> Result<BinnedForecast> {
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in &mut probs {
            *p /= total;
        }
    }
    BinnedForecast::new(edges, probs)
}

type ForecasterCtor = fn(&ForecasterSpec) -> Result<Box<dyn Forecaster>>;

/// Forecaster families by name.
pub struct ForecasterRegistry {
    entries: BTreeMap<&'static str, ForecasterCtor>,
}

impl Default for ForecasterRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(SeasonalMedian::FAMILY, |s| Ok(Box::new(SeasonalMedian::new(s.clone())?)));
        r.register(HoltWinters::FAMILY, |s| Ok(Box::new(HoltWinters::new(s.clone())?)));
        r.register(SeasonalAr::FAMILY, |s| Ok(Box::new(SeasonalAr::new(s.clone())?)));
        r.register(Sir::FAMILY, |s| Ok(Box::new(Sir::new(s.clone())?)));
        r.register(QuadGrowth::FAMILY, |s| Ok(Box::new(QuadGrowth::new(s.clone())?)));
        r
    }
}

impl ForecasterRegistry {
    pub fn register(&mut self, family: &'static str, ctor: ForecasterCtor) {
        self.entries.insert(family, ctor);
    }

    pub fn families(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, spec: &ForecasterSpec) -> Result<Box<dyn Forecaster>> {
        let ctor = self.entries.get(spec.family.as_str()).ok_or_else(|| Error::UnknownName {
            kind: "forecaster family",
            name: spec.family.clone(),
        })?;
        ctor(spec)
    }
}

pub(crate) fn require_len(data: &FitData<'_>, min: usize, family: &str) -> Result<()> {
    if data.series.len() < min || data.n_used() < min.min(data.series.len()) {
        return Err(Error::Training(format!(
            "{family} needs at least {min} training observations, got {} ({} usable)",
            data.series.len(),
            data.n_used()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::Repr;
    use crate::series::Season;

    fn grid() -> BinGrid {
        BinGrid::Regular {
            start: 0.0,
            stop: 200.0,
            width: 1.0,
        }
    }

    fn seasonal_series() -> TimeSeries {
        let values: Vec<f64> = (0..48)
            .map(|t| 50.0 + 20.0 * (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin() + (t % 5) as f64)
            .collect();
        TimeSeries::new("A", 1, values, 12)
            .unwrap()
            .with_seasons(vec![Season::new("next", 49, 60).unwrap()])
    }

    fn all_specs() -> Vec<ForecasterSpec> {
        vec![
            ForecasterSpec::new("seasonal_median", grid()),
            ForecasterSpec::new("holt_winters", grid()),
            ForecasterSpec::new("seasonal_ar", grid()).with("lags", 2.0),
            ForecasterSpec::new("sir", grid()).with("population", 10_000.0),
            ForecasterSpec::new("quad_growth", grid()),
        ]
    }

    #[test]
    fn registry_builds_every_family() {
        let reg = ForecasterRegistry::default();
        assert_eq!(reg.families().count(), 5);
        for spec in all_specs() {
            assert_eq!(reg.build(&spec).unwrap().family(), spec.family);
        }
        assert!(matches!(
            reg.build(&ForecasterSpec::new("arima", grid())),
            Err(Error::UnknownName { .. })
        ));
    }

    #[test]
    fn unknown_hyperparameters_are_rejected() {
        let reg = ForecasterRegistry::default();
        let spec = ForecasterSpec::new("holt_winters", grid()).with("alhpa", 0.3);
        assert!(reg.build(&spec).is_err());
        let spec = ForecasterSpec::new("holt_winters", grid()).with("alpha", 1.3);
        assert!(reg.build(&spec).is_err());
    }

    #[test]
    fn regular_grid_edges() {
        let e = BinGrid::Regular { start: 0.0, stop: 2.0, width: 0.5 }.edges().unwrap();
        assert_eq!(e, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(BinGrid::Edges(vec![0.0, 0.0]).edges().is_err());
        assert!(BinGrid::Regular { start: 0.0, stop: 2.0, width: 0.0 }.edges().is_err());
    }

    #[test]
    fn emitted_densities_are_valid_incidence_forecasts() {
        let reg = ForecasterRegistry::default();
        let series = seasonal_series();
        let targets = vec![
            Target::step_ahead(48, 1),
            Target::step_ahead(48, 3),
            Target::threshold(48, 2, 60.0),
            Target::peak_incidence(48, "next"),
            Target::peak_timing(48, "next"),
        ];
        for spec in all_specs().into_iter().filter(|s| s.family != "sir" && s.family != "quad_growth") {
            let f = reg.build(&spec).unwrap();
            let fit = f.fit(&FitData::new(&series)).unwrap();
            let out = f.forecast(&fit, &series, &targets).unwrap();
            assert_eq!(out.len(), targets.len());
            for fc in &out {
                let repr = Repr::Binned(fc.density.clone());
                assert!(repr.validate(true).is_ok(), "{} {:?}", spec.family, fc.target);
            }
        }
    }

    #[test]
    fn forecasts_are_reproducible() {
        let reg = ForecasterRegistry::default();
        let series = seasonal_series();
        let targets = vec![Target::peak_incidence(48, "next"), Target::step_ahead(48, 2)];
        for spec in all_specs().into_iter().take(3) {
            let f = reg.build(&spec.with_seed(7)).unwrap();
            let a = f.fit(&FitData::new(&series)).unwrap();
            let b = f.fit(&FitData::new(&series)).unwrap();
            assert_eq!(a, b);
            assert_eq!(
                f.forecast(&a, &series, &targets).unwrap(),
                f.forecast(&b, &series, &targets).unwrap()
            );
        }
    }

    #[test]
    fn horizon_limits() {
        let reg = ForecasterRegistry::default();
        let series = seasonal_series();
        let f = reg
            .build(&ForecasterSpec::new("seasonal_median", grid()).with("max_horizon", 4.0))
            .unwrap();
        let fit = f.fit(&FitData::new(&series)).unwrap();
        assert!(matches!(
            f.forecast(&fit, &series, &[Target::step_ahead(48, 5)]),
            Err(Error::Horizon { step: 5, .. })
        ));
        assert!(matches!(
            f.forecast(&fit, &series, &[Target::step_ahead(48, 0)]),
            Err(Error::Horizon { step: 0, .. })
        ));
        let other = reg.build(&ForecasterSpec::new("holt_winters", grid())).unwrap();
        assert!(other.forecast(&fit, &series, &[Target::step_ahead(48, 1)]).is_err());
    }

    #[test]
    fn exclusion_mask() {
        let s = seasonal_series();
        let d = FitData::excluding(&s, 13..=24);
        assert!(d.uses(12) && !d.uses(13) && !d.uses(24) && d.uses(25));
        assert_eq!(d.n_used(), 36);
    }
}
