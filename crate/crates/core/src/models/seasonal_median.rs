use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::HyperParams;
use super::{empirical_on_grid, require_len, FitData, FitResult, Forecaster, ForecasterSpec};
use crate::error::{Error, Result};
use crate::forecast::BinnedForecast;
use crate::series::TimeSeries;

/// Baseline: for each position in the seasonal cycle, the historical values
/// at that position. Forecasts are their median, with their empirical
/// distribution as the density.
#[derive(Debug, Clone)]
pub struct SeasonalMedian {
    spec: ForecasterSpec,
    /// Most recent cycles kept per season index; `None` keeps all.
    window: Option<usize>,
}

impl SeasonalMedian {
    pub const FAMILY: &'static str = "seasonal_median";

    pub fn new(spec: ForecasterSpec) -> Result<Self> {
        let hp = HyperParams::new(Self::FAMILY, &spec.hyperparameters, &["window_cycles"])?;
        let window = hp.count("window_cycles", 1, 10_000)?;
        spec.bin_grid.edges()?;
        Ok(Self { spec, window })
    }

    fn history_for(&self, fit: &FitResult, history: &TimeSeries, step: usize) -> Result<Vec<f64>> {
        let t = history.len() as i64 + step as i64;
        let idx = history.season_index(t);
        let values = fit.table(&table_name(idx))?;
        if values.is_empty() {
            return Err(Error::Training(format!("no training values at season index {idx}")));
        }
        Ok(values.to_vec())
    }
}

fn table_name(season_index: usize) -> String {
    format!("season_index_{season_index}")
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Forecaster for SeasonalMedian {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    fn size(&self) -> usize {
        0
    }

    fn min_train_len(&self, cycle_length: usize) -> usize {
        2 * cycle_length
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        let series = data.series;
        let l = series.cycle_length();
        require_len(data, self.min_train_len(l), Self::FAMILY)?;
        let mut by_index: Vec<Vec<f64>> = vec![Vec::new(); l];
        for t in 1..=series.len() {
            if data.uses(t) {
                by_index[series.season_index(t as i64) - 1].push(series.values()[t - 1]);
            }
        }
        if let Some(w) = self.window {
            for v in &mut by_index {
                let drop = v.len().saturating_sub(w);
                v.drain(..drop);
            }
        }
        if let Some(i) = by_index.iter().position(Vec::is_empty) {
            return Err(Error::Training(format!("no training values at season index {}", i + 1)));
        }

        // in-sample fit: each observation against its season-index median
        let medians: Vec<f64> = by_index.iter().map(|v| median(v)).collect();
        let mut sse = 0.0;
        let mut n = 0;
        for t in 1..=series.len() {
            if data.uses(t) {
                let r = series.values()[t - 1] - medians[series.season_index(t as i64) - 1];
                sse += r * r;
                n += 1;
            }
        }
        let tables = by_index
            .into_iter()
            .enumerate()
            .map(|(i, v)| (table_name(i + 1), v))
            .collect();
        Ok(FitResult {
            family: Self::FAMILY.into(),
            parameters: [("cycle_length".to_string(), l as f64)].into_iter().collect(),
            tables,
            training_loss: sse,
            residual_sd: (sse / n as f64).sqrt(),
            converged: true,
            n_obs: n,
        })
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        (1..=horizon)
            .map(|step| Ok(median(&self.history_for(fit, history, step)?)))
            .collect()
    }

    fn step_density(
        &self,
        fit: &FitResult,
        history: &TimeSeries,
        step: usize,
        _mean: f64,
        edges: &[f64],
    ) -> Result<BinnedForecast> {
        empirical_on_grid(edges, &self.history_for(fit, history, step)?)
    }

    fn sample_path(
        &self,
        fit: &FitResult,
        history: &TimeSeries,
        mean: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        (1..=mean.len())
            .map(|step| {
                let pool = self
                    .history_for(fit, history, step)
                    .expect("season tables validated by mean_path");
                pool[rng.random_range(0..pool.len())]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BinGrid;
    use crate::series::Target;

    fn spec() -> ForecasterSpec {
        ForecasterSpec::new(
            SeasonalMedian::FAMILY,
            BinGrid::Regular {
                start: 0.0,
                stop: 20.0,
                width: 1.0,
            },
        )
    }

    #[test]
    fn point_forecast_is_the_same_season_median() {
        // cycle of 2: season index 1 sees 2, 4, 6; index 2 sees 1, 1, 1
        let s = TimeSeries::new("A", 1, vec![2.0, 1.0, 4.0, 1.0, 6.0, 1.0], 2).unwrap();
        let m = SeasonalMedian::new(spec()).unwrap();
        let fit = m.fit(&FitData::new(&s)).unwrap();
        let out = m.forecast(&fit, &s, &[Target::step_ahead(6, 1), Target::step_ahead(6, 2)]).unwrap();
        assert_eq!(out[0].point, 4.0);
        assert_eq!(out[1].point, 1.0);
        let p = out[0].density.probs();
        assert!((p[2] - 1.0 / 3.0).abs() < 1e-12 && (p[4] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn window_keeps_recent_cycles() {
        let s = TimeSeries::new("A", 1, vec![2.0, 1.0, 4.0, 1.0, 6.0, 1.0], 2).unwrap();
        let m = SeasonalMedian::new(spec().with("window_cycles", 2.0)).unwrap();
        let fit = m.fit(&FitData::new(&s)).unwrap();
        assert_eq!(fit.table("season_index_1").unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn exclusion_and_minimum_length() {
        let s = TimeSeries::new("A", 1, vec![2.0, 1.0, 4.0, 1.0, 6.0, 1.0], 2).unwrap();
        let m = SeasonalMedian::new(spec()).unwrap();
        let fit = m.fit(&FitData::excluding(&s, 3..=4)).unwrap();
        assert_eq!(fit.table("season_index_1").unwrap(), &[2.0, 6.0]);
        let short = TimeSeries::new("A", 1, vec![2.0, 1.0, 4.0], 2).unwrap();
        assert!(matches!(m.fit(&FitData::new(&short)), Err(Error::Training(_))));
    }
}
