use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::params::HyperParams;
use super::{require_len, FitData, FitResult, Forecaster, ForecasterSpec};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Seasonal autoregression fitted by least squares:
///
/// `y_t = c + sum_j phi_j y_{t-j} + sum_m (a_m sin(2 pi m s_t / L) + b_m cos(2 pi m s_t / L))`
///
/// where `s_t` is the season index. Multi-step means iterate the recursion
/// on predicted values; the predictive variance grows linearly with the step.
#[derive(Debug, Clone)]
pub struct SeasonalAr {
    spec: ForecasterSpec,
    lags: usize,
    harmonics: usize,
    /// First response index entering the regression. Fixing it across
    /// models of different lag order keeps their fit sets identical.
    first_response: Option<usize>,
}

impl SeasonalAr {
    pub const FAMILY: &'static str = "seasonal_ar";

    pub fn new(spec: ForecasterSpec) -> Result<Self> {
        let hp = HyperParams::new(
            Self::FAMILY,
            &spec.hyperparameters,
            &["lags", "harmonics", "first_response"],
        )?;
        let lags = hp.count("lags", 0, 1_000)?.unwrap_or(1);
        let harmonics = hp.count("harmonics", 0, 100)?.unwrap_or(1);
        let first_response = hp.count("first_response", 1, usize::MAX >> 1)?;
        if let Some(f) = first_response {
            if f <= lags {
                return Err(Error::Argument(format!(
                    "first_response {f} leaves no room for {lags} lags"
                )));
            }
        }
        spec.bin_grid.edges()?;
        Ok(Self {
            spec,
            lags,
            harmonics,
            first_response,
        })
    }

    fn first_row(&self) -> usize {
        self.first_response.unwrap_or(self.lags + 1)
    }

    /// (m, use_sin) pairs for the harmonic columns; sine terms vanish at
    /// the Nyquist harmonic and everything vanishes when L = 1.
    fn harmonic_terms(&self, l: usize) -> Vec<(usize, bool)> {
        let max_m = self.harmonics.min(l / 2);
        let mut out = Vec::new();
        for m in 1..=max_m {
            if 2 * m != l {
                out.push((m, true));
            }
            out.push((m, false));
        }
        out
    }

    fn n_coefficients(&self, l: usize) -> usize {
        1 + self.lags + self.harmonic_terms(l).len()
    }

    fn row(&self, series: &TimeSeries, lagged: &dyn Fn(usize) -> f64, t: usize) -> Vec<f64> {
        let l = series.cycle_length();
        let s = series.season_index(t as i64) as f64;
        let mut row = Vec::with_capacity(self.n_coefficients(l));
        row.push(1.0);
        for j in 1..=self.lags {
            row.push(lagged(t - j));
        }
        for (m, sin) in self.harmonic_terms(l) {
            let angle = 2.0 * PI * m as f64 * s / l as f64;
            row.push(if sin { angle.sin() } else { angle.cos() });
        }
        row
    }
}

impl Forecaster for SeasonalAr {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    /// Number of autoregressive lags.
    fn size(&self) -> usize {
        self.lags
    }

    fn min_train_len(&self, cycle_length: usize) -> usize {
        (2 * cycle_length).max(self.first_row() + self.n_coefficients(cycle_length))
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        let series = data.series;
        let l = series.cycle_length();
        require_len(data, self.min_train_len(l), Self::FAMILY)?;
        let values = series.values();
        let lagged = |t: usize| values[t - 1];
        let rows: Vec<usize> = (self.first_row()..=series.len()).filter(|&t| data.uses(t)).collect();
        let k = self.n_coefficients(l);
        if rows.len() < k {
            return Err(Error::Training(format!(
                "{} regression rows for {k} coefficients",
                rows.len()
            )));
        }
        let design: Vec<f64> = rows.iter().flat_map(|&t| self.row(series, &lagged, t)).collect();
        let x = DMatrix::from_row_slice(rows.len(), k, &design);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| values[t - 1]));
        let beta = x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Training(format!("least squares failed: {e}")))?;
        let resid = &y - &x * &beta;
        let sse = resid.norm_squared();
        let dof = rows.len().saturating_sub(k).max(1);
        let coefficients: Vec<f64> = beta.iter().copied().collect();
        let mut parameters: std::collections::BTreeMap<String, f64> = Default::default();
        parameters.insert("intercept".into(), coefficients[0]);
        for j in 1..=self.lags {
            parameters.insert(format!("phi_{j}"), coefficients[j]);
        }
        for (i, (m, sin)) in self.harmonic_terms(l).into_iter().enumerate() {
            let name = if sin { format!("sin_{m}") } else { format!("cos_{m}") };
            parameters.insert(name, coefficients[1 + self.lags + i]);
        }
        Ok(FitResult {
            family: Self::FAMILY.into(),
            parameters,
            tables: [("coefficients".to_string(), coefficients)].into_iter().collect(),
            training_loss: sse,
            residual_sd: (sse / dof as f64).sqrt(),
            converged: true,
            n_obs: rows.len(),
        })
    }

    fn horizon_scale(&self, step: usize) -> f64 {
        step as f64
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        let coef = fit.table("coefficients")?;
        if coef.len() != self.n_coefficients(history.cycle_length()) {
            return Err(Error::Argument("coefficient count does not match this model".into()));
        }
        if history.len() < self.lags {
            return Err(Error::Training(format!(
                "{} lags need at least that much history, got {}",
                self.lags,
                history.len()
            )));
        }
        let n = history.len();
        let mut extended = history.values().to_vec();
        for t in n + 1..=n + horizon {
            let known = extended.clone();
            let lagged = move |i: usize| known[i - 1];
            let row = self.row(history, &lagged, t);
            extended.push(row.iter().zip(coef).map(|(a, b)| a * b).sum());
        }
        Ok(extended.split_off(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BinGrid;

    fn spec(lags: usize) -> ForecasterSpec {
        ForecasterSpec::new(SeasonalAr::FAMILY, BinGrid::Edges(vec![0.0, 1000.0])).with("lags", lags as f64)
    }

    fn ar2_series(n: usize) -> TimeSeries {
        // y_t = 10 + 0.5 y_{t-1} - 0.2 y_{t-2} + 3 cos(2 pi s_t / 4)
        let mut v = vec![20.0, 21.0];
        for t in 3..=n {
            let s = crate::series::season_index(1, 4, t as i64) as f64;
            let y = 10.0 + 0.5 * v[t - 2] - 0.2 * v[t - 3] + 3.0 * (2.0 * PI * s / 4.0).cos();
            v.push(y);
        }
        TimeSeries::new("A", 1, v, 4).unwrap()
    }

    #[test]
    fn recovers_exact_coefficients() {
        let s = ar2_series(40);
        let m = SeasonalAr::new(spec(2)).unwrap();
        let fit = m.fit(&FitData::new(&s)).unwrap();
        assert!((fit.param("phi_1").unwrap() - 0.5).abs() < 1e-8);
        assert!((fit.param("phi_2").unwrap() + 0.2).abs() < 1e-8);
        assert!((fit.param("cos_1").unwrap() - 3.0).abs() < 1e-8);
        assert!(fit.param("sin_1").unwrap().abs() < 1e-8);
        assert!(fit.training_loss < 1e-12);
        assert_eq!(m.size(), 2);
    }

    #[test]
    fn multi_step_mean_iterates_the_recursion() {
        let full = ar2_series(46);
        let s = full.train_view(40).unwrap();
        let m = SeasonalAr::new(spec(2)).unwrap();
        let fit = m.fit(&FitData::new(&s)).unwrap();
        let path = m.mean_path(&fit, &s, 6).unwrap();
        for (h, v) in path.iter().enumerate() {
            assert!((v - full.values()[40 + h]).abs() < 1e-6);
        }
    }

    #[test]
    fn nested_models_never_increase_training_error() {
        let s = ar2_series(60);
        let noisy: Vec<f64> = s
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + ((i * 7919) % 13) as f64 * 0.3)
            .collect();
        let s = s.with_values(noisy).unwrap();
        let mut last = f64::INFINITY;
        for p in 1..=6 {
            let m = SeasonalAr::new(spec(p).with("first_response", 7.0)).unwrap();
            let fit = m.fit(&FitData::new(&s)).unwrap();
            assert!(fit.training_loss <= last + 1e-9);
            last = fit.training_loss;
        }
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(SeasonalAr::new(spec(3).with("first_response", 3.0)).is_err());
        let short = TimeSeries::new("A", 1, vec![1.0; 5], 4).unwrap();
        let m = SeasonalAr::new(spec(2)).unwrap();
        assert!(matches!(m.fit(&FitData::new(&short)), Err(Error::Training(_))));
    }
}
