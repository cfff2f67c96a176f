use nalgebra::{DMatrix, DVector};

use super::params::HyperParams;
use super::{require_len, FitData, FitResult, Forecaster, ForecasterSpec};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Quadratic (logistic-type) growth on cumulative cases:
/// `y_t = a C_{t-1} - (a / K) C_{t-1}^2`, with `C_{t-1}` the cumulative
/// incidence through `t-1`. Incidence is a parabola in `C` that rises and
/// falls, peaking at `a K / 4` when `C = K / 2`.
#[derive(Debug, Clone)]
pub struct QuadGrowth {
    spec: ForecasterSpec,
}

/// Peak incidence and the cumulative count at which it occurs.
pub fn growth_peak(a: f64, k: f64) -> (f64, f64) {
    (a * k / 4.0, k / 2.0)
}

impl QuadGrowth {
    pub const FAMILY: &'static str = "quad_growth";

    pub fn new(spec: ForecasterSpec) -> Result<Self> {
        HyperParams::new(Self::FAMILY, &spec.hyperparameters, &[])?;
        spec.bin_grid.edges()?;
        Ok(Self { spec })
    }
}

fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |c, v| {
            *c += v;
            Some(*c)
        })
        .collect()
}

impl Forecaster for QuadGrowth {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    fn size(&self) -> usize {
        2
    }

    fn min_train_len(&self, _cycle_length: usize) -> usize {
        4
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        require_len(data, 4, Self::FAMILY)?;
        let values = data.series.values();
        let cum = cumulative(values);
        let rows: Vec<usize> = (2..=values.len()).filter(|&t| data.uses(t)).collect();
        if rows.len() < 2 {
            return Err(Error::Training("quad_growth needs two usable rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), 2, |i, j| {
            let c = cum[rows[i] - 2];
            if j == 0 {
                c
            } else {
                c * c
            }
        });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| values[t - 1]));
        let theta = x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-14)
            .map_err(|e| Error::Training(format!("least squares failed: {e}")))?;
        let (a, q) = (theta[0], theta[1]);
        if !(a > 0.0) || !(q < 0.0) {
            return Err(Error::Training(format!(
                "fitted curve does not rise and fall (linear {a}, quadratic {q})"
            )));
        }
        let k = -a / q;
        let sse = (&y - &x * &theta).norm_squared();
        let dof = rows.len().saturating_sub(2).max(1);
        Ok(FitResult {
            family: Self::FAMILY.into(),
            parameters: [("a", a), ("k", k)].into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
            tables: Default::default(),
            training_loss: sse,
            residual_sd: (sse / dof as f64).sqrt(),
            converged: true,
            n_obs: rows.len(),
        })
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        let (a, k) = (fit.param("a")?, fit.param("k")?);
        let mut c: f64 = history.values().iter().sum();
        Ok((0..horizon)
            .map(|_| {
                let y = (a * c - a / k * c * c).max(0.0);
                c += y;
                y
            })
            .collect())
    }
}
