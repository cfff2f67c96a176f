use super::params::HyperParams;
use super::{require_len, FitData, FitResult, Forecaster, ForecasterSpec};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Additive Holt-Winters smoothing: level, trend and seasonal recursions.
///
/// Components start from the first two cycles: trend is the difference of
/// the cycle means over L, level is the first-cycle mean carried to the end
/// of the cycle, seasonal terms are first-cycle deviations from the
/// detrended mean.
/// Unfixed smoothing weights are chosen on the grid {0, 0.05, ..., 1} by
/// one-step in-sample squared error.
#[derive(Debug, Clone)]
pub struct HoltWinters {
    spec: ForecasterSpec,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
}

const GRID_STEPS: usize = 20;

#[derive(Debug, Clone)]
struct State {
    level: f64,
    trend: f64,
    /// seasonal[i] applies to season position i (0-based in the cycle)
    seasonal: Vec<f64>,
}

struct Weights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl HoltWinters {
    pub const FAMILY: &'static str = "holt_winters";

    pub fn new(spec: ForecasterSpec) -> Result<Self> {
        let hp = HyperParams::new(Self::FAMILY, &spec.hyperparameters, &["alpha", "beta", "gamma"])?;
        let alpha = hp.real("alpha", 0.0, 1.0)?;
        let beta = hp.real("beta", 0.0, 1.0)?;
        let gamma = hp.real("gamma", 0.0, 1.0)?;
        spec.bin_grid.edges()?;
        Ok(Self {
            spec,
            alpha,
            beta,
            gamma,
        })
    }

    fn init(values: &[f64], l: usize) -> State {
        let c1 = values[..l].iter().sum::<f64>() / l as f64;
        let c2 = values[l..2 * l].iter().sum::<f64>() / l as f64;
        let trend = (c2 - c1) / l as f64;
        let centre = (l as f64 + 1.0) / 2.0;
        State {
            level: c1 + trend * (l as f64 - centre),
            trend,
            seasonal: values[..l]
                .iter()
                .enumerate()
                .map(|(i, v)| v - (c1 + trend * (i as f64 + 1.0 - centre)))
                .collect(),
        }
    }

    /// Runs the recursions over `t = L+1..=T`. Observations not used by
    /// `uses` are replaced by their one-step prediction. Returns the final
    /// state, the squared error over used observations and their count.
    fn filter(values: &[f64], l: usize, w: &Weights, uses: impl Fn(usize) -> bool) -> (State, f64, usize) {
        let mut st = Self::init(values, l);
        let mut sse = 0.0;
        let mut n = 0;
        for t in (l + 1)..=values.len() {
            let pos = (t - 1) % l;
            let s_old = st.seasonal[pos];
            let pred = st.level + st.trend + s_old;
            let y = if uses(t) {
                let y = values[t - 1];
                sse += (y - pred) * (y - pred);
                n += 1;
                y
            } else {
                pred
            };
            let prev_level = st.level;
            st.level = w.alpha * (y - s_old) + (1.0 - w.alpha) * (st.level + st.trend);
            st.trend = w.beta * (st.level - prev_level) + (1.0 - w.beta) * st.trend;
            st.seasonal[pos] = w.gamma * (y - st.level) + (1.0 - w.gamma) * s_old;
        }
        (st, sse, n)
    }

    fn candidates(fixed: Option<f64>) -> Vec<f64> {
        match fixed {
            Some(v) => vec![v],
            None => (0..=GRID_STEPS).map(|i| i as f64 / GRID_STEPS as f64).collect(),
        }
    }
}

impl Forecaster for HoltWinters {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    fn size(&self) -> usize {
        3
    }

    fn min_train_len(&self, cycle_length: usize) -> usize {
        (2 * cycle_length).max(3)
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        let l = data.series.cycle_length();
        require_len(data, self.min_train_len(l), Self::FAMILY)?;
        let values = data.series.values();
        let mut best: Option<(f64, Weights, usize)> = None;
        for &alpha in &Self::candidates(self.alpha) {
            for &beta in &Self::candidates(self.beta) {
                for &gamma in &Self::candidates(self.gamma) {
                    let w = Weights { alpha, beta, gamma };
                    let (_, sse, n) = Self::filter(values, l, &w, |t| data.uses(t));
                    if best.as_ref().is_none_or(|(b, _, _)| sse < *b) {
                        best = Some((sse, w, n));
                    }
                }
            }
        }
        let (sse, w, n) = best.ok_or_else(|| Error::Training("empty weight grid".into()))?;
        if n == 0 {
            return Err(Error::Training("no usable observations after the first cycle".into()));
        }
        Ok(FitResult {
            family: Self::FAMILY.into(),
            parameters: [("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            tables: Default::default(),
            training_loss: sse,
            residual_sd: (sse / n as f64).sqrt(),
            converged: true,
            n_obs: n,
        })
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        let l = history.cycle_length();
        if history.len() < self.min_train_len(l) {
            return Err(Error::Training(format!(
                "holt_winters needs {} observations of history, got {}",
                self.min_train_len(l),
                history.len()
            )));
        }
        let w = Weights {
            alpha: fit.param("alpha")?,
            beta: fit.param("beta")?,
            gamma: fit.param("gamma")?,
        };
        let (st, _, _) = Self::filter(history.values(), l, &w, |_| true);
        let t_end = history.len();
        Ok((1..=horizon)
            .map(|h| {
                let pos = (t_end + h - 1) % l;
                st.level + h as f64 * st.trend + st.seasonal[pos]
            })
            .collect())
    }
}
