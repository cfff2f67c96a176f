//! Susceptible-infectious-recovered dynamics: RK4 integration, synthetic
//! epidemic generation, and a fitted forecaster on incidence (`-dS` per
//! interval).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::HyperParams;
use super::simplex::{nelder_mead, SimplexOptions};
use super::{require_len, FitData, FitResult, Forecaster, ForecasterSpec};
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// RK4 substeps per observation interval, shared by simulation and fitting.
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirState {
    pub s: f64,
    pub i: f64,
    pub r: f64,
    pub n: f64,
    /// Transmission rate per interval.
    pub beta: f64,
    /// Recovery rate per interval.
    pub gamma: f64,
}

impl SirState {
    /// Start of an outbreak: `i0` infectious, the rest susceptible.
    pub fn outbreak(n: f64, i0: f64, beta: f64, gamma: f64) -> Result<Self> {
        let st = Self {
            s: n - i0,
            i: i0,
            r: 0.0,
            n,
            beta,
            gamma,
        };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n > 0.0
            && self.s >= 0.0
            && self.i >= 0.0
            && self.r >= 0.0
            && self.beta >= 0.0
            && self.gamma >= 0.0
            && ((self.s + self.i + self.r) - self.n).abs() <= 1e-9 * self.n.max(1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid SIR state {self:?}")))
        }
    }

    fn derivatives(&self, s: f64, i: f64) -> (f64, f64, f64) {
        let infection = self.beta * s * i / self.n;
        let recovery = self.gamma * i;
        (-infection, infection - recovery, recovery)
    }

    /// Whether the infectious compartment grows at this state.
    pub fn growing(&self) -> bool {
        self.derivatives(self.s, self.i).1 > 0.0
    }
}

/// One classical Runge-Kutta step of length `dt`.
pub fn sir_step(state: &SirState, dt: f64) -> SirState {
    let f = |s: f64, i: f64| state.derivatives(s, i);
    let (s, i, r) = (state.s, state.i, state.r);
    let k1 = f(s, i);
    let k2 = f(s + 0.5 * dt * k1.0, i + 0.5 * dt * k1.1);
    let k3 = f(s + 0.5 * dt * k2.0, i + 0.5 * dt * k2.1);
    let k4 = f(s + dt * k3.0, i + dt * k3.1);
    let comb = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    SirState {
        s: (s + comb(k1.0, k2.0, k3.0, k4.0)).max(0.0),
        i: (i + comb(k1.1, k2.1, k3.1, k4.1)).max(0.0),
        r: r + comb(k1.2, k2.2, k3.2, k4.2),
        ..*state
    }
}

/// Incidence `S(t-1) - S(t)` for intervals `1..=len`, from `state` at time 0.
pub fn incidence_curve(state: &SirState, len: usize, substeps: usize) -> Vec<f64> {
    let dt = 1.0 / substeps as f64;
    let mut st = *state;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let before = st.s;
        for _ in 0..substeps {
            st = sir_step(&st, dt);
        }
        out.push((before - st.s).max(0.0));
    }
    out
}

/// Synthetic incidence series from SIR dynamics with multiplicative
/// log-normal noise `exp(noise_sd * Z)`. Deterministic given `seed`.
pub fn simulate_sir(params: &SirState, len: usize, noise_sd: f64, seed: u64) -> Result<TimeSeries> {
    params.validate()?;
    if len == 0 {
        return Err(Error::Argument("simulation length must be at least 1".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Argument(format!("noise sd {noise_sd} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = incidence_curve(params, len, DEFAULT_SUBSTEPS)
        .into_iter()
        .map(|y| {
            if noise_sd == 0.0 {
                y
            } else {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (y * (noise_sd * z).exp()).max(0.0)
            }
        })
        .collect();
    TimeSeries::new("sir_sim", 1, values, 1)
}

/// SIR forecaster: fits `(beta, gamma, I0)` for a known population by
/// least squares on incidence, using downhill-simplex refinement from the
/// best points of a 5x5x5 multistart grid (in log parameters).
#[derive(Debug, Clone)]
pub struct Sir {
    spec: ForecasterSpec,
    population: f64,
    substeps: usize,
    refine_starts: usize,
}

const GRID_POINTS: usize = 5;
const BETA_RANGE: (f64, f64) = (0.05, 2.0);
const GAMMA_RANGE: (f64, f64) = (0.02, 1.0);

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

impl Sir {
    pub const FAMILY: &'static str = "sir";

    pub fn new(spec: ForecasterSpec) -> Result<Self> {
        let hp = HyperParams::new(
            Self::FAMILY,
            &spec.hyperparameters,
            &["population", "substeps", "refine_starts"],
        )?;
        let population = hp
            .real("population", 1.0, f64::MAX)?
            .ok_or_else(|| Error::Argument("sir requires the 'population' hyperparameter".into()))?;
        let substeps = hp.count("substeps", 1, 1_000)?.unwrap_or(DEFAULT_SUBSTEPS);
        let refine_starts = hp
            .count("refine_starts", 1, GRID_POINTS.pow(3))?
            .unwrap_or(5);
        spec.bin_grid.edges()?;
        Ok(Self {
            spec,
            population,
            substeps,
            refine_starts,
        })
    }

    fn state(&self, log_params: &[f64]) -> Option<SirState> {
        let (beta, gamma, i0) = (log_params[0].exp(), log_params[1].exp(), log_params[2].exp());
        if !(i0 < self.population) || !beta.is_finite() || !gamma.is_finite() {
            return None;
        }
        SirState::outbreak(self.population, i0, beta, gamma).ok()
    }

    fn sse(&self, data: &FitData<'_>, log_params: &[f64]) -> f64 {
        let Some(st) = self.state(log_params) else {
            return f64::INFINITY;
        };
        let values = data.series.values();
        incidence_curve(&st, values.len(), self.substeps)
            .iter()
            .zip(values)
            .enumerate()
            .filter(|(i, _)| data.uses(i + 1))
            .map(|(_, (m, y))| (m - y) * (m - y))
            .sum()
    }

    fn fitted_state(&self, fit: &FitResult) -> Result<SirState> {
        SirState::outbreak(self.population, fit.param("i0")?, fit.param("beta")?, fit.param("gamma")?)
    }
}

impl Forecaster for Sir {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn spec(&self) -> &ForecasterSpec {
        &self.spec
    }

    fn size(&self) -> usize {
        3
    }

    fn min_train_len(&self, _cycle_length: usize) -> usize {
        4
    }

    fn fit(&self, data: &FitData<'_>) -> Result<FitResult> {
        require_len(data, 4, Self::FAMILY)?;
        let betas = geometric(BETA_RANGE.0, BETA_RANGE.1, GRID_POINTS);
        let gammas = geometric(GAMMA_RANGE.0, GAMMA_RANGE.1, GRID_POINTS);
        let i0s = geometric(1.0, (0.01 * self.population).max(2.0), GRID_POINTS);
        let mut grid: Vec<(Vec<f64>, f64)> = Vec::with_capacity(GRID_POINTS.pow(3));
        for &b in &betas {
            for &g in &gammas {
                for &i0 in &i0s {
                    let x = vec![b.ln(), g.ln(), i0.ln()];
                    let v = self.sse(data, &x);
                    grid.push((x, v));
                }
            }
        }
        // stable sort: lower grid index wins ties
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1));
        let starts: Vec<&Vec<f64>> = order.iter().take(self.refine_starts).map(|&i| &grid[i].0).collect();

        let opts = SimplexOptions::default();
        let outcomes: Vec<_> = starts
            .par_iter()
            .map(|x0| nelder_mead(|x| self.sse(data, x), x0, &[0.3, 0.3, 0.5], opts))
            .collect();
        let pick = |only_converged: bool| {
            outcomes
                .iter()
                .enumerate()
                .filter(|(_, o)| !only_converged || o.converged)
                .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
                .map(|(_, o)| o)
        };
        let best = pick(true)
            .or_else(|| pick(false))
            .ok_or_else(|| Error::Training("no simplex starts".into()))?;
        if !best.value.is_finite() {
            return Err(Error::Training("SIR objective is not finite at any start".into()));
        }
        let n = data.n_used();
        let params = [
            ("beta", best.x[0].exp()),
            ("gamma", best.x[1].exp()),
            ("i0", best.x[2].exp()),
            ("population", self.population),
        ];
        Ok(FitResult {
            family: Self::FAMILY.into(),
            parameters: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            tables: Default::default(),
            training_loss: best.value,
            residual_sd: (best.value / n as f64).sqrt(),
            converged: best.converged,
            n_obs: n,
        })
    }

    fn mean_path(&self, fit: &FitResult, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        let st = self.fitted_state(fit)?;
        let mut curve = incidence_curve(&st, history.len() + horizon, self.substeps);
        Ok(curve.split_off(history.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BinGrid;

    #[test]
    fn disease_free_state_is_fixed() {
        let st = SirState::outbreak(1000.0, 0.0, 0.5, 0.1).unwrap();
        assert_eq!(sir_step(&st, 0.1), st);
    }

    #[test]
    fn pure_recovery_matches_exponential_decay() {
        let mut st = SirState::outbreak(1000.0, 100.0, 0.0, 0.1).unwrap();
        let dt = 0.01;
        for k in 1..=1000 {
            st = sir_step(&st, dt);
            let exact = 100.0 * (-0.1 * k as f64 * dt).exp();
            assert!((st.i - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn growth_sign_follows_reproduction_number() {
        for (beta, gamma) in [(0.3, 0.1), (0.1, 0.3), (0.2, 0.2), (0.5, 0.49)] {
            let st = SirState::outbreak(1e4, 10.0, beta, gamma).unwrap();
            let r = beta * st.s / (gamma * st.n);
            assert_eq!(st.growing(), r > 1.0, "beta={beta} gamma={gamma}");
        }
    }

    #[test]
    fn simulation_properties() {
        let p = SirState::outbreak(1e4, 5.0, 0.4, 0.1).unwrap();
        let a = simulate_sir(&p, 120, 0.0, 1).unwrap();
        let b = simulate_sir(&p, 120, 0.0, 99).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.values().iter().sum();
        assert!(total <= p.s + 1e-9);

        let decay = SirState::outbreak(1e4, 50.0, 0.0, 0.2).unwrap();
        let d = simulate_sir(&decay, 30, 0.0, 1).unwrap();
        assert!(d.values().windows(2).all(|w| w[1] <= w[0]));

        let noisy1 = simulate_sir(&p, 50, 0.2, 7).unwrap();
        let noisy2 = simulate_sir(&p, 50, 0.2, 7).unwrap();
        assert_eq!(noisy1, noisy2);
        assert_ne!(noisy1, a.train_view(50).unwrap());
    }

    #[test]
    fn no_transmission_forecast_stays_at_zero() {
        let spec = ForecasterSpec::new(Sir::FAMILY, BinGrid::Edges(vec![0.0, 10.0])).with("population", 1e4);
        let m = Sir::new(spec).unwrap();
        let fit = FitResult {
            family: Sir::FAMILY.into(),
            parameters: [("beta", 0.0), ("gamma", 0.1), ("i0", 100.0), ("population", 1e4)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            tables: Default::default(),
            training_loss: 0.0,
            residual_sd: 0.0,
            converged: true,
            n_obs: 10,
        };
        let history = TimeSeries::new("A", 1, vec![0.0; 10], 1).unwrap();
        let path = m.mean_path(&fit, &history, 20).unwrap();
        assert!(path.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subcritical_forecast_decreases_toward_zero() {
        let spec = ForecasterSpec::new(Sir::FAMILY, BinGrid::Edges(vec![0.0, 10.0])).with("population", 1e4);
        let m = Sir::new(spec).unwrap();
        let fit = FitResult {
            family: Sir::FAMILY.into(),
            parameters: [("beta", 0.05), ("gamma", 0.2), ("i0", 200.0), ("population", 1e4)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            tables: Default::default(),
            training_loss: 0.0,
            residual_sd: 0.0,
            converged: true,
            n_obs: 10,
        };
        let history = TimeSeries::new("A", 1, vec![0.0; 10], 1).unwrap();
        let path = m.mean_path(&fit, &history, 60).unwrap();
        assert!(path.windows(2).all(|w| w[1] < w[0]));
        assert!(path[59] < 0.05 * path[0]);
    }

    #[test]
    fn noiseless_round_trip_recovers_rates() {
        let truth = SirState::outbreak(1e5, 10.0, 0.3, 0.1).unwrap();
        let series = simulate_sir(&truth, 150, 0.0, 0).unwrap();
        let spec = ForecasterSpec::new(Sir::FAMILY, BinGrid::Edges(vec![0.0, 1e5])).with("population", 1e5);
        let fit = Sir::new(spec).unwrap().fit(&FitData::new(&series)).unwrap();
        assert!((fit.param("beta").unwrap() / 0.3 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.param("gamma").unwrap() / 0.1 - 1.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn population_is_required() {
        let spec = ForecasterSpec::new(Sir::FAMILY, BinGrid::Edges(vec![0.0, 10.0]));
        assert!(Sir::new(spec).is_err());
    }
}
