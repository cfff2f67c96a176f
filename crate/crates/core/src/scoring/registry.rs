use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forecast::{
    interval_from_density, BinnedForecast, IntervalForecast, Loss, Repr, SampleForecast,
};
use crate::series::Realized;

use super::{crps_binned, crps_samples, floored_ln, interval_score_term};

/// What a metric can ask of a forecast.
pub trait Scorable {
    /// Point prediction, if the forecast carries or implies one.
    fn point(&self) -> Option<f64>;
    fn binned(&self) -> Option<&BinnedForecast>;
    fn samples(&self) -> Option<&SampleForecast> {
        None
    }
    fn interval(&self, alpha: f64) -> Option<IntervalForecast>;
}

impl Scorable for Repr {
    fn point(&self) -> Option<f64> {
        match self {
            Repr::Point(p) => Some(p.value),
            Repr::Binned(b) => Some(crate::forecast::point_from_density(b, Loss::Absolute).value),
            Repr::Samples(s) => Some(crate::forecast::point_from_density(s, Loss::Absolute).value),
            Repr::Interval(_) => None,
        }
    }

    fn binned(&self) -> Option<&BinnedForecast> {
        match self {
            Repr::Binned(b) => Some(b),
            _ => None,
        }
    }

    fn samples(&self) -> Option<&SampleForecast> {
        match self {
            Repr::Samples(s) => Some(s),
            _ => None,
        }
    }

    fn interval(&self, alpha: f64) -> Option<IntervalForecast> {
        match self {
            Repr::Interval(i) if i.alpha == alpha => Some(*i),
            Repr::Binned(b) => interval_from_density(b, alpha).ok(),
            Repr::Samples(s) => interval_from_density(s, alpha).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

/// A per-case scoring rule; aggregates are means of per-case scores.
pub trait Metric: Send + Sync {
    fn name(&self) -> String;
    fn orientation(&self) -> Orientation;
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64>;
}

fn missing(metric: &str, what: &str) -> Error {
    Error::Argument(format!("metric '{metric}' needs a {what} forecast"))
}

struct AbsoluteError;

impl Metric for AbsoluteError {
    fn name(&self) -> String {
        "mae".into()
    }
    fn orientation(&self) -> Orientation {
        Orientation::LowerIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let p = forecast.point().ok_or_else(|| missing("mae", "point"))?;
        Ok((truth.scalar() - p).abs())
    }
}

/// Absolute error between `ln(1 + truth)` and `ln(1 + point)`.
struct LogAbsoluteError;

impl Metric for LogAbsoluteError {
    fn name(&self) -> String {
        "log_mae".into()
    }
    fn orientation(&self) -> Orientation {
        Orientation::LowerIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let p = forecast.point().ok_or_else(|| missing("log_mae", "point"))?;
        Ok((truth.scalar().max(0.0).ln_1p() - p.max(0.0).ln_1p()).abs())
    }
}

struct Crps;

impl Metric for Crps {
    fn name(&self) -> String {
        "crps".into()
    }
    fn orientation(&self) -> Orientation {
        Orientation::LowerIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let z = truth.scalar();
        if let Some(b) = forecast.binned() {
            Ok(crps_binned(b, z))
        } else if let Some(s) = forecast.samples() {
            Ok(crps_samples(s, z))
        } else if let Some(p) = forecast.point() {
            Ok((p - z).abs())
        } else {
            Err(missing("crps", "point, binned or sample"))
        }
    }
}

/// Floored log score. A peak-timing truth set scores the mass on the whole set.
struct LogScore;

impl Metric for LogScore {
    fn name(&self) -> String {
        "log_score".into()
    }
    fn orientation(&self) -> Orientation {
        Orientation::HigherIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let b = forecast.binned().ok_or_else(|| missing("log_score", "binned"))?;
        let mass = match truth {
            Realized::Indices(set) => set.iter().map(|&t| b.mass_at(t as f64)).sum(),
            other => b.mass_at(other.scalar()),
        };
        Ok(floored_ln(mass))
    }
}

struct Coverage {
    alpha: f64,
}

impl Metric for Coverage {
    fn name(&self) -> String {
        format!("coverage:{}", self.alpha)
    }
    fn orientation(&self) -> Orientation {
        // calibration target is 1 - alpha, not an extreme
        Orientation::HigherIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let i = forecast
            .interval(self.alpha)
            .ok_or_else(|| missing("coverage", "interval-capable"))?;
        Ok(f64::from(u8::from(i.covers(truth.scalar()))))
    }
}

struct IntervalScore {
    alpha: f64,
}

impl Metric for IntervalScore {
    fn name(&self) -> String {
        format!("interval_score:{}", self.alpha)
    }
    fn orientation(&self) -> Orientation {
        Orientation::LowerIsBetter
    }
    fn score(&self, forecast: &dyn Scorable, truth: &Realized) -> Result<f64> {
        let i = forecast
            .interval(self.alpha)
            .ok_or_else(|| missing("interval_score", "interval-capable"))?;
        Ok(interval_score_term(&i, truth.scalar()))
    }
}

type MetricCtor = fn(Option<f64>) -> Result<Arc<dyn Metric>>;

/// Metrics registered by name. Parametric metrics take `name:alpha`,
/// e.g. `coverage:0.05`.
pub struct MetricRegistry {
    entries: BTreeMap<&'static str, MetricCtor>,
}

fn alpha_of(name: &str, param: Option<f64>) -> Result<f64> {
    match param {
        Some(a) if a > 0.0 && a < 1.0 => Ok(a),
        _ => Err(Error::Argument(format!("metric '{name}' needs an alpha in (0, 1), e.g. {name}:0.05"))),
    }
}

fn no_param(name: &str, param: Option<f64>) -> Result<()> {
    match param {
        None => Ok(()),
        Some(_) => Err(Error::Argument(format!("metric '{name}' takes no parameter"))),
    }
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("mae", |p| {
            no_param("mae", p)?;
            Ok(Arc::new(AbsoluteError))
        });
        r.register("log_mae", |p| {
            no_param("log_mae", p)?;
            Ok(Arc::new(LogAbsoluteError))
        });
        r.register("crps", |p| {
            no_param("crps", p)?;
            Ok(Arc::new(Crps))
        });
        r.register("log_score", |p| {
            no_param("log_score", p)?;
            Ok(Arc::new(LogScore))
        });
        r.register("coverage", |p| {
            Ok(Arc::new(Coverage {
                alpha: alpha_of("coverage", p)?,
            }))
        });
        r.register("interval_score", |p| {
            Ok(Arc::new(IntervalScore {
                alpha: alpha_of("interval_score", p)?,
            }))
        });
        r
    }
}

impl MetricRegistry {
    pub fn register(&mut self, name: &'static str, ctor: MetricCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, spec: &str) -> Result<Arc<dyn Metric>> {
        let (name, param) = match spec.split_once(':') {
            Some((n, p)) => {
                let v: f64 = p
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad metric parameter in '{spec}'")))?;
                (n, Some(v))
            }
            None => (spec, None),
        };
        let ctor = self.entries.get(name).ok_or_else(|| Error::UnknownName {
            kind: "metric",
            name: spec.to_string(),
        })?;
        ctor(param)
    }
}
