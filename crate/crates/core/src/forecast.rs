//! Point, interval, binned and sample forecast representations.
//!
//! Binned densities spread each bin's probability uniformly over the bin, so
//! the CDF is piecewise linear and quantiles invert it exactly. Sample
//! forecasts use the empirical CDF with inverse-empirical-CDF quantiles.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::series::TargetKind;

/// Tolerance on the total probability of a binned forecast.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub value: f64,
}

impl PointForecast {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Argument(format!("point forecast {value} is not finite")));
        }
        Ok(Self { value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalForecast {
    pub fn new(alpha: f64, lower: f64, upper: f64) -> Result<Self> {
        let violations = validate_interval(alpha, lower, upper);
        if !violations.is_empty() {
            return Err(Error::InvalidForecast(violations));
        }
        Ok(Self {
            alpha,
            lower,
            upper,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, z: f64) -> bool {
        self.lower <= z && z <= self.upper
    }
}

/// Probabilities over contiguous bins `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedForecast {
    edges: Vec<f64>,
    probs: Vec<f64>,
}

impl BinnedForecast {
    pub fn new(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let violations = validate_binned(&edges, &probs, false);
        if !violations.is_empty() {
            return Err(Error::InvalidForecast(violations));
        }
        Ok(Self { edges, probs })
    }

    /// All mass in the single bin containing `z` (clamped to the grid).
    pub fn one_hot(edges: Vec<f64>, z: f64) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidForecast(validate_binned(&edges, &[], false)));
        }
        let mut probs = vec![0.0; edges.len() - 1];
        probs[bin_of_clamped(&edges, z)] = 1.0;
        Self::new(edges, probs)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    /// Index of the bin holding `z`; bins are half-open except the last,
    /// which is closed. `None` outside the support.
    pub fn bin_of(&self, z: f64) -> Option<usize> {
        bin_of(&self.edges, z)
    }

    /// Probability mass of the bin holding `z`, zero outside the support.
    pub fn mass_at(&self, z: f64) -> f64 {
        self.bin_of(z).map_or(0.0, |i| self.probs[i])
    }
}

pub(crate) fn bin_of(edges: &[f64], z: f64) -> Option<usize> {
    let n = edges.len();
    if n < 2 || !(z >= edges[0] && z <= edges[n - 1]) {
        return None;
    }
    if z == edges[n - 1] {
        return Some(n - 2);
    }
    // first edge strictly greater than z, minus one
    Some(edges.partition_point(|&e| e <= z) - 1)
}

pub(crate) fn bin_of_clamped(edges: &[f64], z: f64) -> usize {
    let last = edges.len() - 2;
    if z.is_nan() || z <= edges[0] {
        0
    } else if z >= edges[edges.len() - 1] {
        last
    } else {
        bin_of(edges, z).unwrap_or(last)
    }
}

/// A set of draws from a predictive distribution, kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleForecast {
    samples: Vec<f64>,
}

impl SampleForecast {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        let violations = validate_samples(&samples, false);
        if !violations.is_empty() {
            return Err(Error::InvalidForecast(violations));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Loss under which a point summary is optimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Absolute,
}

/// Operations shared by the two density representations.
pub trait Predictive {
    fn cdf(&self, z: f64) -> f64;
    fn quantile(&self, p: f64) -> f64;
    fn mean(&self) -> f64;
    fn median(&self) -> f64;
}

impl Predictive for BinnedForecast {
    fn cdf(&self, z: f64) -> f64 {
        let n = self.edges.len();
        if z < self.edges[0] {
            return 0.0;
        }
        if z >= self.edges[n - 1] {
            return 1.0;
        }
        let i = self.edges.partition_point(|&e| e <= z) - 1;
        let below: f64 = self.probs[..i].iter().sum();
        let (lo, hi) = (self.edges[i], self.edges[i + 1]);
        (below + self.probs[i] * (z - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    fn quantile(&self, p: f64) -> f64 {
        let first = self.probs.iter().position(|&q| q > 0.0).unwrap_or(0);
        let last = self.probs.iter().rposition(|&q| q > 0.0).unwrap_or(self.probs.len() - 1);
        if p <= 0.0 {
            return self.edges[first];
        }
        let mut cum = 0.0;
        for i in first..=last {
            let q = self.probs[i];
            if q > 0.0 && cum + q >= p {
                let frac = ((p - cum) / q).clamp(0.0, 1.0);
                return self.edges[i] + frac * (self.edges[i + 1] - self.edges[i]);
            }
            cum += q;
        }
        self.edges[last + 1]
    }

    fn mean(&self) -> f64 {
        self.midpoints().zip(&self.probs).map(|(m, p)| m * p).sum()
    }

    fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

impl Predictive for SampleForecast {
    fn cdf(&self, z: f64) -> f64 {
        self.samples.partition_point(|&x| x <= z) as f64 / self.samples.len() as f64
    }

    /// Inverse empirical CDF: the smallest order statistic whose empirical
    /// CDF reaches `p`.
    fn quantile(&self, p: f64) -> f64 {
        let n = self.samples.len();
        let rank = (n as f64 * p - 1e-9).ceil().clamp(1.0, n as f64) as usize;
        self.samples[rank - 1]
    }

    fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    fn median(&self) -> f64 {
        let n = self.samples.len();
        if n % 2 == 1 {
            self.samples[n / 2]
        } else {
            0.5 * (self.samples[n / 2 - 1] + self.samples[n / 2])
        }
    }
}

pub fn point_from_density<D: Predictive + ?Sized>(density: &D, loss: Loss) -> PointForecast {
    let value = match loss {
        Loss::Squared => density.mean(),
        Loss::Absolute => density.median(),
    };
    PointForecast { value }
}

/// Equal-tailed `(1 - alpha)` interval.
pub fn interval_from_density<D: Predictive + ?Sized>(
    density: &D,
    alpha: f64,
) -> Result<IntervalForecast> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} not in (0, 1)")));
    }
    let lower = density.quantile(alpha / 2.0);
    let upper = density.quantile(1.0 - alpha / 2.0);
    IntervalForecast::new(alpha, lower, upper.max(lower))
}

pub fn cdf_at<D: Predictive + ?Sized>(density: &D, z: f64) -> f64 {
    density.cdf(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Mass,
    Edges,
    NegativeProbability,
    LengthMismatch,
    Empty,
    NonFinite,
    NegativeSupport,
    Alpha,
    IntervalOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn short(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Structural checks for a binned density. `incidence` additionally flags
/// positive mass below zero.
pub fn validate_binned(edges: &[f64], probs: &[f64], incidence: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if edges.len() < 2 {
        out.push(Violation::new(ViolationKind::Empty, "at least one bin (two edges) required"));
        return out;
    }
    if edges.iter().any(|e| !e.is_finite()) || probs.iter().any(|p| !p.is_finite()) {
        out.push(Violation::new(ViolationKind::NonFinite, "edges and probabilities must be finite"));
        return out;
    }
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        out.push(Violation::new(ViolationKind::Edges, "edges not strictly increasing"));
    }
    if probs.len() + 1 != edges.len() {
        out.push(Violation::new(
            ViolationKind::LengthMismatch,
            format!("{} probabilities for {} bins", probs.len(), edges.len() - 1),
        ));
    }
    if probs.iter().any(|&p| p < 0.0) {
        out.push(Violation::new(ViolationKind::NegativeProbability, "negative bin probability"));
    }
    let mass: f64 = probs.iter().sum();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        out.push(Violation::new(ViolationKind::Mass, format!("mass {} ≠ 1", short(mass))));
    }
    if incidence && out.is_empty() {
        let below: f64 = edges
            .windows(2)
            .zip(probs)
            .filter(|(w, _)| w[0] < 0.0)
            .map(|(w, p)| p * (w[1].min(0.0) - w[0]) / (w[1] - w[0]))
            .sum();
        if below > 0.0 {
            out.push(Violation::new(
                ViolationKind::NegativeSupport,
                format!("mass {} assigned below zero incidence", short(below)),
            ));
        }
    }
    out
}

pub fn validate_samples(samples: &[f64], incidence: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if samples.is_empty() {
        out.push(Violation::new(ViolationKind::Empty, "no samples"));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        out.push(Violation::new(ViolationKind::NonFinite, "samples must be finite"));
    }
    if incidence && samples.iter().any(|&s| s < 0.0) {
        out.push(Violation::new(ViolationKind::NegativeSupport, "negative incidence sample"));
    }
    out
}

pub fn validate_interval(alpha: f64, lower: f64, upper: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(alpha > 0.0 && alpha < 1.0) {
        out.push(Violation::new(ViolationKind::Alpha, format!("alpha {alpha} not in (0, 1)")));
    }
    if !lower.is_finite() || !upper.is_finite() {
        out.push(Violation::new(ViolationKind::NonFinite, "interval bounds must be finite"));
    } else if lower > upper {
        out.push(Violation::new(ViolationKind::IntervalOrder, "lower bound exceeds upper bound"));
    }
    out
}

/// Any of the four forecast representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Repr {
    Point(PointForecast),
    Interval(IntervalForecast),
    Binned(BinnedForecast),
    Samples(SampleForecast),
}

impl Repr {
    pub fn name(&self) -> &'static str {
        match self {
            Repr::Point(_) => "point",
            Repr::Interval(_) => "interval",
            Repr::Binned(_) => "binned",
            Repr::Samples(_) => "samples",
        }
    }

    /// `Ok(())` or the full list of violations; never panics.
    pub fn validate(&self, incidence: bool) -> std::result::Result<(), Vec<Violation>> {
        let v = match self {
            Repr::Point(p) if !p.value.is_finite() => {
                vec![Violation::new(ViolationKind::NonFinite, "point value must be finite")]
            }
            Repr::Point(p) if incidence && p.value < 0.0 => {
                vec![Violation::new(ViolationKind::NegativeSupport, "negative incidence forecast")]
            }
            Repr::Point(_) => Vec::new(),
            Repr::Interval(i) => {
                let mut v = validate_interval(i.alpha, i.lower, i.upper);
                if incidence && i.lower < 0.0 {
                    v.push(Violation::new(ViolationKind::NegativeSupport, "interval extends below zero"));
                }
                v
            }
            Repr::Binned(b) => validate_binned(&b.edges, &b.probs, incidence),
            Repr::Samples(s) => validate_samples(&s.samples, incidence),
        };
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Exchange document: one forecast for one target at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDoc {
    pub location: String,
    pub origin_t: i64,
    pub target: TargetKind,
    pub repr: Repr,
}

const COMMON_FIELDS: [&str; 4] = ["location", "origin_t", "target", "repr"];

fn repr_fields(repr: &str) -> Option<&'static [&'static str]> {
    Some(match repr {
        "binned" => &["edges", "probs"],
        "samples" => &["samples"],
        "point" => &["value"],
        "interval" => &["alpha", "lower", "upper"],
        _ => return None,
    })
}

impl ForecastDoc {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("location".into(), Value::from(self.location.clone()));
        m.insert("origin_t".into(), Value::from(self.origin_t));
        m.insert(
            "target".into(),
            serde_json::to_value(&self.target).expect("target kinds serialize"),
        );
        m.insert("repr".into(), Value::from(self.repr.name()));
        match &self.repr {
            Repr::Point(p) => {
                m.insert("value".into(), Value::from(p.value));
            }
            Repr::Interval(i) => {
                m.insert("alpha".into(), Value::from(i.alpha));
                m.insert("lower".into(), Value::from(i.lower));
                m.insert("upper".into(), Value::from(i.upper));
            }
            Repr::Binned(b) => {
                m.insert("edges".into(), Value::from(b.edges.clone()));
                m.insert("probs".into(), Value::from(b.probs.clone()));
            }
            Repr::Samples(s) => {
                m.insert("samples".into(), Value::from(s.samples.clone()));
            }
        }
        Value::Object(m)
    }

    /// Parse a document, accepting exactly the fields of its declared repr.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Data("forecast document must be a JSON object".into()))?;
        let repr = obj
            .get("repr")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Data("missing string field 'repr'".into()))?;
        let fields = repr_fields(repr)
            .ok_or_else(|| Error::Data(format!("unknown repr '{repr}'")))?;
        for key in obj.keys() {
            if !COMMON_FIELDS.contains(&key.as_str()) && !fields.contains(&key.as_str()) {
                return Err(Error::Data(format!("unexpected field '{key}' for repr '{repr}'")));
            }
        }
        for key in COMMON_FIELDS.iter().chain(fields) {
            if !obj.contains_key(*key) {
                return Err(Error::Data(format!("missing field '{key}'")));
            }
        }
        let location = obj["location"]
            .as_str()
            .ok_or_else(|| Error::Data("'location' must be a string".into()))?
            .to_string();
        let origin_t = obj["origin_t"]
            .as_i64()
            .ok_or_else(|| Error::Data("'origin_t' must be an integer".into()))?;
        let target: TargetKind = serde_json::from_value(obj["target"].clone())?;
        let num = |k: &str| {
            obj[k]
                .as_f64()
                .ok_or_else(|| Error::Data(format!("'{k}' must be a number")))
        };
        let list = |k: &str| -> Result<Vec<f64>> { Ok(serde_json::from_value(obj[k].clone())?) };
        let repr = match repr {
            "point" => Repr::Point(PointForecast::new(num("value")?)?),
            "interval" => Repr::Interval(IntervalForecast::new(
                num("alpha")?,
                num("lower")?,
                num("upper")?,
            )?),
            "binned" => Repr::Binned(BinnedForecast::new(list("edges")?, list("probs")?)?),
            _ => Repr::Samples(SampleForecast::new(list("samples")?)?),
        };
        Ok(Self {
            location,
            origin_t,
            target,
            repr,
        })
    }
}
