//! Evaluation metrics for point, interval and probabilistic forecasts, plus
//! the Diebold-Mariano comparison test.

mod dm;
mod registry;
mod report;

pub use dm::{dm_test, DmResult};
pub use registry::{Metric, MetricRegistry, Orientation, Scorable};
pub use report::{read_score_csv, write_score_csv, CaseId, CaseScore, ScoreReport};

use crate::error::{Error, Result};
use crate::forecast::{BinnedForecast, IntervalForecast, PointForecast, Predictive, Repr, SampleForecast};

/// Lower bound on each log-score term; keeps the metric finite when the
/// forecast puts zero mass on the outcome.
pub const LOG_SCORE_FLOOR: f64 = -10.0;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Argument(format!("{a} forecasts for {b} truths")));
    }
    if a == 0 {
        return Err(Error::Argument("no cases to score".into()));
    }
    Ok(())
}

pub fn mae(points: &[PointForecast], truths: &[f64]) -> Result<f64> {
    check_lengths(points.len(), truths.len())?;
    Ok(points
        .iter()
        .zip(truths)
        .map(|(p, z)| (z - p.value).abs())
        .sum::<f64>()
        / points.len() as f64)
}

/// Relative mean absolute error of model A against reference model B,
/// computed from per-case errors of each model on the same cases.
pub fn rmae(errors_a: &[f64], errors_b: &[f64]) -> Result<f64> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Argument(format!(
            "{} errors for model A, {} for the reference",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let num: f64 = errors_a.iter().map(|e| e.abs()).sum();
    let den: f64 = errors_b.iter().map(|e| e.abs()).sum();
    if den <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(num / den)
}

/// Plain-language reading of an rMAE value.
pub fn describe_rmae(rmae: f64) -> String {
    let pct = ((1.0 - rmae) * 100.0).abs();
    let pct = (pct * 10.0).round() / 10.0;
    if rmae < 1.0 {
        format!(
            "rMAE {rmae:.3}: predictions were {pct}% closer to the observed value than the reference model's"
        )
    } else if rmae > 1.0 {
        format!(
            "rMAE {rmae:.3}: predictions were {pct}% farther from the observed value than the reference model's"
        )
    } else {
        format!("rMAE {rmae:.3}: predictions were as close to the observed value as the reference model's")
    }
}

fn common_alpha(intervals: &[IntervalForecast]) -> Result<f64> {
    let alpha = intervals[0].alpha;
    if intervals.iter().any(|i| i.alpha != alpha) {
        return Err(Error::Argument("intervals have mixed alpha levels".into()));
    }
    Ok(alpha)
}

/// Fraction of intervals containing the truth; bounds count as covered.
pub fn coverage_rate(intervals: &[IntervalForecast], truths: &[f64]) -> Result<f64> {
    check_lengths(intervals.len(), truths.len())?;
    common_alpha(intervals)?;
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|(i, &z)| i.covers(z))
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

pub fn interval_score_term(interval: &IntervalForecast, z: f64) -> f64 {
    let IntervalForecast { alpha, lower, upper } = *interval;
    let mut s = upper - lower;
    if z < lower {
        s += 2.0 / alpha * (lower - z);
    }
    if z > upper {
        s += 2.0 / alpha * (z - upper);
    }
    s
}

/// Mean interval score: width plus `2/alpha`-weighted miss distance.
pub fn interval_score(intervals: &[IntervalForecast], truths: &[f64]) -> Result<f64> {
    check_lengths(intervals.len(), truths.len())?;
    common_alpha(intervals)?;
    Ok(intervals
        .iter()
        .zip(truths)
        .map(|(i, &z)| interval_score_term(i, z))
        .sum::<f64>()
        / intervals.len() as f64)
}

pub fn log_score_term(forecast: &BinnedForecast, z: f64) -> f64 {
    floored_ln(forecast.mass_at(z))
}

pub(crate) fn floored_ln(mass: f64) -> f64 {
    if mass > 0.0 {
        mass.ln().max(LOG_SCORE_FLOOR)
    } else {
        LOG_SCORE_FLOOR
    }
}

/// Mean natural-log probability of the bin holding each truth. Higher is better.
pub fn log_score(forecasts: &[BinnedForecast], truths: &[f64]) -> Result<f64> {
    check_lengths(forecasts.len(), truths.len())?;
    Ok(forecasts
        .iter()
        .zip(truths)
        .map(|(f, &z)| log_score_term(f, z))
        .sum::<f64>()
        / forecasts.len() as f64)
}

/// Exact CRPS of a binned forecast with uniform mass inside each bin.
///
/// The integrand `(F(x) - 1{x >= z})^2` is a squared linear function between
/// consecutive breakpoints (the edges and `z`), so each piece integrates to
/// `w (g0^2 + g0 g1 + g1^2) / 3`. The CDF is continuous, including at the
/// outer edges.
pub fn crps_binned(forecast: &BinnedForecast, z: f64) -> f64 {
    let edges = forecast.edges();
    let mut points: Vec<f64> = Vec::with_capacity(edges.len() + 1);
    points.extend_from_slice(edges);
    let pos = points.partition_point(|&e| e < z);
    if points.get(pos) != Some(&z) {
        points.insert(pos, z);
    }
    let mut total = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = if a >= z { 1.0 } else { 0.0 };
        let g0 = forecast.cdf(a) - step;
        let g1 = forecast.cdf(b) - step;
        total += (b - a) * (g0 * g0 + g0 * g1 + g1 * g1) / 3.0;
    }
    total
}

/// CRPS of a sample forecast: `E|X - z| - E|X - X'| / 2` over all ordered
/// pairs, using the sorted-sample identity for the pair sum.
pub fn crps_samples(forecast: &SampleForecast, z: f64) -> f64 {
    let x = forecast.sorted();
    let n = x.len() as f64;
    let first = x.iter().map(|v| (v - z).abs()).sum::<f64>() / n;
    let pair_sum: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - n + 1.0) * v)
        .sum::<f64>()
        * 2.0;
    first - 0.5 * pair_sum / (n * n)
}

pub fn crps_point(forecast: &PointForecast, z: f64) -> f64 {
    (forecast.value - z).abs()
}

pub fn crps(forecast: &Repr, z: f64) -> Result<f64> {
    match forecast {
        Repr::Point(p) => Ok(crps_point(p, z)),
        Repr::Binned(b) => Ok(crps_binned(b, z)),
        Repr::Samples(s) => Ok(crps_samples(s, z)),
        Repr::Interval(_) => Err(Error::Argument(
            "CRPS needs a point, binned or sample forecast".into(),
        )),
    }
}

/// CRPS of a model divided by the MAE of a benchmark.
pub fn crps_skill(crps_model: f64, mae_baseline: f64) -> Result<f64> {
    if mae_baseline <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(crps_model / mae_baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(v: &[f64]) -> Vec<PointForecast> {
        v.iter().map(|&value| PointForecast { value }).collect()
    }

    fn iv(alpha: f64, lower: f64, upper: f64) -> IntervalForecast {
        IntervalForecast::new(alpha, lower, upper).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&pts(&[1.0, 2.0]), &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&pts(&[0.0, 0.0]), &[2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(mae(&pts(&[5.0]), &[3.0]).unwrap(), 2.0);
        assert!(mae(&pts(&[5.0]), &[3.0, 1.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn rmae_examples() {
        assert_eq!(rmae(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(rmae(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(rmae(&[1.0], &[0.0]), Err(Error::DegenerateReference)));
        let text = describe_rmae(0.9);
        assert!(text.contains("10% closer"), "{text}");
        assert!(describe_rmae(1.25).contains("25% farther"));
    }

    #[test]
    fn coverage_examples() {
        let i = [iv(0.1, 0.0, 10.0), iv(0.1, 0.0, 10.0)];
        assert_eq!(coverage_rate(&i, &[5.0, 12.0]).unwrap(), 0.5);
        assert_eq!(coverage_rate(&i, &[0.0, 10.0]).unwrap(), 1.0);
        assert_eq!(coverage_rate(&i, &[1.0, 2.0]).unwrap(), 1.0);
        let mixed = [iv(0.1, 0.0, 10.0), iv(0.2, 0.0, 10.0)];
        assert!(coverage_rate(&mixed, &[1.0, 2.0]).is_err());
        assert!(interval_score(&mixed, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(&[iv(0.2, 0.0, 10.0)], &[5.0]).unwrap(), 10.0);
        assert_abs_diff_eq!(interval_score(&[iv(0.2, 0.0, 10.0)], &[12.0]).unwrap(), 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(interval_score(&[iv(0.05, 0.0, 10.0)], &[12.0]).unwrap(), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(interval_score(&[iv(0.2, 0.0, 10.0)], &[-1.0]).unwrap(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn log_score_examples() {
        let edges: Vec<f64> = (0..=10).map(f64::from).collect();
        let uniform = BinnedForecast::new(edges.clone(), vec![0.1; 10]).unwrap();
        assert_abs_diff_eq!(log_score(&[uniform.clone()], &[3.5]).unwrap(), -(10f64.ln()), epsilon = 1e-9);
        let one_hot = BinnedForecast::one_hot(edges, 3.5).unwrap();
        assert_eq!(log_score(&[one_hot.clone()], &[3.2]).unwrap(), 0.0);
        assert_eq!(log_score(&[uniform], &[11.0]).unwrap(), LOG_SCORE_FLOOR);
        assert_eq!(log_score(&[one_hot], &[7.0]).unwrap(), LOG_SCORE_FLOOR);
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&Repr::Point(PointForecast { value: 5.0 }), 3.0).unwrap(), 2.0);
        let s = SampleForecast::new(vec![0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(crps_samples(&s, 1.0), 0.5, epsilon = 1e-12);
        let u = BinnedForecast::new(vec![0.0, 1.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(crps_binned(&u, 0.0), 1.0 / 3.0, epsilon = 1e-12);
        // truth outside support: 1/3 from the bin plus 2 units of full mismatch
        assert_abs_diff_eq!(crps_binned(&u, 3.0), 1.0 / 3.0 + 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(crps_binned(&u, -1.0), 1.0 / 3.0 + 1.0, epsilon = 1e-12);
        assert!(crps(&Repr::Interval(iv(0.1, 0.0, 1.0)), 0.0).is_err());
    }

    #[test]
    fn crps_skill_examples() {
        assert_eq!(crps_skill(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(crps_skill(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(crps_skill(1.0, 2.0).unwrap(), 0.5);
        assert!(matches!(crps_skill(1.0, 0.0), Err(Error::DegenerateReference)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Midpoint-rule integral of (F - H)^2 on a fine grid.
        fn crps_numeric(f: &dyn Fn(f64) -> f64, z: f64, lo: f64, hi: f64, n: usize) -> f64 {
            let h = (hi - lo) / n as f64;
            (0..n)
                .map(|i| {
                    let x = lo + (i as f64 + 0.5) * h;
                    let step = if x >= z { 1.0 } else { 0.0 };
                    (f(x) - step).powi(2)
                })
                .sum::<f64>()
                * h
        }

        proptest! {
            #[test]
            fn binned_crps_matches_quadrature(
                weights in prop::collection::vec(0.0f64..1.0, 1..6),
                z in -3.0f64..9.0,
            ) {
                prop_assume!(weights.iter().sum::<f64>() > 1e-3);
                let total: f64 = weights.iter().sum();
                let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let edges: Vec<f64> = (0..=probs.len()).map(|i| i as f64).collect();
                let b = BinnedForecast::new(edges, probs).unwrap();
                let exact = crps_binned(&b, z);
                let numeric = crps_numeric(&|x| b.cdf(x), z, -4.0, 10.0, 200_000);
                prop_assert!((exact - numeric).abs() < 1e-4, "{} vs {}", exact, numeric);
            }

            #[test]
            fn metrics_are_finite(
                weights in prop::collection::vec(0.0f64..1.0, 1..6),
                z in -1e6f64..1e6,
            ) {
                prop_assume!(weights.iter().sum::<f64>() > 1e-3);
                let total: f64 = weights.iter().sum();
                let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let edges: Vec<f64> = (0..=probs.len()).map(|i| i as f64).collect();
                let b = BinnedForecast::new(edges, probs).unwrap();
                prop_assert!(log_score_term(&b, z).is_finite());
                prop_assert!(crps_binned(&b, z).is_finite());
            }
        }
    }
}
