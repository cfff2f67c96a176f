use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::forecast::{bin_of_clamped, BinnedForecast};

/// Gaussian `N(mean, sd^2)` discretized onto `edges`, truncated at zero and
/// renormalized. Tail mass beyond the outer edges is folded into the end
/// bins, so only the negative part is removed. A zero sd gives a one-hot
/// density at `max(mean, 0)`.
pub fn gaussian_on_grid(edges: &[f64], mean: f64, sd: f64) -> Result<BinnedForecast> {
    if edges.len() < 2 {
        return Err(Error::Argument("grid needs at least one bin".into()));
    }
    if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
        return Err(Error::Argument(format!("bad Gaussian parameters mean={mean} sd={sd}")));
    }
    if sd == 0.0 {
        return BinnedForecast::one_hot(edges.to_vec(), mean.max(0.0).max(edges[0]));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Argument(e.to_string()))?;
    let last = edges.len() - 2;
    // upper-tail differences stay accurate when the mean sits below the bin
    let mass = |lo: f64, hi: f64| {
        let lo = lo.max(0.0);
        if hi <= lo {
            0.0
        } else if lo > mean {
            (normal.sf(lo) - if hi.is_infinite() { 0.0 } else { normal.sf(hi) }).max(0.0)
        } else {
            ((if hi.is_infinite() { 1.0 } else { normal.cdf(hi) }) - normal.cdf(lo)).max(0.0)
        }
    };
    let probs: Vec<f64> = edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let lo = if i == 0 { 0.0 } else { w[0] };
            let hi = if i == last { f64::INFINITY } else { w[1] };
            mass(lo, hi)
        })
        .collect();
    let total: f64 = probs.iter().sum();
    if !(total > 1e-300) {
        return BinnedForecast::one_hot(edges.to_vec(), 0.0f64.max(edges[0]));
    }
    renormalize(edges, probs)
}

/// Histogram of `values` on `edges`, values beyond the grid clamped into the
/// end bins.
pub fn empirical_on_grid(edges: &[f64], values: &[f64]) -> Result<BinnedForecast> {
    if values.is_empty() {
        return Err(Error::Argument("empirical density needs at least one value".into()));
    }
    let mut probs = vec![0.0; edges.len() - 1];
    let w = 1.0 / values.len() as f64;
    for &v in values {
        probs[bin_of_clamped(edges, v)] += w;
    }
    renormalize(edges, probs)
}

fn renormalize(edges: &[f64], mut probs: Vec<f64>) -> Result<BinnedForecast> {
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    BinnedForecast::new(edges.to_vec(), probs)
}
