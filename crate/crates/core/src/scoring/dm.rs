use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    /// Small-sample corrected statistic. Negative when model A has lower loss.
    pub statistic: f64,
    pub p_value: f64,
    pub mean_differential: f64,
    pub long_run_variance: f64,
}

/// Diebold-Mariano test of equal predictive accuracy.
///
/// Uses a rectangular-kernel long-run variance with `horizon - 1`
/// autocovariance lags, the Harvey-Leybourne-Newbold correction factor, and
/// a two-sided standard normal reference.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], horizon: usize) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Argument(format!(
            "loss series lengths differ: {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let t = loss_a.len();
    if t < 4 {
        return Err(Error::Argument(format!("need at least 4 paired losses, got {t}")));
    }
    if horizon == 0 || horizon >= t {
        return Err(Error::Argument(format!("horizon {horizon} must be in 1..{t}")));
    }
    if loss_a.iter().chain(loss_b).any(|l| !l.is_finite()) {
        return Err(Error::Argument("losses must be finite".into()));
    }

    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let n = t as f64;
    let mean = d.iter().sum::<f64>() / n;
    let autocov = |lag: usize| -> f64 {
        (lag..t)
            .map(|i| (d[i] - mean) * (d[i - lag] - mean))
            .sum::<f64>()
            / n
    };
    let variance = autocov(0) + 2.0 * (1..horizon).map(autocov).sum::<f64>();
    if !(variance > 0.0) || d.iter().all(|&x| x == d[0]) {
        return Err(Error::DegenerateVariance);
    }

    let raw = mean / (variance / n).sqrt();
    let h = horizon as f64;
    let correction = ((n + 1.0 - 2.0 * h + h * (h - 1.0) / n) / n).sqrt();
    let statistic = raw * correction;
    let normal = Normal::standard();
    let p_value = (2.0 * normal.cdf(-statistic.abs())).min(1.0);
    Ok(DmResult {
        statistic,
        p_value,
        mean_differential: mean,
        long_run_variance: variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    #[test]
    fn identical_losses_are_degenerate() {
        let l = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(dm_test(&l, &l, 1), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn argument_checks() {
        assert!(dm_test(&[1.0; 3], &[0.0; 3], 1).is_err());
        assert!(dm_test(&[1.0; 5], &[0.0; 4], 1).is_err());
        assert!(dm_test(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 0).is_err());
    }

    #[test]
    fn hand_computed_statistic() {
        // d = [1, -1, 2, 0]: mean 0.5, gamma0 = (0.25+2.25+2.25+0.25)/4 = 1.25
        // raw = 0.5 / sqrt(1.25/4); HLN factor sqrt((4+1-2)/4)
        let r = dm_test(&[1.0, 0.0, 2.0, 0.0], &[0.0, 1.0, 0.0, 0.0], 1).unwrap();
        let expected = 0.5 / (1.25f64 / 4.0).sqrt() * (3.0f64 / 4.0).sqrt();
        assert!((r.statistic - expected).abs() < 1e-12);
        assert!((r.long_run_variance - 1.25).abs() < 1e-12);
    }

    #[test]
    fn strong_differential_is_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = NormalDist::new(1.0, 0.01).unwrap();
        let a: Vec<f64> = (0..100).map(|_| noise.sample(&mut rng)).collect();
        let b = vec![0.0; 100];
        let r = dm_test(&a, &b, 1).unwrap();
        assert!(r.statistic > 8.0);
        assert!(r.p_value < 1e-6);
    }
}
