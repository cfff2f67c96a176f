//! Linear-pool ensembles of binned forecasts, with weights trained by EM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::BinnedForecast;
use crate::scoring::floored_ln;

const WEIGHT_TOLERANCE: f64 = 1e-9;
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub component_ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl EnsembleSpec {
    pub fn new(component_ids: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, component_ids.len())?;
        Ok(Self { component_ids, weights })
    }

    pub fn uniform(component_ids: Vec<String>) -> Result<Self> {
        let n = component_ids.len();
        if n == 0 {
            return Err(Error::Argument("ensemble needs at least one component".into()));
        }
        Self::new(component_ids, vec![1.0 / n as f64; n])
    }

    /// `{component_id: weight}`.
    pub fn weights_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, f64> = self
            .component_ids
            .iter()
            .map(String::as_str)
            .zip(self.weights.iter().copied())
            .collect();
        serde_json::to_value(map).expect("string-keyed map serializes")
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n || n == 0 {
        return Err(Error::Argument(format!("{} weights for {n} components", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Argument(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Weighted mixture of forecasts that share one edge vector.
pub fn combine(forecasts: &[&BinnedForecast], weights: &[f64]) -> Result<BinnedForecast> {
    check_weights(weights, forecasts.len())?;
    let edges = forecasts[0].edges();
    if forecasts.iter().any(|f| f.edges() != edges) {
        return Err(Error::Grid);
    }
    let mut probs = vec![0.0; forecasts[0].n_bins()];
    for (f, &w) in forecasts.iter().zip(weights) {
        for (p, q) in probs.iter_mut().zip(f.probs()) {
            *p += w * q;
        }
    }
    BinnedForecast::new(edges.to_vec(), probs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedWeights {
    pub weights: Vec<f64>,
    /// All components assign identical mass in every case; weights are uniform.
    pub degenerate: bool,
    pub iterations: usize,
    /// Mean floored log score of the mixture: the uniform start, then after
    /// each accepted update.
    pub objective: Vec<f64>,
}

/// Mean floored log score of a mixture, given per-case component masses on
/// the realized outcome.
pub fn mixture_log_score(masses: &[Vec<f64>], weights: &[f64]) -> f64 {
    let total: f64 = masses
        .iter()
        .map(|m| floored_ln(m.iter().zip(weights).map(|(a, w)| a * w).sum()))
        .sum();
    total / masses.len() as f64
}

/// EM for mixture weights from `masses[case][component]`, the probability
/// each component assigned to what was observed. Starts uniform, stops when
/// no weight moves by more than 1e-8, after 500 iterations, or before any
/// update that would lower the floored objective. A single component is
/// returned instead if it scores better than the final iterate.
pub fn train_weights_from_masses(masses: &[Vec<f64>]) -> Result<TrainedWeights> {
    let n_comp = masses.first().map_or(0, Vec::len);
    if masses.is_empty() || n_comp < 2 {
        return Err(Error::Argument("weight training needs at least 2 components and 1 case".into()));
    }
    if masses.iter().any(|m| m.len() != n_comp) {
        return Err(Error::Argument("every case needs one mass per component".into()));
    }
    if masses.iter().flatten().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::Argument("component masses must be finite and non-negative".into()));
    }
    let mut w = vec![1.0 / n_comp as f64; n_comp];
    let mut objective = vec![mixture_log_score(masses, &w)];
    let degenerate = masses
        .iter()
        .all(|m| m.iter().all(|x| (x - m[0]).abs() <= 1e-12));
    if degenerate {
        return Ok(TrainedWeights {
            weights: w,
            degenerate: true,
            iterations: 0,
            objective,
        });
    }

    let mut iterations = 0;
    while iterations < EM_MAX_ITER {
        let mut next = vec![0.0; n_comp];
        let mut informative = 0usize;
        for m in masses {
            let mix: f64 = m.iter().zip(&w).map(|(a, b)| a * b).sum();
            if mix > 0.0 {
                informative += 1;
                for j in 0..n_comp {
                    next[j] += w[j] * m[j] / mix;
                }
            }
        }
        if informative == 0 {
            break;
        }
        for x in &mut next {
            *x /= informative as f64;
        }
        let value = mixture_log_score(masses, &next);
        if value < *objective.last().unwrap_or(&f64::NEG_INFINITY) {
            break;
        }
        iterations += 1;
        let change = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        objective.push(value);
        if change < EM_TOLERANCE {
            break;
        }
    }
    // EM approaches a vertex of the simplex only geometrically; if a single
    // component already beats the stopped iterate, take it.
    for j in 0..n_comp {
        let mut vertex = vec![0.0; n_comp];
        vertex[j] = 1.0;
        let value = mixture_log_score(masses, &vertex);
        if value > *objective.last().unwrap_or(&f64::NEG_INFINITY) {
            w = vertex;
            objective.push(value);
        }
    }
    Ok(TrainedWeights {
        weights: w,
        degenerate: false,
        iterations,
        objective,
    })
}

/// EM weights for `cases[case][component]` forecasts scored against
/// scalar truths.
pub fn train_weights(cases: &[Vec<BinnedForecast>], truths: &[f64]) -> Result<TrainedWeights> {
    if cases.len() != truths.len() {
        return Err(Error::Argument(format!("{} cases but {} truths", cases.len(), truths.len())));
    }
    let masses: Vec<Vec<f64>> = cases
        .iter()
        .zip(truths)
        .map(|(fs, &z)| fs.iter().map(|f| f.mass_at(z)).collect())
        .collect();
    train_weights_from_masses(&masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bf(probs: &[f64]) -> BinnedForecast {
        let edges = (0..=probs.len()).map(|i| i as f64).collect();
        BinnedForecast::new(edges, probs.to_vec()).unwrap()
    }

    #[test]
    fn combine_examples() {
        let a = bf(&[0.2, 0.3, 0.5]);
        let same = combine(&[&a, &a], &[0.3, 0.7]).unwrap();
        for (x, y) in same.probs().iter().zip(a.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
        let h1 = bf(&[1.0, 0.0, 0.0]);
        let h2 = bf(&[0.0, 0.0, 1.0]);
        assert_eq!(combine(&[&h1, &h2], &[0.5, 0.5]).unwrap().probs(), &[0.5, 0.0, 0.5]);
        assert_eq!(combine(&[&a, &h1], &[1.0, 0.0]).unwrap(), a);
    }

    #[test]
    fn combine_errors() {
        let a = bf(&[0.5, 0.5]);
        let b = bf(&[0.2, 0.3, 0.5]);
        assert!(matches!(combine(&[&a, &b], &[0.5, 0.5]), Err(Error::Grid)));
        assert!(matches!(combine(&[&a, &a], &[0.6, 0.6]), Err(Error::Argument(_))));
        assert!(matches!(combine(&[&a, &a], &[1.5, -0.5]), Err(Error::Argument(_))));
        assert!(EnsembleSpec::new(vec!["x".into()], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn perfect_component_dominates() {
        let masses: Vec<Vec<f64>> = (0..10).map(|_| vec![0.0, 1.0, 0.0]).collect();
        let t = train_weights_from_masses(&masses).unwrap();
        assert!(t.weights[1] > 0.95, "{t:?}");
        assert!(!t.degenerate);
    }

    #[test]
    fn identical_components_are_degenerate() {
        let a = bf(&[0.2, 0.8]);
        let t = train_weights(&[vec![a.clone(), a.clone()], vec![a.clone(), a]], &[0.5, 1.5]).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn single_case_mixture_is_at_least_the_best_component() {
        let cases = vec![vec![bf(&[0.9, 0.1]), bf(&[0.3, 0.7])]];
        let t = train_weights(&cases, &[0.5]).unwrap();
        let mix = combine(&[&cases[0][0], &cases[0][1]], &t.weights).unwrap();
        let best = crate::scoring::log_score_term(&cases[0][0], 0.5);
        assert!(crate::scoring::log_score_term(&mix, 0.5) >= best - 1e-9);
    }

    #[test]
    fn weights_json_maps_ids() {
        let spec = EnsembleSpec::new(vec!["b".into(), "a".into()], vec![0.25, 0.75]).unwrap();
        assert_eq!(spec.weights_json().to_string(), r#"{"a":0.75,"b":0.25}"#);
    }

    proptest! {
        #[test]
        fn em_objective_is_monotone(
            raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..20)
        ) {
            let t = train_weights_from_masses(&raw).unwrap();
            for w in t.objective.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            let uniform = mixture_log_score(&raw, &[1.0 / 3.0; 3]);
            prop_assert!(mixture_log_score(&raw, &t.weights) >= uniform - 1e-12);
            prop_assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn combine_is_associative_under_renormalization(
            p in prop::collection::vec(0.01f64..1.0, 4),
            q in prop::collection::vec(0.01f64..1.0, 4),
            r in prop::collection::vec(0.01f64..1.0, 4),
            w in prop::collection::vec(0.01f64..1.0, 3),
        ) {
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let (a, b, c) = (bf(&norm(&p)), bf(&norm(&q)), bf(&norm(&r)));
            let w = norm(&w);
            let flat = combine(&[&a, &b, &c], &w).unwrap();
            let inner = combine(&[&a, &b], &[w[0] / (w[0] + w[1]), w[1] / (w[0] + w[1])]).unwrap();
            let nested = combine(&[&inner, &c], &[w[0] + w[1], w[2]]).unwrap();
            for (x, y) in flat.probs().iter().zip(nested.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
