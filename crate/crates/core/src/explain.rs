//! Exact Shapley attribution over the five evidence features.
//!
//! The value of a coalition `T` is the scorer's output on the vector that
//! takes instance values on `T` and baseline values elsewhere. With five
//! players there are only 32 coalitions, so every attribution is exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::par;
use crate::scorer::Score;

const NUM_COALITIONS: usize = 1 << NUM_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: [f64; NUM_FEATURES],
    pub base_value: f64,
    pub instance_value: f64,
}

impl Attribution {
    /// `Σφ − (f(x) − f(baseline))`; zero up to rounding by the efficiency axiom.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.instance_value - self.base_value)
    }
}

/// Shapley weight `|S|! (n − |S| − 1)! / n!` for a coalition of size `s`
/// not containing the player.
fn coalition_weight(s: usize) -> f64 {
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    fact(s) * fact(NUM_FEATURES - s - 1) / fact(NUM_FEATURES)
}

fn hybrid(v: &FeatureVector, baseline: &FeatureVector, coalition: usize) -> FeatureVector {
    let mut out = baseline.0;
    for (i, slot) in out.iter_mut().enumerate() {
        if coalition & (1 << i) != 0 {
            *slot = v.0[i];
        }
    }
    FeatureVector(out)
}

/// Exact Shapley values of `f` at `v` relative to `baseline`.
pub fn exact_shapley_fn<F>(f: F, v: &FeatureVector, baseline: &FeatureVector) -> Attribution
where
    F: Fn(&FeatureVector) -> f64,
{
    let values: Vec<f64> = (0..NUM_COALITIONS).map(|c| f(&hybrid(v, baseline, c))).collect();
    let weights: [f64; NUM_FEATURES] = std::array::from_fn(coalition_weight);
    let mut phi = [0.0; NUM_FEATURES];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1 << i;
        *p = (0..NUM_COALITIONS)
            .filter(|c| c & bit == 0)
            .map(|c| weights[c.count_ones() as usize] * (values[c | bit] - values[c]))
            .sum();
    }
    Attribution { phi, base_value: values[0], instance_value: values[NUM_COALITIONS - 1] }
}

pub fn exact_shapley<S: Score + ?Sized>(model: &S, v: &FeatureVector, baseline: &FeatureVector) -> Attribution {
    exact_shapley_fn(|x| model.score(x), v, baseline)
}

/// Attributions for many instances, in input order.
pub fn attribute_all<S: Score + ?Sized>(
    model: &S,
    instances: &[FeatureVector],
    baseline: &FeatureVector,
) -> Vec<Attribution> {
    par::map(instances, |v| exact_shapley(model, v, baseline))
}

/// Mean `|φ_i|` per feature over `instances`, keyed by feature name.
pub fn global_importance<S: Score + ?Sized>(
    model: &S,
    instances: &[FeatureVector],
    baseline: &FeatureVector,
) -> Result<BTreeMap<&'static str, f64>> {
    if instances.is_empty() {
        return Err(Error::invalid("global importance needs at least one instance"));
    }
    let attributions = attribute_all(model, instances, baseline);
    Ok(mean_abs_phi(&attributions).into_iter().enumerate().map(|(i, m)| (FEATURE_NAMES[i], m)).collect())
}

/// Mean `|φ_i|` per feature, in feature order.
pub fn mean_abs_phi(attributions: &[Attribution]) -> [f64; NUM_FEATURES] {
    let mut sum = [0.0; NUM_FEATURES];
    for a in attributions {
        for (s, p) in sum.iter_mut().zip(a.phi) {
            *s += p.abs();
        }
    }
    sum.map(|s| s / attributions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{RuleScorer, ScorerModel};

    #[test]
    fn weights_sum_to_one_per_player() {
        // Σ_s C(n-1, s) w(s) = 1.
        let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let total: f64 = (0..NUM_FEATURES).map(|s| binom(NUM_FEATURES - 1, s) * coalition_weight(s)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_rule_on_one_feature() {
        let v = FeatureVector([1.0, 0.3, 1.0, 0.2, 0.9]);
        let a = exact_shapley_fn(|x| 2.0 * x.0[0], &v, &FeatureVector::ZERO);
        assert!((a.phi[0] - 2.0).abs() < 1e-12);
        for p in &a.phi[1..] {
            assert_eq!(*p, 0.0);
        }
    }

    #[test]
    fn rule_scorer_attributions_are_differences() {
        let v = FeatureVector([0.9, 0.8, 1.0, 0.5, 0.5]);
        let base = FeatureVector([0.5, 0.5, 0.5, 0.5, 0.5]);
        let a = exact_shapley(&RuleScorer, &v, &base);
        for i in 0..NUM_FEATURES {
            assert!((a.phi[i] - (v.0[i] - base.0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn efficiency_holds_for_mlp() {
        let m = ScorerModel::standard(0.1, 4);
        let a = exact_shapley(&m, &FeatureVector([0.2, 0.9, 1.0, 0.4, 0.7]), &FeatureVector([0.5, 0.5, 0.3, 0.2, 0.4]));
        assert!(a.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn global_importance_basics() {
        let m = ScorerModel::standard(0.1, 8);
        let base = FeatureVector([0.5; 5]);
        let v = FeatureVector([0.1, 0.9, 1.0, 0.3, 0.6]);
        let single = global_importance(&m, &[v], &base).unwrap();
        let a = exact_shapley(&m, &v, &base);
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            assert_eq!(single[name], a.phi[i].abs());
        }
        let w = FeatureVector([0.7, 0.2, 0.0, 0.9, 0.1]);
        let once = global_importance(&m, &[v, w], &base).unwrap();
        let twice = global_importance(&m, &[v, w, v, w], &base).unwrap();
        for name in FEATURE_NAMES {
            assert!((once[name] - twice[name]).abs() < 1e-15);
        }
        assert!(global_importance(&m, &[], &base).is_err());
    }
}
