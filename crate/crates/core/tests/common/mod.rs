//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use juris_core::features::{FeatureVector, NUM_FEATURES};
use juris_core::scorer::ScorerModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random scored run for one query plus graded judgments.
#[derive(Debug, Clone)]
pub struct RunInstance {
    pub scored: Vec<(String, f64)>,
    pub judgments: BTreeMap<String, u32>,
}

impl RunInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..=15);
        let scored: Vec<(String, f64)> = (0..n)
            .map(|i| {
                // Coarse scores so that ties are common.
                let score = f64::from(rng.random_range(0..6u32)) / 2.0;
                (format!("d{i:02}"), score)
            })
            .collect();
        let mut judgments = BTreeMap::new();
        for (d, _) in &scored {
            if rng.random_bool(0.6) {
                judgments.insert(d.clone(), rng.random_range(0..=3));
            }
        }
        // Judged documents the run never retrieved.
        for j in 0..rng.random_range(0..3) {
            judgments.insert(format!("unretrieved{j}"), rng.random_range(0..=3));
        }
        Self { scored, judgments }
    }

    pub fn positives(&self, threshold: u32) -> BTreeSet<String> {
        self.judgments.iter().filter(|(_, &l)| l >= threshold).map(|(d, _)| d.clone()).collect()
    }
}

/// Ranking by brute force: a document's rank is one plus the number of
/// documents that beat it (higher score, or equal score and smaller id).
pub fn oracle_order(scored: &[(String, f64)]) -> Vec<String> {
    let mut slots: Vec<Option<String>> = vec![None; scored.len()];
    for (d, s) in scored {
        let beaten_by = scored.iter().filter(|(e, t)| t > s || (t == s && e < d)).count();
        slots[beaten_by] = Some(d.clone());
    }
    slots.into_iter().map(|s| s.expect("ranks are a permutation")).collect()
}

fn is_rel(order: &[String], positives: &BTreeSet<String>, rank: usize) -> f64 {
    match order.get(rank - 1) {
        Some(d) if positives.contains(d) => 1.0,
        _ => 0.0,
    }
}

/// `AP = (1/R) Σ_{k=1}^{n} P@k · rel(k)`, computed from scratch at each k.
pub fn oracle_ap(order: &[String], positives: &BTreeSet<String>) -> f64 {
    let r = positives.len() as f64;
    (1..=order.len()).map(|k| oracle_p(order, positives, k) * is_rel(order, positives, k)).sum::<f64>() / r
}

pub fn oracle_p(order: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    (1..=k).map(|i| is_rel(order, positives, i)).sum::<f64>() / k as f64
}

pub fn oracle_r(order: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    (1..=k).map(|i| is_rel(order, positives, i)).sum::<f64>() / positives.len() as f64
}

pub fn oracle_hits(order: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    (1..=k).map(|i| is_rel(order, positives, i)).fold(0.0, f64::max)
}

pub fn oracle_mrr(order: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    // The first positive rank i contributes 1/i; later ones are masked out
    // by requiring no positive before them.
    (1..=k)
        .map(|i| {
            let first = (1..i).all(|j| is_rel(order, positives, j) == 0.0);
            if first {
                is_rel(order, positives, i) / i as f64
            } else {
                0.0
            }
        })
        .sum()
}

/// Maximum relative error between the analytic gradient and central
/// differences with step `h`.
pub fn gradient_check(model: &ScorerModel, batch: &[(FeatureVector, f64)], h: f64) -> f64 {
    let (_, grads) = model.loss_and_gradient(batch);
    let analytic = grads.flatten();
    let params = model.params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_params(&p);
        let up = probe.loss(batch);
        p[i] = params[i] - h;
        probe.set_params(&p);
        let down = probe.loss(batch);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

pub fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
    FeatureVector([
        rng.random(),
        rng.random(),
        if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        rng.random(),
        rng.random(),
    ])
}

/// Model with random non-zero biases, so hidden units are not all on the
/// same side of the ReLU kink.
pub fn random_model(rng: &mut ChaCha8Rng, sizes: &[usize]) -> ScorerModel {
    let mut m = ScorerModel::new(sizes, 0.0, rng.random()).unwrap();
    let mut p = m.params();
    let mut offset = 0;
    for l in &m.layers {
        offset += l.weights.len();
        for b in &mut p[offset..offset + l.bias.len()] {
            *b = rng.random_range(-0.5..0.5);
        }
        offset += l.bias.len();
    }
    m.set_params(&p);
    m
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut tail in permutations(rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Shapley values as the average marginal contribution over all 5! = 120
/// orderings of the features.
pub fn permutation_shapley(
    f: impl Fn(&FeatureVector) -> f64,
    x: &FeatureVector,
    baseline: &FeatureVector,
) -> [f64; NUM_FEATURES] {
    let perms = permutations((0..NUM_FEATURES).collect());
    assert_eq!(perms.len(), 120);
    let mut phi = [0.0; NUM_FEATURES];
    for perm in &perms {
        let mut current = *baseline;
        let mut before = f(&current);
        for &i in perm {
            current.0[i] = x.0[i];
            let after = f(&current);
            phi[i] += after - before;
            before = after;
        }
    }
    phi.map(|p| p / perms.len() as f64)
}

/// Smallest `|z|` over all hidden pre-activations of `model` at `v`.
pub fn min_hidden_preactivation(model: &ScorerModel, v: &FeatureVector) -> f64 {
    let mut a = v.0.to_vec();
    let mut min = f64::INFINITY;
    for layer in &model.layers[..model.layers.len() - 1] {
        let z: Vec<f64> = layer
            .weights
            .chunks_exact(layer.inputs)
            .zip(&layer.bias)
            .map(|(row, b)| b + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        min = z.iter().fold(min, |m, x| m.min(x.abs()));
        a = z.iter().map(|x| x.max(0.0)).collect();
    }
    min
}

/// A random labeled batch whose examples keep every hidden pre-activation at
/// least `margin` away from the ReLU kink, where central differences are
/// not meaningful.
pub fn random_smooth_batch(rng: &mut ChaCha8Rng, model: &ScorerModel, margin: f64) -> Vec<(FeatureVector, f64)> {
    let n = rng.random_range(1..=16);
    let mut batch = Vec::with_capacity(n);
    while batch.len() < n {
        let v = random_features(rng);
        if min_hidden_preactivation(model, &v) >= margin {
            batch.push((v, if rng.random_bool(0.5) { 1.0 } else { 0.0 }));
        }
    }
    batch
}
