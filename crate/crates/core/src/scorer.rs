//! The fusion scorer: a small fully connected network mapping an evidence
//! vector to a relevance probability, trained with binary cross-entropy on
//! positives and BM25-mined hard negatives.
//!
//! Architecture: `5 → 64 → 32 → 1`, ReLU on hidden layers, logistic output,
//! inverted dropout on hidden activations during training. Gradients are
//! computed by hand; the optimizer is Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QrelSet;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::rng::{self, StreamRng};

pub const LAYER_SIZES: [usize; 4] = [NUM_FEATURES, 64, 32, 1];

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

pub trait Score: Sync {
    fn score(&self, v: &FeatureVector) -> f64;
}

/// Unweighted sum of the five features.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleScorer;

pub fn rule_score(v: &FeatureVector) -> f64 {
    v.0.iter().sum()
}

impl Score for RuleScorer {
    fn score(&self, v: &FeatureVector) -> f64 {
        rule_score(v)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Clamped binary cross-entropy of one prediction.
pub fn bce(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()),
        );
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard negatives mined per positive.
    pub neg_ratio: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, batch_size: 64, epochs: 50, neg_ratio: 3, dropout: 0.1, seed: 42 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub dropout_rate: f64,
    pub feature_order: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
}

/// Gradients with the same shape as a model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// Parameters in the order of [`ScorerModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }
}

/// Activations kept for backpropagation. `activations[0]` is the input;
/// `activations[l]` is the (masked, scaled) output of hidden layer `l`.
struct Trace {
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    logit: f64,
}

impl ScorerModel {
    /// A model with Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(layer_sizes: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes[0] != NUM_FEATURES || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::invalid(format!(
                "layer sizes must start at {NUM_FEATURES} and end at 1, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut init = rng::stream(seed, "scorer/init");
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for wt in &mut layer.weights {
                    *wt = init.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation: "relu".into(),
            output_activation: "logistic".into(),
            dropout_rate,
            feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            seed,
            config: None,
        })
    }

    /// The standard `5 → 64 → 32 → 1` scorer.
    pub fn standard(dropout_rate: f64, seed: u64) -> Self {
        Self::new(&LAYER_SIZES, dropout_rate, seed).expect("standard layer sizes are valid")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter count mismatch");
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }

    fn trace(&self, v: &FeatureVector, mut dropout: Option<&mut StreamRng>) -> Trace {
        let last = self.layers.len() - 1;
        let mut activations = vec![v.0.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let keep = 1.0 - self.dropout_rate;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(activations.last().unwrap(), &mut z);
            if l < last {
                let mut a: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
                let mask = match dropout.as_deref_mut() {
                    Some(rng) if self.dropout_rate > 0.0 => {
                        let m: Vec<f64> =
                            (0..a.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                        for (ai, mi) in a.iter_mut().zip(&m) {
                            *ai *= mi;
                        }
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                activations.push(a);
            }
            pre.push(z);
        }
        let logit = pre[last][0];
        Trace { activations, pre, masks, logit }
    }

    /// Relevance probability in `(0, 1)`, without dropout.
    pub fn forward(&self, v: &FeatureVector) -> f64 {
        sigmoid(self.trace(v, None).logit)
    }

    /// One training-mode pass with dropout masks drawn from `rng`.
    pub fn forward_train(&self, v: &FeatureVector, rng: &mut StreamRng) -> f64 {
        sigmoid(self.trace(v, Some(rng)).logit)
    }

    fn accumulate(&self, trace: &Trace, dlogit: f64, grads: &mut Gradients) {
        let mut delta = vec![dlogit];
        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            let g = &mut grads.layers[l];
            for (i, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[i] += d;
                let row = &mut g.weights[i * g.inputs..(i + 1) * g.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let layer = &self.layers[l];
            let mut prev = vec![0.0; layer.inputs];
            for (i, d) in delta.iter().enumerate() {
                let row = &layer.weights[i * layer.inputs..(i + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            let z = &trace.pre[l - 1];
            for (j, p) in prev.iter_mut().enumerate() {
                if z[j] <= 0.0 {
                    *p = 0.0;
                } else if let Some(m) = &trace.masks[l - 1] {
                    *p *= m[j];
                }
            }
            delta = prev;
        }
    }

    fn zero_grads(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    fn batch_pass(&self, batch: &[(FeatureVector, f64)], mut dropout: Option<&mut StreamRng>) -> (f64, Gradients) {
        let mut grads = self.zero_grads();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (v, y) in batch {
            let trace = self.trace(v, dropout.as_deref_mut());
            let p = sigmoid(trace.logit);
            loss += bce(p, *y);
            // d(bce)/d(logit); zero where the clamp is active.
            let dlogit = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) { p - y } else { 0.0 };
            self.accumulate(&trace, dlogit / n, &mut grads);
        }
        (loss / n, grads)
    }

    /// Mean clamped BCE over `batch` (no dropout).
    pub fn loss(&self, batch: &[(FeatureVector, f64)]) -> f64 {
        batch.iter().map(|(v, y)| bce(self.forward(v), *y)).sum::<f64>() / batch.len() as f64
    }

    /// Mean BCE over `batch` and its analytic gradient (no dropout).
    pub fn loss_and_gradient(&self, batch: &[(FeatureVector, f64)]) -> (f64, Gradients) {
        self.batch_pass(batch, None)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.check_shape()?;
        Ok(model)
    }

    fn check_shape(&self) -> Result<()> {
        let ok = self.layers.len() + 1 == self.layer_sizes.len()
            && self.layers.iter().enumerate().all(|(i, l)| {
                l.inputs == self.layer_sizes[i]
                    && l.outputs == self.layer_sizes[i + 1]
                    && l.weights.len() == l.inputs * l.outputs
                    && l.bias.len() == l.outputs
            })
            && self.layer_sizes.first() == Some(&NUM_FEATURES)
            && self.layer_sizes.last() == Some(&1);
        if !ok {
            return Err(Error::invalid("scorer layer dimensions do not chain"));
        }
        if self.feature_order != FEATURE_NAMES {
            return Err(Error::invalid(format!(
                "scorer feature order {:?} does not match {:?}",
                self.feature_order, FEATURE_NAMES
            )));
        }
        Ok(())
    }
}

impl Score for ScorerModel {
    fn score(&self, v: &FeatureVector) -> f64 {
        self.forward(v)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Trains a standard scorer on labeled vectors. Returns the model and the
/// mean training loss of every epoch.
pub fn train_scorer(examples: &[(FeatureVector, bool)], cfg: &TrainConfig) -> Result<(ScorerModel, Vec<f64>)> {
    train_with_layers(examples, cfg, &LAYER_SIZES)
}

pub fn train_with_layers(
    examples: &[(FeatureVector, bool)],
    cfg: &TrainConfig,
    layer_sizes: &[usize],
) -> Result<(ScorerModel, Vec<f64>)> {
    cfg.validate()?;
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::invalid("training set needs at least one positive and one negative example"));
    }
    let mut model = ScorerModel::new(layer_sizes, cfg.dropout, cfg.seed)?;
    model.config = Some(*cfg);

    let data: Vec<(FeatureVector, f64)> = examples.iter().map(|(v, y)| (*v, if *y { 1.0 } else { 0.0 })).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, "scorer/shuffle");
    let mut dropout = rng::stream(cfg.seed, "scorer/dropout");
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut params = model.params();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let (loss, grads) = model.batch_pass(&batch, Some(&mut dropout));
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut params, &grads.flatten());
            model.set_params(&params);
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((model, curve))
}

/// The first `neg_ratio × num_pos` non-positive documents of `bm25_ranking`,
/// in ranking order.
pub fn mine_hard_negatives(
    qid: &str,
    qrels: &QrelSet,
    bm25_ranking: &[String],
    neg_ratio: usize,
    num_pos: usize,
) -> Vec<String> {
    bm25_ranking
        .iter()
        .filter(|d| !qrels.is_positive(qid, d))
        .take(neg_ratio.saturating_mul(num_pos))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vector(rng: &mut StreamRng) -> FeatureVector {
        FeatureVector([
            rng.random(),
            rng.random(),
            if rng.random::<bool>() { 1.0 } else { 0.0 },
            rng.random(),
            rng.random(),
        ])
    }

    #[test]
    fn zero_model_outputs_half() {
        let mut m = ScorerModel::standard(0.1, 1);
        let zeros = vec![0.0; m.num_params()];
        m.set_params(&zeros);
        assert_eq!(m.forward(&FeatureVector([0.3, 0.1, 1.0, 0.2, 0.9])), 0.5);
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let mut rng = rng::stream(3, "t");
        for seed in 0..20 {
            let m = ScorerModel::standard(0.1, seed);
            for _ in 0..20 {
                let p = m.forward(&random_vector(&mut rng));
                assert!(p > 0.0 && p < 1.0);
            }
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn inference_is_deterministic_and_training_mode_uses_dropout() {
        let m = ScorerModel::standard(0.5, 9);
        let v = FeatureVector([0.5, 0.5, 1.0, 0.5, 0.5]);
        assert_eq!(m.forward(&v).to_bits(), m.forward(&v).to_bits());
        let mut a = rng::stream(1, "d");
        let mut b = rng::stream(1, "d");
        assert_eq!(m.forward_train(&v, &mut a), m.forward_train(&v, &mut b));
        let outs: Vec<f64> = (0..10).map(|_| m.forward_train(&v, &mut a)).collect();
        assert!(outs.iter().any(|o| *o != m.forward(&v)));
    }

    #[test]
    fn rule_score_is_feature_sum() {
        assert!((rule_score(&FeatureVector([0.9, 0.8, 1.0, 0.5, 0.5])) - 3.7).abs() < 1e-12);
        assert_eq!(rule_score(&FeatureVector::ZERO), 0.0);
        let a = FeatureVector([0.2, 0.2, 1.0, 0.3, 0.4]);
        let mut b = a;
        b.0[4] = 0.9;
        assert!(rule_score(&b) > rule_score(&a));
    }

    #[test]
    fn mining_takes_top_non_positives() {
        let mut qrels = QrelSet::new(1);
        qrels.insert("q", "d1", 1).unwrap();
        let ranking: Vec<String> = ["d1", "d2", "d3", "d4", "d5"].iter().map(|s| s.to_string()).collect();
        assert_eq!(mine_hard_negatives("q", &qrels, &ranking, 3, 1), vec!["d2", "d3", "d4"]);
        assert_eq!(mine_hard_negatives("q", &qrels, &ranking[..3], 3, 1), vec!["d2", "d3"]);
        assert!(mine_hard_negatives("q", &qrels, &ranking, 0, 1).is_empty());
    }

    fn separable_set(seed: u64, n: usize) -> Vec<(FeatureVector, bool)> {
        let mut rng = rng::stream(seed, "separable");
        (0..n)
            .map(|i| {
                let mut v = random_vector(&mut rng);
                let pos = i % 4 == 0;
                v.0[2] = if pos { 1.0 } else { 0.0 };
                (v, pos)
            })
            .collect()
    }

    #[test]
    fn learns_separable_set() {
        let data = separable_set(5, 1024);
        let cfg = TrainConfig { epochs: 200, seed: 11, ..Default::default() };
        let (model, curve) = train_scorer(&data, &cfg).unwrap();
        assert!(curve.iter().all(|l| l.is_finite()));
        assert!(curve[199] < curve[0]);
        let correct = data.iter().filter(|(v, y)| (model.forward(v) > 0.5) == *y).count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = separable_set(2, 200);
        let cfg = TrainConfig { epochs: 5, seed: 3, ..Default::default() };
        let (a, ca) = train_scorer(&data, &cfg).unwrap();
        let (b, cb) = train_scorer(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<_> = separable_set(2, 20).into_iter().map(|(v, _)| (v, true)).collect();
        assert!(train_scorer(&data, &TrainConfig::default()).is_err());
        assert!(train_scorer(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn save_load_is_bitwise() {
        let data = separable_set(4, 100);
        let (model, _) = train_scorer(&data, &TrainConfig { epochs: 3, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scorer.json");
        model.save(&p).unwrap();
        let back = ScorerModel::load(&p).unwrap();
        assert_eq!(back, model);
        for (v, _) in &data {
            assert_eq!(back.forward(v).to_bits(), model.forward(v).to_bits());
        }
    }

    #[test]
    fn load_rejects_bad_shapes() {
        let mut m = ScorerModel::standard(0.1, 1);
        m.layers[1].bias.pop();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        m.save(&p).unwrap();
        assert!(ScorerModel::load(&p).is_err());
    }

    proptest! {
        #[test]
        fn mined_negatives_are_disjoint_and_ordered(
            labels in prop::collection::vec(0u32..3, 1..30),
            ratio in 0usize..5,
            num_pos in 0usize..4,
        ) {
            let mut qrels = QrelSet::new(2);
            let ranking: Vec<String> = (0..labels.len()).map(|i| format!("d{i:02}")).collect();
            for (d, l) in ranking.iter().zip(&labels) {
                qrels.insert("q", d, *l).unwrap();
            }
            let negs = mine_hard_negatives("q", &qrels, &ranking, ratio, num_pos);
            prop_assert!(negs.len() <= ratio * num_pos);
            prop_assert!(negs.iter().all(|d| !qrels.is_positive("q", d)));
            let positions: Vec<usize> = negs.iter().map(|d| ranking.iter().position(|r| r == d).unwrap()).collect();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
