//! Latent legal indicator inference.
//!
//! An indicator is the pair (charges, elements) inferred for a query together
//! with two confidences in `[0, 1]`. Two providers produce them:
//!
//! * [`load_indicators`] ingests the output of an external generator. Each
//!   record carries the decoder's mean per-token log-probability for the charge
//!   segment and the element segment; the confidence of a segment is the
//!   exponential of that mean.
//! * [`GeneratorModel`] is a built-in probabilistic generator factorized as
//!   `P(c | q) · P(e | q, c)`: a multinomial naive Bayes charge model over query
//!   tokens, followed by element selection conditioned on the predicted charge
//!   (hierarchical mode) or from the unconditional element distribution
//!   (independent mode).
//!
//! Whatever the provider, every result is passed through
//! [`Taxonomy::filter_valid`] before it leaves this module.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Document, Query};
use crate::error::{Error, Result};
use crate::lexical::{tokenize, TokenizerConfig};
use crate::taxonomy::{canonical, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationMode {
    #[default]
    Hierarchical,
    Independent,
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(Self::Hierarchical),
            "independent" => Ok(Self::Independent),
            other => Err(Error::invalid(format!("unknown generation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FileBacked,
    Hierarchical,
    Independent,
}

impl From<GenerationMode> for Provenance {
    fn from(mode: GenerationMode) -> Self {
        match mode {
            GenerationMode::Hierarchical => Provenance::Hierarchical,
            GenerationMode::Independent => Provenance::Independent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorResult {
    pub charges: BTreeSet<String>,
    pub elements: BTreeSet<String>,
    pub charge_confidence: f64,
    pub element_confidence: f64,
    pub provenance: Provenance,
}

impl IndicatorResult {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            charges: BTreeSet::new(),
            elements: BTreeSet::new(),
            charge_confidence: 0.0,
            element_confidence: 0.0,
            provenance,
        }
    }
}

/// Geometric mean of probabilities, i.e. `exp(mean(ln p))`. Zero for an
/// empty input.
pub fn geometric_mean(probs: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    mean_log.exp()
}

/// Returns the index of the maximum score (first wins on ties, so callers
/// pass scores in lexicographic order) and the softmax posterior.
pub fn posterior_argmax(log_scores: &[f64]) -> Option<(usize, Vec<f64>)> {
    let mut best: Option<usize> = None;
    for (i, &s) in log_scores.iter().enumerate() {
        if best.is_none_or(|b| s > log_scores[b]) {
            best = Some(i);
        }
    }
    let best = best?;
    let max = log_scores[best];
    let weights: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Some((best, weights.into_iter().map(|w| w / z).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub mode: GenerationMode,
    pub smoothing_alpha: f64,
    pub top_k_elements: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mode: GenerationMode::Hierarchical,
            smoothing_alpha: 1.0,
            top_k_elements: 6,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

/// Per-charge token model. Terms of the vocabulary never seen with this
/// charge, and the shared "unseen" slot, all get `unseen_loglik`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeModel {
    pub log_prior: f64,
    pub token_loglik: BTreeMap<String, f64>,
    pub unseen_loglik: f64,
}

impl ChargeModel {
    fn loglik(&self, term: &str) -> f64 {
        self.token_loglik.get(term).copied().unwrap_or(self.unseen_loglik)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub vocab: BTreeSet<String>,
    pub charges: BTreeMap<String, ChargeModel>,
    /// Normalized per charge. Empty in independent mode.
    pub element_given_charge: BTreeMap<String, BTreeMap<String, f64>>,
    pub element_marginal: BTreeMap<String, f64>,
}

fn normalize_counts(counts: BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let total: u64 = counts.values().sum();
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

impl GeneratorModel {
    /// Fits the generator on labeled documents.
    ///
    /// Documents without charges are skipped. Charges must belong to the
    /// taxonomy; elements outside it are ignored.
    pub fn fit(docs: &[Document], tax: &Taxonomy, config: GeneratorConfig) -> Result<Self> {
        if !config.smoothing_alpha.is_finite() || config.smoothing_alpha <= 0.0 {
            return Err(Error::invalid("smoothing alpha must be positive"));
        }
        if config.top_k_elements == 0 {
            return Err(Error::invalid("top_k_elements must be at least 1"));
        }

        let mut doc_counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut token_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut pair_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut element_counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut vocab = BTreeSet::new();

        for doc in docs.iter().filter(|d| !d.charges.is_empty()) {
            let charges: BTreeSet<String> = doc.charges.iter().map(|c| canonical(c)).collect();
            if let Some(bad) = charges.iter().find(|c| !tax.is_charge(c)) {
                return Err(Error::invalid(format!("document `{}` has charge `{bad}` outside the taxonomy", doc.id)));
            }
            let elements: BTreeSet<String> =
                doc.elements.iter().map(|e| canonical(e)).filter(|e| tax.is_element(e)).collect();
            let tokens = tokenize(&doc.text, &config.tokenizer);
            vocab.extend(tokens.iter().cloned());
            for e in &elements {
                *element_counts.entry(e.clone()).or_insert(0) += 1;
            }
            for c in &charges {
                *doc_counts.entry(c.clone()).or_insert(0) += 1;
                let tc = token_counts.entry(c.clone()).or_default();
                for t in &tokens {
                    *tc.entry(t.clone()).or_insert(0) += 1;
                }
                if config.mode == GenerationMode::Hierarchical {
                    let pc = pair_counts.entry(c.clone()).or_default();
                    for e in &elements {
                        *pc.entry(e.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        if doc_counts.is_empty() {
            return Err(Error::invalid("no labeled documents to fit the generator on"));
        }

        let total_docs: u64 = doc_counts.values().sum();
        let alpha = config.smoothing_alpha;
        let slots = vocab.len() as f64 + 1.0;
        let charges = doc_counts
            .iter()
            .map(|(c, &n)| {
                let counts = &token_counts[c];
                let total_tokens: u64 = counts.values().sum();
                let denom = (total_tokens as f64 + alpha * slots).ln();
                let token_loglik = counts.iter().map(|(t, &k)| (t.clone(), (k as f64 + alpha).ln() - denom)).collect();
                let model = ChargeModel {
                    log_prior: (n as f64 / total_docs as f64).ln(),
                    token_loglik,
                    unseen_loglik: alpha.ln() - denom,
                };
                (c.clone(), model)
            })
            .collect();

        Ok(Self {
            config,
            vocab,
            charges,
            element_given_charge: pair_counts
                .into_iter()
                .filter(|(_, m)| !m.is_empty())
                .map(|(c, m)| (c, normalize_counts(m)))
                .collect(),
            element_marginal: if element_counts.is_empty() {
                BTreeMap::new()
            } else {
                normalize_counts(element_counts)
            },
        })
    }

    pub fn mode(&self) -> GenerationMode {
        self.config.mode
    }

    /// Unnormalized log scores `ln P(c) + Σ ln P(t | c)` over in-vocabulary
    /// query tokens, in charge order.
    pub fn charge_log_scores(&self, text: &str) -> Vec<(&str, f64)> {
        let tokens: Vec<String> =
            tokenize(text, &self.config.tokenizer).into_iter().filter(|t| self.vocab.contains(t)).collect();
        self.charges
            .iter()
            .map(|(c, m)| {
                let ll: f64 = tokens.iter().map(|t| m.loglik(t)).sum();
                (c.as_str(), m.log_prior + ll)
            })
            .collect()
    }

    /// `P(c | q)` for every charge, in charge order.
    pub fn charge_posterior(&self, text: &str) -> Vec<(String, f64)> {
        let scores = self.charge_log_scores(text);
        let raw: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
        let (_, post) = posterior_argmax(&raw).expect("fitted model has charges");
        scores.into_iter().zip(post).map(|((c, _), p)| (c.to_string(), p)).collect()
    }

    /// Element distribution used for charge `charge` under this model's mode.
    fn element_weights(&self, charge: &str) -> &BTreeMap<String, f64> {
        match self.config.mode {
            GenerationMode::Independent => &self.element_marginal,
            GenerationMode::Hierarchical => self.element_given_charge.get(charge).unwrap_or(&self.element_marginal),
        }
    }

    pub fn infer(&self, query: &Query, tax: &Taxonomy) -> IndicatorResult {
        self.infer_text(&query.text, tax)
    }

    pub fn infer_text(&self, text: &str, tax: &Taxonomy) -> IndicatorResult {
        let provenance = Provenance::from(self.config.mode);
        if text.trim().is_empty() {
            return IndicatorResult::empty(provenance);
        }
        let scores = self.charge_log_scores(text);
        let raw: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
        let (best, posterior) = posterior_argmax(&raw).expect("fitted model has charges");
        let charge = scores[best].0;

        let mut candidates: Vec<(&String, f64)> =
            self.element_weights(charge).iter().map(|(e, &w)| (e, w)).filter(|(_, w)| *w > 0.0).collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        // Hierarchical generation ranks only among elements the taxonomy
        // admits for the charge; independent generation never looks at it.
        if self.config.mode == GenerationMode::Hierarchical {
            let (_, admissible) = tax.filter_valid([charge], candidates.iter().map(|(e, _)| e.as_str()));
            candidates.retain(|(e, _)| admissible.contains(*e));
        }
        let chosen: BTreeMap<&str, f64> =
            candidates.into_iter().take(self.config.top_k_elements).map(|(e, w)| (e.as_str(), w)).collect();

        let (charges, elements) = tax.filter_valid([charge], chosen.keys());
        let weights: Vec<f64> = elements.iter().map(|e| chosen[e.as_str()]).collect();
        IndicatorResult {
            charge_confidence: if charges.is_empty() { 0.0 } else { posterior[best] },
            element_confidence: geometric_mean(&weights),
            charges,
            elements,
            provenance,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One line of `indicators.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<String>,
    #[serde(default)]
    pub charges: Vec<String>,
    #[serde(default)]
    pub elements: Vec<String>,
    pub charge_logprob_mean: f64,
    pub element_logprob_mean: f64,
}

impl IndicatorRecord {
    /// Converts one raw external record, applying the validity filter.
    pub fn into_result(self, tax: &Taxonomy) -> Result<IndicatorResult> {
        for (name, lp) in
            [("charge_logprob_mean", self.charge_logprob_mean), ("element_logprob_mean", self.element_logprob_mean)]
        {
            if lp.is_nan() || lp > 0.0 {
                return Err(Error::invalid(format!("{name} = {lp} is not a log-probability (must be <= 0)")));
            }
        }
        let (charges, elements) = tax.filter_valid(&self.charges, &self.elements);
        Ok(IndicatorResult {
            charges,
            elements,
            charge_confidence: self.charge_logprob_mean.exp(),
            element_confidence: self.element_logprob_mean.exp(),
            provenance: Provenance::FileBacked,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedIndicators {
    pub results: BTreeMap<String, IndicatorResult>,
    /// Records without a usable `qid`.
    pub skipped: usize,
}

pub fn load_indicators(path: impl AsRef<Path>, tax: &Taxonomy) -> Result<LoadedIndicators> {
    let path = path.as_ref();
    let mut loaded = LoadedIndicators::default();
    for (line, record) in read_jsonl::<IndicatorRecord>(path)? {
        let qid = match record.qid.as_deref().map(str::trim) {
            Some(q) if !q.is_empty() => q.to_string(),
            _ => {
                loaded.skipped += 1;
                continue;
            }
        };
        let result = record.into_result(tax).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if loaded.results.insert(qid.clone(), result).is_some() {
            return Err(Error::parse(path, line, format!("duplicate qid `{qid}`")));
        }
    }
    if loaded.skipped > 0 {
        log::warn!("{}: skipped {} records without qid", path.display(), loaded.skipped);
    }
    Ok(loaded)
}

/// Writes results in the `indicators.jsonl` schema. Confidences are stored
/// as their logarithms; a zero confidence is stored as the most negative
/// finite float.
pub fn save_indicators(path: impl AsRef<Path>, results: &BTreeMap<String, IndicatorResult>) -> Result<()> {
    let records: Vec<IndicatorRecord> = results
        .iter()
        .map(|(qid, r)| IndicatorRecord {
            qid: Some(qid.clone()),
            charges: r.charges.iter().cloned().collect(),
            elements: r.elements.iter().cloned().collect(),
            charge_logprob_mean: r.charge_confidence.ln().clamp(f64::MIN, 0.0),
            element_logprob_mean: r.element_confidence.ln().clamp(f64::MIN, 0.0),
        })
        .collect();
    write_jsonl(path.as_ref(), &records)
}

/// Element-set F1 between a prediction and gold labels. Both empty counts
/// as a perfect match.
pub fn element_f1(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    if predicted.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let hits = predicted.intersection(gold).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let p = hits / predicted.len() as f64;
    let r = hits / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn doc(id: &str, text: &str, charge: &str, elements: &[&str]) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            charges: [charge.to_string()].into(),
            elements: elements.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn two_charge_corpus() -> (Vec<Document>, Taxonomy) {
        let docs = vec![
            doc("a1", "knife wallet street", "theft", &["e1"]),
            doc("a2", "wallet pocket street", "theft", &["e1", "e2"]),
            doc("b1", "bank transfer lie", "fraud", &["e3"]),
            doc("b2", "transfer fake lie", "fraud", &["e3", "e4"]),
        ];
        let tax = Taxonomy::new(["theft", "fraud"], ["e1", "e2", "e3", "e4"]).unwrap();
        (docs, tax)
    }

    fn query(text: &str) -> Query {
        Query { id: "q".into(), text: text.into(), pool: vec![] }
    }

    #[test]
    fn priors_from_document_counts() {
        let (docs, tax) = two_charge_corpus();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        for c in m.charges.values() {
            assert!((c.log_prior - 0.5f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn token_distribution_sums_to_one() {
        let (docs, tax) = two_charge_corpus();
        let m =
            GeneratorModel::fit(&docs, &tax, GeneratorConfig { smoothing_alpha: 0.5, ..Default::default() }).unwrap();
        for c in m.charges.values() {
            let total: f64 = m.vocab.iter().map(|t| c.loglik(t).exp()).sum::<f64>() + c.unseen_loglik.exp();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn element_conditional_is_count_ratio() {
        let mut docs = Vec::new();
        for i in 0..3 {
            docs.push(doc(&format!("x{i}"), "w", "theft", &["e1"]));
        }
        docs.push(doc("y", "w", "theft", &["e2"]));
        let tax = Taxonomy::new(["theft"], ["e1", "e2"]).unwrap();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        assert_eq!(m.element_given_charge["theft"]["e1"], 0.75);
        assert_eq!(m.element_given_charge["theft"]["e2"], 0.25);

        let ind = GeneratorModel::fit(
            &docs,
            &tax,
            GeneratorConfig { mode: GenerationMode::Independent, ..Default::default() },
        )
        .unwrap();
        assert!(ind.element_given_charge.is_empty());
        assert_eq!(ind.element_marginal["e1"], 0.75);
    }

    #[test]
    fn fit_errors() {
        let (mut docs, tax) = two_charge_corpus();
        let unlabeled: Vec<Document> = docs
            .iter()
            .cloned()
            .map(|mut d| {
                d.charges.clear();
                d
            })
            .collect();
        assert!(GeneratorModel::fit(&unlabeled, &tax, GeneratorConfig::default()).is_err());
        docs.push(doc("z", "x", "arson", &[]));
        assert!(GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).is_err());
    }

    #[test]
    fn discriminative_query_picks_its_charge() {
        let (docs, tax) = two_charge_corpus();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        let r = m.infer(&query("wallet pocket knife"), &tax);
        assert_eq!(r.charges, BTreeSet::from(["theft".to_string()]));
        assert!(r.charge_confidence > 0.5);

        // Hand enumeration: vocab = {bank,fake,knife,lie,pocket,street,transfer,wallet},
        // |V| + 1 = 9, six tokens per charge, alpha = 1 -> denominator 15.
        // theft: wallet 3/15, pocket 2/15, knife 2/15; fraud: 1/15 each.
        let theft = (3.0 * 2.0 * 2.0) / 15f64.powi(3);
        let fraud = 1.0 / 15f64.powi(3);
        let expected = theft / (theft + fraud);
        assert!((r.charge_confidence - expected).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_gives_uniform_posterior() {
        let (docs, tax) = two_charge_corpus();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        let r = m.infer(&query("zebra unicorn"), &tax);
        assert_eq!(r.charges, BTreeSet::from(["fraud".to_string()]));
        assert!((r.charge_confidence - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_query_yields_empty_result() {
        let (docs, tax) = two_charge_corpus();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        let r = m.infer(&query("   "), &tax);
        assert_eq!(r, IndicatorResult::empty(Provenance::Hierarchical));
    }

    #[test]
    fn single_element_confidence_is_its_probability() {
        assert!((geometric_mean(&[0.8]) - 0.8).abs() < 1e-15);
        assert!((geometric_mean(&[0.5, 0.125]) - 0.25).abs() < 1e-15);
        assert_eq!(geometric_mean(&[]), 0.0);
    }

    #[test]
    fn hierarchical_elements_follow_the_charge() {
        let (docs, tax) = two_charge_corpus();
        let cfg = GeneratorConfig { top_k_elements: 1, ..Default::default() };
        let m = GeneratorModel::fit(&docs, &tax, cfg).unwrap();
        let r = m.infer(&query("bank transfer"), &tax);
        assert_eq!(r.elements, BTreeSet::from(["e3".to_string()]));
        // e3 appears in both fraud docs, e4 in one: P(e3 | fraud) = 2/3.
        assert!((r.element_confidence - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_invariant_to_common_shift() {
        let base = [-3.0, -1.5, -2.25];
        let (i, p) = posterior_argmax(&base).unwrap();
        let shifted: Vec<f64> = base.iter().map(|s| s + 17.0).collect();
        let (j, q) = posterior_argmax(&shifted).unwrap();
        assert_eq!(i, j);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(posterior_argmax(&[1.0, 1.0]).unwrap().0, 0);
    }

    #[test]
    fn model_round_trips_through_json() {
        let (docs, tax) = two_charge_corpus();
        let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gen.json");
        m.save(&p).unwrap();
        assert_eq!(GeneratorModel::load(&p).unwrap(), m);
    }

    fn indicator_file(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn file_backed_confidences_and_filtering() {
        let tax = Taxonomy::new(["theft"], ["e1"]).unwrap();
        let lp = 0.9f64.ln();
        let f = indicator_file(&format!(
            "{{\"qid\":\"q1\",\"charges\":[\"theft\",\"nonsense\"],\"elements\":[\"e1\",\"e9\"],\"charge_logprob_mean\":{lp},\"element_logprob_mean\":-0.5}}\n\
             {{\"charges\":[],\"elements\":[],\"charge_logprob_mean\":0,\"element_logprob_mean\":0}}\n"
        ));
        let loaded = load_indicators(f.path(), &tax).unwrap();
        assert_eq!(loaded.skipped, 1);
        let r = &loaded.results["q1"];
        assert!((r.charge_confidence - 0.9).abs() < 1e-15);
        assert_eq!(r.charges, BTreeSet::from(["theft".to_string()]));
        assert_eq!(r.elements, BTreeSet::from(["e1".to_string()]));
        assert_eq!(r.provenance, Provenance::FileBacked);
    }

    #[test]
    fn positive_logprob_is_rejected() {
        let tax = Taxonomy::new(["theft"], ["e1"]).unwrap();
        let f = indicator_file(
            "{\"qid\":\"q1\",\"charges\":[],\"elements\":[],\"charge_logprob_mean\":0.1,\"element_logprob_mean\":-1}\n",
        );
        assert!(matches!(load_indicators(f.path(), &tax), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn saved_indicators_reload() {
        let tax = Taxonomy::new(["theft"], ["e1", "e2"]).unwrap();
        let mut results = BTreeMap::new();
        results.insert(
            "q1".to_string(),
            IndicatorResult {
                charges: ["theft".to_string()].into(),
                elements: ["e1".to_string()].into(),
                charge_confidence: 0.75,
                element_confidence: 0.0,
                provenance: Provenance::Hierarchical,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ind.jsonl");
        save_indicators(&p, &results).unwrap();
        let back = load_indicators(&p, &tax).unwrap();
        let r = &back.results["q1"];
        assert!((r.charge_confidence - 0.75).abs() < 1e-15);
        assert_eq!(r.element_confidence, 0.0);
        assert_eq!(r.elements, results["q1"].elements);
    }

    #[test]
    fn f1_cases() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(element_f1(&s(&["a", "b"]), &s(&["a", "b"])), 1.0);
        assert_eq!(element_f1(&s(&["a"]), &s(&["b"])), 0.0);
        assert!((element_f1(&s(&["a", "b"]), &s(&["a"])) - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn posterior_sums_to_one(text in "[a-z ]{0,40}") {
            let (docs, tax) = two_charge_corpus();
            let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
            let total: f64 = m.charge_posterior(&text).iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn shifting_priors_keeps_inference(text in "(knife|wallet|bank|lie|zebra| ){1,30}", shift in -50.0f64..50.0) {
            let (docs, tax) = two_charge_corpus();
            let m = GeneratorModel::fit(&docs, &tax, GeneratorConfig::default()).unwrap();
            let mut shifted = m.clone();
            for c in shifted.charges.values_mut() {
                c.log_prior += shift;
            }
            let a = m.infer_text(&text, &tax);
            let b = shifted.infer_text(&text, &tax);
            prop_assert_eq!(&a.charges, &b.charges);
            prop_assert!((a.charge_confidence - b.charge_confidence).abs() < 1e-12);
        }
    }
}
