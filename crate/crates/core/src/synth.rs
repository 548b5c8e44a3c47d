//! Seeded synthetic legal-retrieval corpus with planted structure.
//!
//! Each charge has its own cue words and a skewed distribution over its own
//! constitutive elements, plus a few elements shared by every charge. Facts
//! come from charge-neutral topic clusters. Every query gets a pool of
//! twelve candidates:
//!
//! * relevant cases: same charge, some overlap with the query's facts;
//! * same-charge cases on a different topic (graded relevant, below threshold);
//! * planted hard negatives: a different charge but heavier fact overlap,
//!   so BM25 tends to rank them first;
//! * random background cases.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_corpus, save_qrels, save_queries, Document, QrelSet, Query};
use crate::error::{Error, Result};
use crate::eval::experiment::ExperimentData;
use crate::inference::{save_indicators, IndicatorResult, Provenance};
use crate::rng::{self, StreamRng};
use crate::taxonomy::Taxonomy;

pub const CHARGES: [&str; 6] = ["theft", "fraud", "robbery", "assault", "bribery", "smuggling"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_charges: usize,
    pub cues_per_charge: usize,
    pub elements_per_charge: usize,
    pub shared_elements: usize,
    pub clusters: usize,
    pub cluster_size: usize,
    pub background_vocab: usize,
    pub num_queries: usize,
    pub background_docs: usize,
    pub positives: usize,
    pub same_charge_off_topic: usize,
    pub hard_negatives: usize,
    pub random_candidates: usize,
    /// Inclusive range of query fact words shared with a relevant case.
    pub positive_overlap: [usize; 2],
    /// Inclusive range of query fact words shared with a planted hard negative.
    pub hard_negative_overlap: [usize; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_charges: 6,
            cues_per_charge: 8,
            elements_per_charge: 10,
            shared_elements: 2,
            clusters: 8,
            cluster_size: 25,
            background_vocab: 400,
            num_queries: 80,
            background_docs: 120,
            positives: 3,
            same_charge_off_topic: 2,
            hard_negatives: 4,
            random_candidates: 3,
            positive_overlap: [3, 8],
            hard_negative_overlap: [4, 10],
        }
    }
}

/// Qrels label of a relevant case; binarized with [`POSITIVE_THRESHOLD`].
pub const RELEVANT_LABEL: u32 = 3;
pub const OFF_TOPIC_LABEL: u32 = 1;
pub const POSITIVE_THRESHOLD: u32 = 2;

#[derive(Debug, Clone)]
pub struct SynthData {
    pub docs: Vec<Document>,
    pub taxonomy: Taxonomy,
    pub train_queries: Vec<Query>,
    pub test_queries: Vec<Query>,
    pub qrels: QrelSet,
    pub gold_charges: BTreeMap<String, String>,
    pub gold_elements: BTreeMap<String, BTreeSet<String>>,
}

impl SynthData {
    pub fn experiment_data(&self) -> ExperimentData {
        ExperimentData {
            docs: self.docs.clone(),
            taxonomy: self.taxonomy.clone(),
            train_queries: self.train_queries.clone(),
            test_queries: self.test_queries.clone(),
            qrels: self.qrels.clone(),
            file_indicators: None,
        }
    }

    /// Gold labels in indicator form, with unit confidences.
    pub fn gold_indicators(&self) -> BTreeMap<String, IndicatorResult> {
        self.gold_charges
            .iter()
            .map(|(q, c)| {
                let result = IndicatorResult {
                    charges: [c.clone()].into(),
                    elements: self.gold_elements[q].clone(),
                    charge_confidence: 1.0,
                    element_confidence: 1.0,
                    provenance: Provenance::FileBacked,
                };
                (q.clone(), result)
            })
            .collect()
    }

    /// Writes `corpus.jsonl`, `train_queries.jsonl`, `test_queries.jsonl`,
    /// `qrels.tsv`, `taxonomy.json` and `gold_indicators.jsonl` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_corpus(dir.join("corpus.jsonl"), &self.docs)?;
        save_queries(dir.join("train_queries.jsonl"), &self.train_queries)?;
        save_queries(dir.join("test_queries.jsonl"), &self.test_queries)?;
        save_qrels(dir.join("qrels.tsv"), &self.qrels)?;
        self.taxonomy.save(dir.join("taxonomy.json"))?;
        save_indicators(dir.join("gold_indicators.jsonl"), &self.gold_indicators())
    }
}

struct Vocab {
    charges: Vec<String>,
    cues: Vec<Vec<String>>,
    elements: Vec<Vec<String>>,
    element_weights: Vec<f64>,
    shared: Vec<String>,
    clusters: Vec<Vec<String>>,
    background: Vec<String>,
}

impl Vocab {
    fn new(cfg: &SynthConfig) -> Self {
        let charges: Vec<String> = (0..cfg.num_charges)
            .map(|i| match CHARGES.get(i) {
                Some(c) => c.to_string(),
                None => format!("charge{i}"),
            })
            .collect();
        let per_charge = |suffix: &str, n: usize| -> Vec<Vec<String>> {
            charges.iter().map(|c| (0..n).map(|j| format!("{c}_{suffix}{j}")).collect()).collect()
        };
        Self {
            cues: per_charge("cue", cfg.cues_per_charge),
            elements: per_charge("el", cfg.elements_per_charge),
            // Zipf-like: a handful of elements characterize each charge.
            element_weights: (0..cfg.elements_per_charge).map(|j| 1.0 / (j as f64 + 1.0)).collect(),
            shared: (0..cfg.shared_elements).map(|j| format!("shared_el{j}")).collect(),
            clusters: (0..cfg.clusters)
                .map(|k| (0..cfg.cluster_size).map(|j| format!("topic{k}_w{j}")).collect())
                .collect(),
            background: (0..cfg.background_vocab).map(|j| format!("w{j}")).collect(),
            charges,
        }
    }

    fn sample_elements(&self, charge: usize, rng: &mut StreamRng) -> BTreeSet<String> {
        let n = self.element_weights.len();
        let take = rng.random_range(3..=5).min(n);
        let picked = index::sample_weighted(rng, n, |j| self.element_weights[j], take).expect("positive weights");
        let mut out: BTreeSet<String> = picked.into_iter().map(|j| self.elements[charge][j].clone()).collect();
        for s in &self.shared {
            if rng.random_bool(0.5) {
                out.insert(s.clone());
            }
        }
        out
    }
}

fn pick<'a>(pool: &'a [String], n: usize, rng: &mut StreamRng) -> Vec<&'a String> {
    pool.choose_multiple(rng, n.min(pool.len())).collect()
}

fn case_text(v: &Vocab, charge: usize, elements: &BTreeSet<String>, facts: &[&String], rng: &mut StreamRng) -> String {
    let mut words: Vec<&String> = pick(&v.cues[charge], 4, rng);
    words.extend(elements.iter());
    words.extend(facts.iter().copied());
    words.extend(pick(&v.background, 20, rng));
    words.shuffle(rng);
    words.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(" ")
}

fn make_doc(id: String, v: &Vocab, charge: usize, facts: &[&String], rng: &mut StreamRng) -> Document {
    let elements = v.sample_elements(charge, rng);
    Document {
        text: case_text(v, charge, &elements, facts, rng),
        id,
        charges: [v.charges[charge].clone()].into(),
        elements,
    }
}

/// Generates a corpus, a half/half train/test query split and graded qrels.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    if cfg.num_charges < 2 || cfg.clusters < 2 || cfg.num_queries < 2 {
        return Err(Error::invalid("synthetic data needs at least two charges, clusters and queries"));
    }
    let query_fact_count = cfg.hard_negative_overlap[1].max(cfg.positive_overlap[1]);
    if cfg.positive_overlap[0] > cfg.positive_overlap[1] || cfg.hard_negative_overlap[0] > cfg.hard_negative_overlap[1]
    {
        return Err(Error::invalid("overlap ranges must be ordered"));
    }
    if cfg.elements_per_charge == 0 || cfg.cues_per_charge < 4 || cfg.cluster_size < query_fact_count {
        return Err(Error::invalid("synthetic vocabulary too small for the requested overlaps"));
    }
    let v = Vocab::new(cfg);
    let mut rng = rng::stream(seed, "synth");
    let mut docs = Vec::new();

    for i in 0..cfg.background_docs {
        let charge = rng.random_range(0..cfg.num_charges);
        let cluster = &v.clusters[rng.random_range(0..cfg.clusters)];
        let facts = pick(cluster, 3, &mut rng);
        docs.push(make_doc(format!("bg{i:04}"), &v, charge, &facts, &mut rng));
    }
    let background_ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();

    let mut queries = Vec::new();
    let mut qrels = QrelSet::new(POSITIVE_THRESHOLD);
    let mut gold_charges = BTreeMap::new();
    let mut gold_elements = BTreeMap::new();

    for qi in 0..cfg.num_queries {
        let qid = format!("q{qi:03}");
        let charge = qi % cfg.num_charges;
        let cluster_idx = rng.random_range(0..cfg.clusters);
        let cluster = &v.clusters[cluster_idx];
        let query_facts = pick(cluster, query_fact_count, &mut rng);
        let other_charge = |rng: &mut StreamRng| (charge + rng.random_range(1..cfg.num_charges)) % cfg.num_charges;

        let mut qwords: Vec<&String> = pick(&v.cues[charge], 2, &mut rng);
        let distractor = other_charge(&mut rng);
        qwords.extend(pick(&v.cues[distractor], 1, &mut rng));
        qwords.extend(query_facts.iter().copied());
        qwords.extend(pick(&v.background, 10, &mut rng));
        qwords.shuffle(&mut rng);
        let text = qwords.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(" ");

        let mut pool = Vec::new();
        let add = |doc: Document, label: u32, docs: &mut Vec<Document>, pool: &mut Vec<String>, qrels: &mut QrelSet| {
            qrels.insert(&qid, &doc.id, label)?;
            pool.push(doc.id.clone());
            docs.push(doc);
            Ok::<_, Error>(())
        };
        for k in 0..cfg.positives {
            let n = rng.random_range(cfg.positive_overlap[0]..=cfg.positive_overlap[1]);
            let facts: Vec<&String> = query_facts.choose_multiple(&mut rng, n).copied().collect();
            let doc = make_doc(format!("{qid}_rel{k}"), &v, charge, &facts, &mut rng);
            add(doc, RELEVANT_LABEL, &mut docs, &mut pool, &mut qrels)?;
        }
        for k in 0..cfg.same_charge_off_topic {
            let other_cluster = (cluster_idx + rng.random_range(1..cfg.clusters)) % cfg.clusters;
            let n = rng.random_range(cfg.positive_overlap[0]..=cfg.positive_overlap[1]);
            let facts = pick(&v.clusters[other_cluster], n, &mut rng);
            let doc = make_doc(format!("{qid}_off{k}"), &v, charge, &facts, &mut rng);
            add(doc, OFF_TOPIC_LABEL, &mut docs, &mut pool, &mut qrels)?;
        }
        for k in 0..cfg.hard_negatives {
            let c = other_charge(&mut rng);
            let n = rng.random_range(cfg.hard_negative_overlap[0]..=cfg.hard_negative_overlap[1]);
            let facts: Vec<&String> = query_facts.choose_multiple(&mut rng, n).copied().collect();
            let doc = make_doc(format!("{qid}_neg{k}"), &v, c, &facts, &mut rng);
            add(doc, 0, &mut docs, &mut pool, &mut qrels)?;
        }
        for id in background_ids.choose_multiple(&mut rng, cfg.random_candidates) {
            if !pool.contains(id) {
                pool.push(id.clone());
            }
        }
        pool.shuffle(&mut rng);

        gold_charges.insert(qid.clone(), v.charges[charge].clone());
        gold_elements.insert(qid.clone(), v.sample_elements(charge, &mut rng));
        queries.push(Query { id: qid, text, pool });
    }

    let test_queries = queries.split_off(queries.len() / 2);
    let elements = v.elements.iter().flatten().chain(&v.shared).cloned();
    let taxonomy = Taxonomy::new(v.charges.iter().cloned(), elements)?;
    Ok(SynthData { docs, taxonomy, train_queries: queries, test_queries, qrels, gold_charges, gold_elements })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, 3).unwrap();
        let b = generate(&cfg, 3).unwrap();
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.train_queries.len(), 40);
        assert_eq!(a.test_queries.len(), 40);
        for q in a.train_queries.iter().chain(&a.test_queries) {
            assert_eq!(q.pool.len(), 12);
            assert_eq!(a.qrels.positives(&q.id).len(), cfg.positives);
        }
        let ids: BTreeSet<&str> = a.docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids.len(), a.docs.len());
        for d in &a.docs {
            assert!(d.charges.iter().all(|c| a.taxonomy.is_charge(c)));
            assert!(d.elements.iter().all(|e| a.taxonomy.is_element(e)));
        }
        assert_ne!(generate(&cfg, 4).unwrap().docs, a.docs);
    }

    #[test]
    fn save_writes_loadable_files() {
        let data = generate(&SynthConfig { num_queries: 6, background_docs: 10, ..Default::default() }, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let docs = crate::corpus::load_corpus(dir.path().join("corpus.jsonl")).unwrap();
        assert_eq!(docs, data.docs);
        let tax = Taxonomy::load(dir.path().join("taxonomy.json")).unwrap();
        let gold = crate::inference::load_indicators(dir.path().join("gold_indicators.jsonl"), &tax).unwrap();
        assert_eq!(gold.results.len(), 6);
    }
}
