//! Tokenization, the BM25 inverted index, and per-query normalization of
//! lexical scores (the fifth evidence feature).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Unicode word boundaries (UAX #29).
    #[default]
    UnicodeWords,
    /// Overlapping character bigrams inside CJK runs, unicode words elsewhere.
    CjkBigramHybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { mode: TokenizerMode::UnicodeWords, lowercase: true }
    }
}

impl TokenizerConfig {
    pub fn words() -> Self {
        Self::default()
    }

    pub fn cjk() -> Self {
        Self { mode: TokenizerMode::CjkBigramHybrid, lowercase: true }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF       // hiragana, katakana
        | 0x3400..=0x4DBF     // CJK extension A
        | 0x4E00..=0x9FFF     // CJK unified ideographs
        | 0xAC00..=0xD7AF     // hangul syllables
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x2FA1F) // extensions B..F and compatibility supplement
}

fn push_words(out: &mut Vec<String>, text: &str, lowercase: bool) {
    for w in text.unicode_words() {
        out.push(if lowercase { w.to_lowercase() } else { w.to_string() });
    }
}

fn push_bigrams(out: &mut Vec<String>, run: &[char]) {
    match run.len() {
        0 => {}
        1 => out.push(run[0].to_string()),
        _ => out.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
    }
}

pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<String> {
    let mut out = Vec::new();
    match cfg.mode {
        TokenizerMode::UnicodeWords => push_words(&mut out, text, cfg.lowercase),
        TokenizerMode::CjkBigramHybrid => {
            let mut cjk_run: Vec<char> = Vec::new();
            let mut other_start: Option<usize> = None;
            for (pos, c) in text.char_indices() {
                if is_cjk(c) {
                    if let Some(start) = other_start.take() {
                        push_words(&mut out, &text[start..pos], cfg.lowercase);
                    }
                    cjk_run.push(c);
                } else {
                    push_bigrams(&mut out, &cjk_run);
                    cjk_run.clear();
                    other_start.get_or_insert(pos);
                }
            }
            push_bigrams(&mut out, &cjk_run);
            if let Some(start) = other_start {
                push_words(&mut out, &text[start..], cfg.lowercase);
            }
        }
    }
    out
}

/// Tokenizes and drops repeated terms, keeping first occurrences in order.
pub fn unique_terms(text: &str, cfg: &TokenizerConfig) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize(text, cfg).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 contribution of one query term. The idf uses the
/// `ln(1 + (N - df + 0.5) / (df + 0.5))` form, which is never negative.
pub fn bm25_term_weight(tf: f64, df: f64, num_docs: f64, doc_len: f64, avg_doc_len: f64, p: Bm25Params) -> f64 {
    if tf <= 0.0 {
        return 0.0;
    }
    let idf = (1.0 + (num_docs - df + 0.5) / (df + 0.5)).ln();
    let len_ratio = if avg_doc_len > 0.0 { doc_len / avg_doc_len } else { 1.0 };
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len_ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in the index's sorted id list.
    pub doc: u32,
    pub tf: u32,
}

/// BM25 inverted index.
///
/// Documents are addressed internally by their rank in sorted id order, so the
/// index is independent of corpus order and postings are sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    tokenizer: TokenizerConfig,
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(docs: &[Document], tokenizer: TokenizerConfig, params: Bm25Params) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("cannot index an empty corpus"));
        }
        let mut sorted: Vec<&Document> = docs.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(sorted.len());
        for (i, doc) in sorted.iter().enumerate() {
            let tokens = tokenize(&doc.text, &tokenizer);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf: count });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        Ok(Self {
            tokenizer,
            params,
            avg_doc_length: total as f64 / doc_lengths.len() as f64,
            doc_ids: sorted.into_iter().map(|d| d.id.clone()).collect(),
            doc_lengths,
            postings,
        })
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_id(&self, doc: u32) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.position(id).map(|i| self.doc_lengths[i as usize])
    }

    fn position(&self, id: &str) -> Option<u32> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(id)).ok().map(|i| i as u32)
    }

    /// Query terms as scored by this index: tokenized with the index's
    /// tokenizer and deduplicated.
    pub fn query_terms(&self, text: &str) -> Vec<String> {
        unique_terms(text, &self.tokenizer)
    }

    fn term_weight(&self, term: &str, doc: u32) -> f64 {
        let list = self.postings(term);
        let Ok(pos) = list.binary_search_by_key(&doc, |p| p.doc) else {
            return 0.0;
        };
        bm25_term_weight(
            f64::from(list[pos].tf),
            list.len() as f64,
            self.doc_ids.len() as f64,
            f64::from(self.doc_lengths[doc as usize]),
            self.avg_doc_length,
            self.params,
        )
    }

    /// BM25 score of `doc_id` for the given terms. Repeated terms count once.
    pub fn bm25_score<S: AsRef<str>>(&self, query_terms: &[S], doc_id: &str) -> Result<f64> {
        let doc = self.position(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let mut seen = HashSet::new();
        Ok(query_terms.iter().map(AsRef::as_ref).filter(|t| seen.insert(*t)).map(|t| self.term_weight(t, doc)).sum())
    }

    /// Scores every candidate in `pool` against `text`, aligned with `pool`.
    pub fn score_pool<S: AsRef<str>>(&self, text: &str, pool: &[S]) -> Result<Vec<f64>> {
        let terms = self.query_terms(text);
        pool.iter().map(|d| self.bm25_score(&terms, d.as_ref())).collect()
    }

    /// The `k` highest-scoring documents with a positive score, descending,
    /// ties broken by ascending id.
    pub fn top_k(&self, text: &str, k: usize) -> Vec<(String, f64)> {
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        for term in self.query_terms(text) {
            for p in self.postings(&term) {
                acc[p.doc as usize] += self.term_weight(&term, p.doc);
            }
        }
        let mut hits: Vec<(u32, f64)> =
            acc.into_iter().enumerate().filter(|(_, s)| *s > 0.0).map(|(i, s)| (i as u32, s)).collect();
        // Internal ids follow id order, so comparing them breaks ties by id.
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter().map(|(i, s)| (self.doc_ids[i as usize].clone(), s)).collect()
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

/// Divides each score by the pool maximum. An all-zero pool maps to all
/// zeros rather than NaN.
pub fn normalize_per_query(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot normalize an empty pool"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::invalid(format!("lexical score {bad} is not a finite non-negative number")));
    }
    let max = scores.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores.iter().map(|s| s / max).collect())
}

/// [`normalize_per_query`] over a doc-id keyed map.
pub fn normalize_map(scores: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let values: Vec<f64> = scores.values().copied().collect();
    let norm = normalize_per_query(&values)?;
    Ok(scores.keys().cloned().zip(norm).collect())
}
