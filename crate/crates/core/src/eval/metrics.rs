//! Ranking metrics over binarized relevance judgments.
//!
//! Queries with no positive judgment are excluded from the means and
//! reported separately. Average precision divides by the total number of
//! positives, so positives missing from the ranking contribute zero.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::QrelSet;
use crate::error::{Error, Result};
use crate::par;

/// Score-ordered candidates for one query: descending score, ties broken by
/// ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(qid: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<Self> {
        let qid = qid.into();
        if let Some((d, _)) = entries.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::invalid(format!("NaN score for ({qid}, {d})")));
        }
        let mut seen = HashSet::new();
        if let Some((d, _)) = entries.iter().find(|(d, _)| !seen.insert(d.clone())) {
            return Err(Error::invalid(format!("document `{d}` ranked twice for `{qid}`")));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { qid, entries })
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(d, _)| d.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn hits_in_top(ranking: &[&str], positives: &BTreeSet<String>, k: usize) -> usize {
    ranking.iter().take(k).filter(|d| positives.contains(**d)).count()
}

/// Average precision; `None` when there are no positives.
pub fn average_precision(ranking: &[&str], positives: &BTreeSet<String>) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if positives.contains(*d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / positives.len() as f64)
}

pub fn precision_at(ranking: &[&str], positives: &BTreeSet<String>, k: usize) -> f64 {
    hits_in_top(ranking, positives, k) as f64 / k as f64
}

pub fn recall_at(ranking: &[&str], positives: &BTreeSet<String>, k: usize) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    hits_in_top(ranking, positives, k) as f64 / positives.len() as f64
}

pub fn hits_at(ranking: &[&str], positives: &BTreeSet<String>, k: usize) -> f64 {
    if hits_in_top(ranking, positives, k) > 0 {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal rank of the first positive within the top `k`, else 0.
pub fn mrr_at(ranking: &[&str], positives: &BTreeSet<String>, k: usize) -> f64 {
    ranking.iter().take(k).position(|d| positives.contains(*d)).map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// NDCG@k with linear gains taken from the graded labels.
pub fn ndcg_at(ranking: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(judgments.get(*d).copied().unwrap_or(0)) * discount(i))
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| f64::from(g) * discount(i)).sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub map: f64,
    pub p_at_3: f64,
    pub r_at_3: f64,
    pub r_at_5: f64,
    pub hits_at_3: f64,
    pub hits_at_5: f64,
    pub mrr_at_5: f64,
    /// Not part of the headline suite.
    pub ndcg_at_5: f64,
}

impl QueryMetrics {
    pub fn compute(ranking: &[&str], positives: &BTreeSet<String>, judgments: &BTreeMap<String, u32>) -> Option<Self> {
        let map = average_precision(ranking, positives)?;
        Some(Self {
            map,
            p_at_3: precision_at(ranking, positives, 3),
            r_at_3: recall_at(ranking, positives, 3),
            r_at_5: recall_at(ranking, positives, 5),
            hits_at_3: hits_at(ranking, positives, 3),
            hits_at_5: hits_at(ranking, positives, 5),
            mrr_at_5: mrr_at(ranking, positives, 5),
            ndcg_at_5: ndcg_at(ranking, judgments, 5),
        })
    }

    fn as_array(&self) -> [f64; 8] {
        [self.map, self.p_at_3, self.r_at_3, self.r_at_5, self.hits_at_3, self.hits_at_5, self.mrr_at_5, self.ndcg_at_5]
    }

    fn from_array(a: [f64; 8]) -> Self {
        Self {
            map: a[0],
            p_at_3: a[1],
            r_at_3: a[2],
            r_at_5: a[3],
            hits_at_3: a[4],
            hits_at_5: a[5],
            mrr_at_5: a[6],
            ndcg_at_5: a[7],
        }
    }

    /// Arithmetic mean; zeros for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a QueryMetrics>) -> Self {
        let mut sum = [0.0; 8];
        let mut n = 0usize;
        for m in items {
            for (s, x) in sum.iter_mut().zip(m.as_array()) {
                *s += x;
            }
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        Self::from_array(sum.map(|s| s / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean: QueryMetrics,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub num_queries: usize,
    /// Queries without any positive judgment, excluded from the means.
    pub excluded: Vec<String>,
}

impl MetricsReport {
    /// Per-query values of one metric in qid order.
    pub fn per_query_values(&self, metric: impl Fn(&QueryMetrics) -> f64) -> Vec<f64> {
        self.per_query.values().map(metric).collect()
    }
}

pub fn metrics_suite(rankings: &[RankedList], qrels: &QrelSet) -> MetricsReport {
    let empty = BTreeMap::new();
    let computed = par::map(rankings, |r| {
        let positives = qrels.positives(&r.qid);
        let judgments = qrels.judgments(&r.qid).unwrap_or(&empty);
        (r.qid.clone(), QueryMetrics::compute(&r.doc_ids(), &positives, judgments))
    });
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, m) in computed {
        match m {
            Some(m) => {
                per_query.insert(qid, m);
            }
            None => excluded.push(qid),
        }
    }
    excluded.sort();
    MetricsReport { mean: QueryMetrics::mean(per_query.values()), num_queries: per_query.len(), per_query, excluded }
}

/// Reads a run file: `qid docid score` per line (whitespace separated), or
/// the 6-column TREC form `qid Q0 docid rank score tag`.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut grouped: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (qid, docid, score) = match cols[..] {
            [] => continue,
            [q, d, s] => (q, d, s),
            [q, _, d, _, s, _] => (q, d, s),
            _ => return Err(Error::parse(path, idx + 1, format!("expected 3 or 6 columns, found {}", cols.len()))),
        };
        let score: f64 = score.parse().map_err(|_| Error::parse(path, idx + 1, format!("bad score `{score}`")))?;
        grouped.entry(qid.to_string()).or_default().push((docid.to_string(), score));
    }
    grouped.into_iter().map(|(q, entries)| RankedList::new(q, entries)).collect()
}

pub fn write_run(path: impl AsRef<Path>, rankings: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rankings {
        for (d, s) in &r.entries {
            writeln!(w, "{}\t{d}\t{s}", r.qid).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
