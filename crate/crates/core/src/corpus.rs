//! Corpus, query and relevance-judgment loading.
//!
//! Corpus and query files are JSON Lines; qrels are the 3-column TREC-style
//! `qid<TAB>docid<TAB>label` format without a header. Unknown JSON fields are
//! ignored.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

/// A case document with its silver-standard labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub charges: BTreeSet<String>,
    /// Empty for documents that have not been distilled yet.
    #[serde(default)]
    pub elements: BTreeSet<String>,
}

impl Document {
    /// The charge used to stratify this document: its lexicographically first
    /// charge, or the empty string when unlabeled.
    pub fn primary_charge(&self) -> &str {
        self.charges.iter().next().map(String::as_str).unwrap_or("")
    }
}

/// A query case and its candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Candidate document ids. Empty means "retrieve with BM25 at rank time".
    #[serde(default)]
    pub pool: Vec<String>,
}

/// Graded relevance judgments binarized at `positive_threshold`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QrelSet {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
    pub positive_threshold: u32,
}

impl QrelSet {
    pub fn new(positive_threshold: u32) -> Self {
        Self { entries: BTreeMap::new(), positive_threshold }
    }

    /// Inserts a judgment. Fails if the pair is already judged.
    pub fn insert(&mut self, qid: &str, docid: &str, label: u32) -> Result<()> {
        let per_query = self.entries.entry(qid.to_string()).or_default();
        if per_query.insert(docid.to_string(), label).is_some() {
            return Err(Error::invalid(format!("duplicate judgment for ({qid}, {docid})")));
        }
        Ok(())
    }

    pub fn label(&self, qid: &str, docid: &str) -> Option<u32> {
        self.entries.get(qid)?.get(docid).copied()
    }

    pub fn is_positive(&self, qid: &str, docid: &str) -> bool {
        self.label(qid, docid).is_some_and(|l| l >= self.positive_threshold)
    }

    /// Positive document ids for `qid`, in id order.
    pub fn positives(&self, qid: &str) -> BTreeSet<String> {
        self.entries
            .get(qid)
            .map(|m| m.iter().filter(|(_, &l)| l >= self.positive_threshold).map(|(d, _)| d.clone()).collect())
            .unwrap_or_default()
    }

    /// All judgments for `qid`.
    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same judgments under a different threshold.
    pub fn with_threshold(&self, positive_threshold: u32) -> Self {
        Self { entries: self.entries.clone(), positive_threshold }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.entries.iter().flat_map(|(q, m)| m.iter().map(move |(d, &l)| (q.as_str(), d.as_str(), l)))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads one JSON record per nonblank line.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Raw line shape; list fields are deduplicated after parsing.
#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    #[serde(default)]
    charges: Vec<String>,
    #[serde(default)]
    elements: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, raw) in read_jsonl::<RawDocument>(path)? {
        if raw.id.is_empty() {
            return Err(Error::parse(path, line, "empty document id"));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        docs.push(Document {
            id: raw.id,
            text: raw.text,
            charges: raw.charges.into_iter().collect(),
            elements: raw.elements.into_iter().collect(),
        });
    }
    Ok(docs)
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    write_jsonl(path.as_ref(), docs)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (line, q) in read_jsonl::<Query>(path)? {
        if q.id.is_empty() {
            return Err(Error::parse(path, line, "empty query id"));
        }
        if !seen.insert(q.id.clone()) {
            return Err(Error::DuplicateId(q.id));
        }
        let mut pool_ids = HashSet::new();
        if let Some(dup) = q.pool.iter().find(|d| !pool_ids.insert(d.as_str())) {
            return Err(Error::parse(path, line, format!("duplicate candidate `{dup}` in pool of `{}`", q.id)));
        }
        queries.push(q);
    }
    Ok(queries)
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    write_jsonl(path.as_ref(), queries)
}

pub fn load_qrels(path: impl AsRef<Path>, positive_threshold: u32) -> Result<QrelSet> {
    let path = path.as_ref();
    let mut qrels = QrelSet::new(positive_threshold);
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, docid, label] = cols[..] else {
            return Err(Error::parse(path, lineno, format!("expected 3 tab-separated columns, found {}", cols.len())));
        };
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("label `{label}` is not a non-negative integer")))?;
        qrels.insert(qid.trim(), docid.trim(), label).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(qrels)
}

pub fn save_qrels(path: impl AsRef<Path>, qrels: &QrelSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (q, d, l) in qrels.iter() {
        writeln!(w, "{q}\t{d}\t{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Index documents by id.
pub fn by_id(docs: &[Document]) -> BTreeMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}
