//! The five-dimensional evidence vector for a (query, candidate) pair.
//!
//! | index | name                 | view       | range   |
//! |-------|----------------------|------------|---------|
//! | v1    | `charge_confidence`  | latent     | [0, 1]  |
//! | v2    | `element_confidence` | latent     | [0, 1]  |
//! | v3    | `charge_hit`         | structural | {0, 1}  |
//! | v4    | `element_support`    | structural | [0, 1]  |
//! | v5    | `bm25_norm`          | lexical    | [0, 1]  |

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::inference::IndicatorResult;

pub const NUM_FEATURES: usize = 5;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] =
    ["charge_confidence", "element_confidence", "charge_hit", "element_support", "bm25_norm"];

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub const ZERO: Self = Self([0.0; NUM_FEATURES]);

    pub fn charge_confidence(&self) -> f64 {
        self.0[0]
    }

    pub fn element_confidence(&self) -> f64 {
        self.0[1]
    }

    pub fn charge_hit(&self) -> f64 {
        self.0[2]
    }

    pub fn element_support(&self) -> f64 {
        self.0[3]
    }

    pub fn bm25_norm(&self) -> f64 {
        self.0[4]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks the declared component ranges.
    pub fn is_valid(&self) -> bool {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        in_unit(self.0[0])
            && in_unit(self.0[1])
            && (self.0[2] == 0.0 || self.0[2] == 1.0)
            && in_unit(self.0[3])
            && in_unit(self.0[4])
    }

    /// Component-wise mean. `None` for an empty input.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a FeatureVector>) -> Option<FeatureVector> {
        let mut sum = [0.0; NUM_FEATURES];
        let mut n = 0usize;
        for v in vectors {
            for (s, x) in sum.iter_mut().zip(v.0) {
                *s += x;
            }
            n += 1;
        }
        (n > 0).then(|| FeatureVector(sum.map(|s| s / n as f64)))
    }
}

/// A subset of the five features, used by ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask(pub [bool; NUM_FEATURES]);

impl FeatureMask {
    pub const ALL: Self = Self([true; NUM_FEATURES]);

    pub fn only(indices: &[usize]) -> Self {
        let mut keep = [false; NUM_FEATURES];
        for &i in indices {
            keep[i] = true;
        }
        Self(keep)
    }

    pub fn without(indices: &[usize]) -> Self {
        let mut keep = [true; NUM_FEATURES];
        for &i in indices {
            keep[i] = false;
        }
        Self(keep)
    }

    /// Replaces masked-out features by the matching baseline component.
    pub fn apply(&self, v: &FeatureVector, baseline: &FeatureVector) -> FeatureVector {
        FeatureVector(std::array::from_fn(|i| if self.0[i] { v.0[i] } else { baseline.0[i] }))
    }
}

/// 1 when the query's inferred charges and the document's charges share an
/// element, else 0.
pub fn charge_hit(query_charges: &BTreeSet<String>, doc_charges: &BTreeSet<String>) -> f64 {
    if query_charges.is_disjoint(doc_charges) {
        0.0
    } else {
        1.0
    }
}

/// `|query ∩ doc| / (|query| + epsilon)`.
pub fn element_support(query_elements: &BTreeSet<String>, doc_elements: &BTreeSet<String>, epsilon: f64) -> f64 {
    let shared = query_elements.intersection(doc_elements).count() as f64;
    shared / (query_elements.len() as f64 + epsilon)
}

pub fn assemble_features(
    indicator: &IndicatorResult,
    doc: &Document,
    norm_bm25: f64,
    epsilon: f64,
) -> Result<FeatureVector> {
    if !(0.0..=1.0).contains(&norm_bm25) {
        return Err(Error::invalid(format!("normalized BM25 {norm_bm25} outside [0, 1] for document `{}`", doc.id)));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    Ok(FeatureVector([
        indicator.charge_confidence,
        indicator.element_confidence,
        charge_hit(&indicator.charges, &doc.charges),
        element_support(&indicator.elements, &doc.elements, epsilon),
        norm_bm25,
    ]))
}

/// One row of `features.tsv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub qid: String,
    pub docid: String,
    pub features: FeatureVector,
    pub label: u8,
}

pub const FEATURES_HEADER: &str = "qid\tdocid\tv1\tv2\tv3\tv4\tv5\tlabel";

pub fn write_features(path: impl AsRef<Path>, rows: &[FeatureRow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{FEATURES_HEADER}").map_err(io)?;
    for r in rows {
        let [v1, v2, v3, v4, v5] = r.features.0;
        writeln!(w, "{}\t{}\t{v1}\t{v2}\t{v3}\t{v4}\t{v5}\t{}", r.qid, r.docid, r.label).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads `features.tsv`. The header line is optional.
pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() || (lineno == 1 && line.starts_with("qid\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(Error::parse(path, lineno, format!("expected 8 columns, found {}", cols.len())));
        }
        let mut v = [0.0; NUM_FEATURES];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = cols[2 + i]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value `{}` for v{}", cols[2 + i], i + 1)))?;
        }
        let label: u8 = match cols[7].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(path, lineno, format!("label `{other}` is not 0 or 1"))),
        };
        let features = FeatureVector(v);
        if !features.is_valid() {
            return Err(Error::parse(path, lineno, "feature outside its declared range"));
        }
        rows.push(FeatureRow { qid: cols[0].to_string(), docid: cols[1].to_string(), features, label });
    }
    Ok(rows)
}
