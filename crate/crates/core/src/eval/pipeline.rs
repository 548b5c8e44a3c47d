//! End-to-end ranking: resolve a query's pool, assemble evidence vectors,
//! score, and sort.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Document, QrelSet, Query};
use crate::error::{Error, Result};
use crate::eval::metrics::RankedList;
use crate::features::{assemble_features, FeatureMask, FeatureRow, FeatureVector};
use crate::inference::{IndicatorResult, Provenance};
use crate::lexical::{normalize_per_query, InvertedIndex};
use crate::par;
use crate::scorer::{mine_hard_negatives, Score};

/// Candidate features for one query, aligned with `doc_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFeatures {
    pub qid: String,
    pub doc_ids: Vec<String>,
    pub bm25: Vec<f64>,
    pub features: Vec<FeatureVector>,
}

impl PoolFeatures {
    /// Pool ids by descending raw BM25, ties by ascending id.
    pub fn bm25_ranking(&self) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.doc_ids.len()).collect();
        order.sort_by(|&a, &b| {
            self.bm25[b].total_cmp(&self.bm25[a]).then_with(|| self.doc_ids[a].cmp(&self.doc_ids[b]))
        });
        order.into_iter().map(|i| self.doc_ids[i].clone()).collect()
    }
}

/// Everything needed to turn a query into evidence vectors.
pub struct FeatureBuilder<'a> {
    docs: HashMap<&'a str, &'a Document>,
    index: &'a InvertedIndex,
    indicators: &'a BTreeMap<String, IndicatorResult>,
    epsilon: f64,
    /// Pool size retrieved with BM25 for queries without a fixed pool.
    fallback_top_k: Option<usize>,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(
        docs: &'a [Document],
        index: &'a InvertedIndex,
        indicators: &'a BTreeMap<String, IndicatorResult>,
        epsilon: f64,
        fallback_top_k: Option<usize>,
    ) -> Self {
        Self { docs: docs.iter().map(|d| (d.id.as_str(), d)).collect(), index, indicators, epsilon, fallback_top_k }
    }

    pub fn resolve_pool(&self, query: &Query) -> Result<Vec<String>> {
        if !query.pool.is_empty() {
            return Ok(query.pool.clone());
        }
        match self.fallback_top_k {
            Some(k) => {
                let pool: Vec<String> = self.index.top_k(&query.text, k).into_iter().map(|(d, _)| d).collect();
                if pool.is_empty() {
                    return Err(Error::invalid(format!("BM25 retrieved nothing for query `{}`", query.id)));
                }
                Ok(pool)
            }
            None => Err(Error::invalid(format!(
                "query `{}` has an empty pool and no retrieval fallback is configured",
                query.id
            ))),
        }
    }

    pub fn indicator(&self, qid: &str) -> IndicatorResult {
        self.indicators.get(qid).cloned().unwrap_or_else(|| IndicatorResult::empty(Provenance::FileBacked))
    }

    pub fn pool_features(&self, query: &Query) -> Result<PoolFeatures> {
        let doc_ids = self.resolve_pool(query)?;
        let bm25 = self.index.score_pool(&query.text, &doc_ids)?;
        let norm = normalize_per_query(&bm25)?;
        let indicator = self.indicator(&query.id);
        let features = doc_ids
            .iter()
            .zip(&norm)
            .map(|(d, &n)| {
                let doc = self.docs.get(d.as_str()).ok_or_else(|| Error::UnknownDocument(d.clone()))?;
                assemble_features(&indicator, doc, n, self.epsilon)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PoolFeatures { qid: query.id.clone(), doc_ids, bm25, features })
    }

    /// Every pool candidate with its binary label.
    pub fn labeled_pool_rows(&self, queries: &[Query], qrels: &QrelSet) -> Result<Vec<FeatureRow>> {
        let pools = par::try_map(queries, |q| self.pool_features(q))?;
        Ok(pools
            .into_iter()
            .flat_map(|p| {
                let qid = p.qid;
                p.doc_ids.into_iter().zip(p.features).map(move |(d, v)| FeatureRow {
                    label: u8::from(qrels.is_positive(&qid, &d)),
                    qid: qid.clone(),
                    docid: d,
                    features: v,
                })
            })
            .collect())
    }

    /// Training pairs: every positive in the pool plus `neg_ratio` BM25 hard
    /// negatives per positive. Queries without a positive in their pool are
    /// skipped.
    pub fn training_rows(&self, queries: &[Query], qrels: &QrelSet, neg_ratio: usize) -> Result<Vec<FeatureRow>> {
        let per_query = par::try_map(queries, |q| -> Result<Vec<FeatureRow>> {
            let pool = self.pool_features(q)?;
            let positives: Vec<usize> =
                (0..pool.doc_ids.len()).filter(|&i| qrels.is_positive(&q.id, &pool.doc_ids[i])).collect();
            if positives.is_empty() {
                return Ok(vec![]);
            }
            let negatives = mine_hard_negatives(&q.id, qrels, &pool.bm25_ranking(), neg_ratio, positives.len());
            let position: HashMap<&str, usize> =
                pool.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
            let row = |i: usize, label: u8| FeatureRow {
                qid: q.id.clone(),
                docid: pool.doc_ids[i].clone(),
                features: pool.features[i],
                label,
            };
            let mut rows: Vec<FeatureRow> = positives.iter().map(|&i| row(i, 1)).collect();
            rows.extend(negatives.iter().map(|d| row(position[d.as_str()], 0)));
            Ok(rows)
        })?;
        Ok(per_query.into_iter().flatten().collect())
    }
}

/// A feature builder plus a scoring function and optional feature mask.
pub struct Pipeline<'a> {
    pub features: FeatureBuilder<'a>,
    pub scorer: &'a dyn Score,
    /// Masked features are replaced by the baseline's components.
    pub mask: Option<(FeatureMask, FeatureVector)>,
}

impl<'a> Pipeline<'a> {
    pub fn new(features: FeatureBuilder<'a>, scorer: &'a dyn Score) -> Self {
        Self { features, scorer, mask: None }
    }

    pub fn with_mask(mut self, mask: FeatureMask, baseline: FeatureVector) -> Self {
        self.mask = Some((mask, baseline));
        self
    }

    fn score(&self, v: &FeatureVector) -> f64 {
        match &self.mask {
            Some((mask, baseline)) => self.scorer.score(&mask.apply(v, baseline)),
            None => self.scorer.score(v),
        }
    }

    pub fn rank(&self, query: &Query) -> Result<RankedList> {
        let pool = self.features.pool_features(query)?;
        let entries = pool.doc_ids.into_iter().zip(&pool.features).map(|(d, v)| (d, self.score(v))).collect();
        RankedList::new(query.id.clone(), entries)
    }

    pub fn rank_all(&self, queries: &[Query]) -> Result<Vec<RankedList>> {
        par::try_map(queries, |q| self.rank(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::{Bm25Params, TokenizerConfig};
    use crate::scorer::RuleScorer;

    fn doc(id: &str, text: &str, charge: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            charges: [charge.to_string()].into(),
            elements: Default::default(),
        }
    }

    fn setup() -> (Vec<Document>, InvertedIndex) {
        let docs = vec![
            doc("a", "stolen phone market", "theft"),
            doc("b", "stolen phone market", "theft"),
            doc("c", "bank loan lie", "fraud"),
        ];
        let index = InvertedIndex::build(&docs, TokenizerConfig::words(), Bm25Params::default()).unwrap();
        (docs, index)
    }

    #[test]
    fn single_candidate_gets_unit_lexical_feature() {
        let (docs, index) = setup();
        let indicators = BTreeMap::new();
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, None);
        let q = Query { id: "q".into(), text: "phone".into(), pool: vec!["a".into()] };
        let pool = fb.pool_features(&q).unwrap();
        assert_eq!(pool.features[0].bm25_norm(), 1.0);
        let ranked = Pipeline::new(fb, &RuleScorer).rank(&q).unwrap();
        assert_eq!(ranked.doc_ids(), vec!["a"]);
    }

    #[test]
    fn identical_candidates_order_by_id() {
        let (docs, index) = setup();
        let indicators = BTreeMap::new();
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, None);
        let q = Query { id: "q".into(), text: "phone".into(), pool: vec!["b".into(), "a".into()] };
        let ranked = Pipeline::new(fb, &RuleScorer).rank(&q).unwrap();
        assert_eq!(ranked.doc_ids(), vec!["a", "b"]);
    }

    #[test]
    fn empty_pool_needs_fallback() {
        let (docs, index) = setup();
        let indicators = BTreeMap::new();
        let q = Query { id: "q".into(), text: "bank lie".into(), pool: vec![] };
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, None);
        assert!(fb.pool_features(&q).is_err());
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, Some(10));
        assert_eq!(fb.resolve_pool(&q).unwrap(), vec!["c"]);
    }

    #[test]
    fn unknown_candidate_is_an_error() {
        let (docs, index) = setup();
        let indicators = BTreeMap::new();
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, None);
        let q = Query { id: "q".into(), text: "x".into(), pool: vec!["zz".into()] };
        assert!(fb.pool_features(&q).is_err());
    }

    #[test]
    fn training_rows_mine_bm25_negatives() {
        let (docs, index) = setup();
        let mut indicators = BTreeMap::new();
        indicators.insert(
            "q".to_string(),
            IndicatorResult {
                charges: ["theft".to_string()].into(),
                elements: Default::default(),
                charge_confidence: 0.9,
                element_confidence: 0.0,
                provenance: Provenance::Hierarchical,
            },
        );
        let fb = FeatureBuilder::new(&docs, &index, &indicators, 1e-9, None);
        let mut qrels = QrelSet::new(1);
        qrels.insert("q", "a", 1).unwrap();
        let q = Query { id: "q".into(), text: "stolen phone".into(), pool: vec!["a".into(), "b".into(), "c".into()] };
        let rows = fb.training_rows(std::slice::from_ref(&q), &qrels, 1).unwrap();
        let ids: Vec<(&str, u8)> = rows.iter().map(|r| (r.docid.as_str(), r.label)).collect();
        assert_eq!(ids, vec![("a", 1), ("b", 0)]);
        assert_eq!(rows[0].features.charge_hit(), 1.0);

        let all = fb.labeled_pool_rows(&[q], &qrels).unwrap();
        assert_eq!(all.len(), 3);
    }
}
