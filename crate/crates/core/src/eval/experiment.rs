//! Ablations, hierarchical-vs-independent comparison and data-efficiency
//! sweeps over a train/test split of queries.
//!
//! Every variant follows the same protocol: obtain indicators for all
//! queries, mine training pairs on the training queries, compute the mean
//! training vector as baseline, replace masked features with the baseline,
//! train a fresh scorer, then rank and evaluate the test queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QrelSet, Query};
use crate::error::{Error, Result};
use crate::eval::metrics::{metrics_suite, MetricsReport, QueryMetrics, RankedList};
use crate::eval::pipeline::{FeatureBuilder, Pipeline};
use crate::features::{FeatureMask, FeatureVector, DEFAULT_EPSILON};
use crate::inference::{element_f1, GenerationMode, GeneratorConfig, GeneratorModel, IndicatorResult};
use crate::lexical::{Bm25Params, InvertedIndex, TokenizerConfig};
use crate::par;
use crate::rng;
use crate::scorer::{train_scorer, RuleScorer, ScorerModel, TrainConfig};
use crate::taxonomy::Taxonomy;

/// Per charge class, draws `ceil(ratio × class size)` documents without
/// replacement. Documents are classed by their primary charge; the output
/// keeps corpus order.
pub fn stratified_subsample(docs: &[Document], ratio: f64, seed: u64) -> Result<Vec<Document>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("sampling ratio {ratio} outside (0, 1]")));
    }
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        classes.entry(d.primary_charge()).or_default().push(i);
    }
    let mut rng = rng::stream(seed, "stratified-subsample");
    let mut keep = vec![false; docs.len()];
    for members in classes.values() {
        // The small slack keeps products such as 0.7 × 10 from rounding up.
        let take = ((ratio * members.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        let take = take.min(members.len());
        for j in index::sample(&mut rng, members.len(), take) {
            keep[members[j]] = true;
        }
    }
    Ok(docs.iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    WithoutLexical,
    WithoutCharge,
    WithoutElement,
    OnlyLexical,
    OnlyCharge,
    OnlyElement,
    RuleBased,
    IndependentGeneration,
    /// Swaps file-backed indicators for the built-in generator.
    FileBackedOff,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::WithoutLexical,
        Variant::WithoutCharge,
        Variant::WithoutElement,
        Variant::OnlyLexical,
        Variant::OnlyCharge,
        Variant::OnlyElement,
        Variant::RuleBased,
        Variant::IndependentGeneration,
        Variant::FileBackedOff,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutLexical => "w/o-lexical",
            Variant::WithoutCharge => "w/o-charge",
            Variant::WithoutElement => "w/o-element",
            Variant::OnlyLexical => "only-lexical",
            Variant::OnlyCharge => "only-charge",
            Variant::OnlyElement => "only-element",
            Variant::RuleBased => "rule-based",
            Variant::IndependentGeneration => "independent-generation",
            Variant::FileBackedOff => "file-backed-off",
        }
    }

    /// Features kept by the variant. Charge features are v1 and v3, element
    /// features v2 and v4, the lexical feature v5.
    pub fn mask(&self) -> FeatureMask {
        match self {
            Variant::WithoutLexical => FeatureMask::without(&[4]),
            Variant::WithoutCharge => FeatureMask::without(&[0, 2]),
            Variant::WithoutElement => FeatureMask::without(&[1, 3]),
            Variant::OnlyLexical => FeatureMask::only(&[4]),
            Variant::OnlyCharge => FeatureMask::only(&[0, 2]),
            Variant::OnlyElement => FeatureMask::only(&[1, 3]),
            _ => FeatureMask::ALL,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation variant `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Retrieval corpus; its labels also train the built-in generator.
    pub docs: Vec<Document>,
    pub taxonomy: Taxonomy,
    pub train_queries: Vec<Query>,
    pub test_queries: Vec<Query>,
    pub qrels: QrelSet,
    /// Indicators from an external generator, keyed by query id.
    pub file_indicators: Option<BTreeMap<String, IndicatorResult>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub epsilon: f64,
    pub fallback_top_k: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            bm25: Bm25Params::default(),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            epsilon: DEFAULT_EPSILON,
            fallback_top_k: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub report: MetricsReport,
    pub rankings: Vec<RankedList>,
    /// `None` for the rule-based variant.
    pub model: Option<ScorerModel>,
    pub loss_curve: Vec<f64>,
    /// Mean training vector, used both for masking and as attribution baseline.
    pub baseline: FeatureVector,
    pub train_features: Vec<FeatureVector>,
}

/// One row of a data-efficiency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub generator_docs: usize,
    pub metrics: QueryMetrics,
}

pub struct Experiment {
    pub data: ExperimentData,
    pub config: ExperimentConfig,
    index: InvertedIndex,
    all_queries: Vec<Query>,
}

impl Experiment {
    pub fn new(data: ExperimentData, config: ExperimentConfig) -> Result<Self> {
        if data.train_queries.is_empty() || data.test_queries.is_empty() {
            return Err(Error::invalid("experiments need training and test queries"));
        }
        let index = InvertedIndex::build(&data.docs, config.tokenizer, config.bm25)?;
        let all_queries = data.train_queries.iter().chain(&data.test_queries).cloned().collect();
        Ok(Self { data, config, index, all_queries })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Fits the built-in generator on `docs` and infers every query.
    pub fn generated_indicators(
        &self,
        docs: &[Document],
        mode: GenerationMode,
    ) -> Result<BTreeMap<String, IndicatorResult>> {
        let cfg = GeneratorConfig { mode, tokenizer: self.config.tokenizer, ..self.config.generator };
        let model = GeneratorModel::fit(docs, &self.data.taxonomy, cfg)?;
        let results = par::map(&self.all_queries, |q| (q.id.clone(), model.infer(q, &self.data.taxonomy)));
        Ok(results.into_iter().collect())
    }

    fn indicators_for(
        &self,
        variant: Variant,
        generator_docs: &[Document],
    ) -> Result<BTreeMap<String, IndicatorResult>> {
        match (variant, &self.data.file_indicators) {
            (Variant::IndependentGeneration, _) => {
                self.generated_indicators(generator_docs, GenerationMode::Independent)
            }
            (Variant::FileBackedOff, Some(_)) => {
                self.generated_indicators(generator_docs, GenerationMode::Hierarchical)
            }
            (Variant::FileBackedOff, None) => {
                Err(Error::invalid("variant `file-backed-off` needs file-backed indicators to switch off"))
            }
            (_, Some(file)) => Ok(file.clone()),
            (_, None) => self.generated_indicators(generator_docs, self.config.generator.mode),
        }
    }

    pub fn run_variant(&self, variant: Variant) -> Result<VariantOutcome> {
        self.run_with_generator_docs(variant, &self.data.docs)
    }

    /// Runs `variant` with the built-in generator fitted on `generator_docs`.
    pub fn run_with_generator_docs(&self, variant: Variant, generator_docs: &[Document]) -> Result<VariantOutcome> {
        let indicators = self.indicators_for(variant, generator_docs)?;
        let builder = || {
            FeatureBuilder::new(
                &self.data.docs,
                &self.index,
                &indicators,
                self.config.epsilon,
                self.config.fallback_top_k,
            )
        };
        let train_rows =
            builder().training_rows(&self.data.train_queries, &self.data.qrels, self.config.train.neg_ratio)?;
        let train_features: Vec<FeatureVector> = train_rows.iter().map(|r| r.features).collect();
        let baseline = FeatureVector::mean(&train_features)
            .ok_or_else(|| Error::invalid("no training pairs: no training query has a positive in its pool"))?;

        let (model, loss_curve) = if variant == Variant::RuleBased {
            (None, vec![])
        } else {
            let mask = variant.mask();
            let examples: Vec<(FeatureVector, bool)> =
                train_rows.iter().map(|r| (mask.apply(&r.features, &baseline), r.label == 1)).collect();
            let (model, curve) = train_scorer(&examples, &self.config.train)?;
            (Some(model), curve)
        };

        let rankings = match &model {
            Some(m) => {
                Pipeline::new(builder(), m).with_mask(variant.mask(), baseline).rank_all(&self.data.test_queries)?
            }
            None => Pipeline::new(builder(), &RuleScorer).rank_all(&self.data.test_queries)?,
        };
        let report = metrics_suite(&rankings, &self.data.qrels);
        Ok(VariantOutcome { variant, report, rankings, model, loss_curve, baseline, train_features })
    }

    /// Runs every variant that applies to this data, skipping
    /// `file-backed-off` when no file-backed indicators are present.
    pub fn run_all(&self) -> Result<Vec<VariantOutcome>> {
        Variant::ALL
            .into_iter()
            .filter(|v| *v != Variant::FileBackedOff || self.data.file_indicators.is_some())
            .map(|v| self.run_variant(v))
            .collect()
    }

    /// Mean element-set F1 of the built-in generator on the test queries.
    pub fn element_f1(&self, mode: GenerationMode, gold: &BTreeMap<String, BTreeSet<String>>) -> Result<f64> {
        let indicators = self.generated_indicators(&self.data.docs, mode)?;
        let scores: Vec<f64> = self
            .data
            .test_queries
            .iter()
            .filter_map(|q| Some(element_f1(&indicators.get(&q.id)?.elements, gold.get(&q.id)?)))
            .collect();
        if scores.is_empty() {
            return Err(Error::invalid("no test query has gold elements"));
        }
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Data-efficiency sweep: for each ratio (ascending), subsample the
    /// generator's training documents per charge, then run the full variant.
    pub fn sweep(&self, ratios: &[f64], seed: u64) -> Result<Vec<SweepRow>> {
        let mut ratios = ratios.to_vec();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        ratios
            .into_iter()
            .map(|ratio| {
                let subset = stratified_subsample(&self.data.docs, ratio, seed)?;
                let outcome = self.run_with_generator_docs(Variant::Full, &subset)?;
                Ok(SweepRow { ratio, generator_docs: subset.len(), metrics: outcome.report.mean })
            })
            .collect()
    }
}

/// Renders a sweep as a tab-separated table: ratio, then MAP, P@3, R@5,
/// Hits@5 and MRR@5 in percent.
pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio\tMAP\tP@3\tR@5\tHits@5\tMRR@5\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
            r.ratio,
            100.0 * m.map,
            100.0 * m.p_at_3,
            100.0 * m.r_at_5,
            100.0 * m.hits_at_5,
            100.0 * m.mrr_at_5
        ));
    }
    out
}
