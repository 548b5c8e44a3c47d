use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use juris_core::corpus::{load_corpus, load_qrels, load_queries, save_corpus, Document, QrelSet, Query};
use juris_core::distill::{self, CleaningRules};
use juris_core::eval::{
    metrics_suite, paired_randomization_test, read_run, render_sweep_table, write_run, Experiment, ExperimentData,
    FeatureBuilder, MetricsReport, Pipeline, QueryMetrics, Variant,
};
use juris_core::explain::{attribute_all, mean_abs_phi};
use juris_core::features::{read_features, write_features, FeatureVector, FEATURE_NAMES};
use juris_core::inference::{load_indicators, save_indicators, GeneratorConfig, GeneratorModel, IndicatorResult};
use juris_core::lexical::InvertedIndex;
use juris_core::scorer::{train_scorer, RuleScorer, Score, ScorerModel};
use juris_core::synth::{self, SynthConfig};
use juris_core::taxonomy::Taxonomy;
use serde::Serialize;

use crate::config::{input, optional_input, RunConfig};
use crate::*;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.resolve_seed(cli.seed)?;
    configure_threads(cli.threads)?;
    log::debug!("seed {seed}");
    match cli.command {
        Command::Index(a) => index(a, cfg),
        Command::Distill(c) => distill_cmd(c, cfg),
        Command::TrainGen(a) => train_gen(a, cfg),
        Command::Infer(a) => infer(a, cfg),
        Command::Features(a) => features(a, cfg),
        Command::TrainScorer(a) => train_scorer_cmd(a, cfg),
        Command::Rank(a) => rank(a, cfg),
        Command::Eval(a) => eval(a, cfg),
        Command::Ablate(a) => ablate(a, cfg),
        Command::Shapley(a) => shapley(a, cfg),
        Command::Sweep(a) => sweep(a, cfg),
        Command::Synth(a) => synth_cmd(a, cfg),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(UsageError("--threads must be at least 1".into()).into()),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
            #[cfg(not(feature = "parallel"))]
            if n > 1 {
                log::warn!("built without parallel support; --threads {n} has no effect");
            }
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn index(a: IndexArgs, mut cfg: RunConfig) -> Result<()> {
    a.lexical.apply(&mut cfg);
    let docs = load_corpus(input(&a.corpus, &cfg.paths.corpus, "corpus")?)?;
    let index = InvertedIndex::build(&docs, cfg.tokenizer, cfg.bm25)?;
    index.save(&a.out)?;
    log::info!("indexed {} documents, {} terms", index.num_docs(), index.num_terms());
    Ok(())
}

fn distill_cmd(c: DistillCommand, cfg: RunConfig) -> Result<()> {
    match c {
        DistillCommand::Render { corpus, max_chars, out } => {
            let docs = load_corpus(input(&corpus, &cfg.paths.corpus, "corpus")?)?;
            let n = distill::write_prompts(&out, &docs, max_chars)?;
            log::info!("wrote {n} prompts to {}", out.display());
        }
        DistillCommand::Ingest {
            responses,
            corpus,
            taxonomy,
            forbidden_terms,
            min_elements,
            max_elements,
            out,
            rejects,
        } => {
            if min_elements > max_elements {
                bail!(UsageError(format!("--min-elements {min_elements} exceeds --max-elements {max_elements}")));
            }
            if !responses.is_dir() {
                bail!("responses directory {} does not exist", responses.display());
            }
            let docs = load_corpus(input(&corpus, &cfg.paths.corpus, "corpus")?)?;
            let tax = optional_input(&taxonomy, &cfg.paths.taxonomy, "taxonomy")?.map(Taxonomy::load).transpose()?;
            let mut rules = CleaningRules { min_elements, max_elements, ..CleaningRules::default() };
            if let Some(p) = forbidden_terms {
                rules.forbidden_terms = distill::load_forbidden_terms(&p)?;
            }
            let records = distill::read_responses(&responses, &docs)?;
            let (kept, rejected) = distill::clean_records(records, tax.as_ref(), &rules);
            let silver = distill::silver_documents(&docs, &kept);
            let mut reject_lines = String::new();
            for r in &rejected {
                reject_lines.push_str(&serde_json::to_string(r)?);
                reject_lines.push('\n');
            }
            save_corpus(&out, &silver)?;
            write_text(&rejects, &reject_lines)?;
            log::info!("kept {} records, rejected {}", kept.len(), rejected.len());
        }
    }
    Ok(())
}

fn train_gen(a: TrainGenArgs, cfg: RunConfig) -> Result<()> {
    let docs = load_corpus(input(&a.corpus, &cfg.paths.corpus, "corpus")?)?;
    let tax = Taxonomy::load(input(&a.taxonomy, &cfg.paths.taxonomy, "taxonomy")?)?;
    let mut gen_cfg = GeneratorConfig { tokenizer: cfg.tokenizer, ..cfg.generator };
    if let Some(m) = a.mode {
        gen_cfg.mode = m.into();
    }
    if let Some(k) = a.top_k {
        gen_cfg.top_k_elements = k;
    }
    if let Some(alpha) = a.alpha {
        gen_cfg.smoothing_alpha = alpha;
    }
    if let Some(t) = a.tokenizer {
        gen_cfg.tokenizer = t.config(gen_cfg.tokenizer);
    }
    let model = GeneratorModel::fit(&docs, &tax, gen_cfg)?;
    model.save(&a.out)?;
    Ok(())
}

fn infer(a: InferArgs, cfg: RunConfig) -> Result<()> {
    let model = GeneratorModel::load(input(&a.generator, &cfg.paths.generator, "generator")?)?;
    let queries = load_queries(input(&a.queries, &cfg.paths.queries, "queries")?)?;
    let tax = Taxonomy::load(input(&a.taxonomy, &cfg.paths.taxonomy, "taxonomy")?)?;
    let results: BTreeMap<String, IndicatorResult> =
        queries.iter().map(|q| (q.id.clone(), model.infer(q, &tax))).collect();
    save_indicators(&a.out, &results)?;
    log::info!("inferred indicators for {} queries", results.len());
    Ok(())
}

struct PoolInputs {
    docs: Vec<Document>,
    queries: Vec<Query>,
    indicators: BTreeMap<String, IndicatorResult>,
    index: InvertedIndex,
    epsilon: f64,
    fallback_top_k: Option<usize>,
}

impl PoolInputs {
    fn load(a: &PoolArgs, cfg: &mut RunConfig) -> Result<Self> {
        a.lexical.apply(cfg);
        let docs = load_corpus(input(&a.corpus, &cfg.paths.corpus, "corpus")?)?;
        let queries = load_queries(input(&a.queries, &cfg.paths.queries, "queries")?)?;
        let tax = Taxonomy::load(input(&a.taxonomy, &cfg.paths.taxonomy, "taxonomy")?)?;
        let indicators = load_indicators(input(&a.indicators, &cfg.paths.indicators, "indicators")?, &tax)?.results;
        let missing = queries.iter().filter(|q| !indicators.contains_key(&q.id)).count();
        if missing > 0 {
            log::warn!("{missing} queries have no indicators; their charge and element features are zero");
        }
        let index = match optional_input(&a.index, &cfg.paths.index, "index")? {
            Some(p) => {
                let index = InvertedIndex::load(&p)?;
                if index.num_docs() != docs.len() || docs.iter().any(|d| index.doc_length(&d.id).is_none()) {
                    bail!("index {} was not built from this corpus", p.display());
                }
                index
            }
            None => InvertedIndex::build(&docs, cfg.tokenizer, cfg.bm25)?,
        };
        let experiment = cfg.experiment();
        Ok(Self {
            docs,
            queries,
            indicators,
            index,
            epsilon: experiment.epsilon,
            fallback_top_k: a.fallback_top_k.or(experiment.fallback_top_k),
        })
    }

    fn builder(&self) -> FeatureBuilder<'_> {
        FeatureBuilder::new(&self.docs, &self.index, &self.indicators, self.epsilon, self.fallback_top_k)
    }
}

fn features(a: FeaturesArgs, mut cfg: RunConfig) -> Result<()> {
    let inputs = PoolInputs::load(&a.pool, &mut cfg)?;
    let qrels = load_qrels(input(&a.qrels, &cfg.paths.qrels, "qrels")?, cfg.positive_threshold(a.positive_threshold))?;
    let fb = inputs.builder();
    let rows = match a.rows {
        RowSelection::Pool => fb.labeled_pool_rows(&inputs.queries, &qrels)?,
        RowSelection::Training => {
            fb.training_rows(&inputs.queries, &qrels, a.neg_ratio.unwrap_or(cfg.train.neg_ratio))?
        }
    };
    write_features(&a.out, &rows)?;
    log::info!("wrote {} feature rows", rows.len());
    Ok(())
}

fn train_scorer_cmd(a: TrainScorerArgs, mut cfg: RunConfig) -> Result<()> {
    let rows = read_features(input(&a.features, &cfg.paths.features, "features")?)?;
    let qrels = match a.qrels {
        Some(ref p) => {
            Some(load_qrels(input(&Some(p.clone()), &None, "qrels")?, cfg.positive_threshold(a.positive_threshold))?)
        }
        None => None,
    };
    let examples: Vec<(FeatureVector, bool)> = rows
        .iter()
        .map(|r| {
            let label = match &qrels {
                Some(q) => q.is_positive(&r.qid, &r.docid),
                None => r.label == 1,
            };
            (r.features, label)
        })
        .collect();
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(d) = a.dropout {
        cfg.train.dropout = d;
    }
    let (model, curve) = train_scorer(&examples, &cfg.train)?;
    model.save(&a.out)?;
    if let Some(p) = a.loss_curve {
        let text: String = curve.iter().enumerate().map(|(i, l)| format!("{}\t{l}\n", i + 1)).collect();
        write_text(&p, &text)?;
    }
    log::info!("trained on {} examples; final loss {:.6}", examples.len(), curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn rank(a: RankArgs, mut cfg: RunConfig) -> Result<()> {
    let model = if a.rule_based {
        None
    } else {
        let path = input(&a.model, &cfg.paths.scorer, "model")?;
        Some(ScorerModel::load(path)?)
    };
    let inputs = PoolInputs::load(&a.pool, &mut cfg)?;
    let scorer: &dyn Score = match &model {
        Some(m) => m,
        None => &RuleScorer,
    };
    let rankings = Pipeline::new(inputs.builder(), scorer).rank_all(&inputs.queries)?;
    write_run(&a.out, &rankings)?;
    log::info!("ranked {} queries", rankings.len());
    Ok(())
}

type Metric = (&'static str, fn(&QueryMetrics) -> f64);

const METRICS: [Metric; 8] = [
    ("map", |m| m.map),
    ("p_at_3", |m| m.p_at_3),
    ("r_at_3", |m| m.r_at_3),
    ("r_at_5", |m| m.r_at_5),
    ("hits_at_3", |m| m.hits_at_3),
    ("hits_at_5", |m| m.hits_at_5),
    ("mrr_at_5", |m| m.mrr_at_5),
    ("ndcg_at_5", |m| m.ndcg_at_5),
];

#[derive(Serialize)]
struct EvalReport {
    num_queries: usize,
    num_excluded: usize,
    excluded: Vec<String>,
    mean: QueryMetrics,
    per_query: BTreeMap<String, QueryMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

#[derive(Serialize)]
struct Comparison {
    paired_queries: usize,
    iterations: usize,
    other_mean: QueryMetrics,
    /// Two-sided p-values of the paired randomization test, per metric.
    p_values: BTreeMap<&'static str, f64>,
}

fn compare(a: &MetricsReport, b: &MetricsReport, iterations: usize, seed: u64) -> Result<Comparison> {
    let common: Vec<&String> = a.per_query.keys().filter(|q| b.per_query.contains_key(*q)).collect();
    if common.is_empty() {
        bail!("the two runs share no evaluable query");
    }
    let mut p_values = BTreeMap::new();
    for (name, metric) in METRICS {
        let xs: Vec<f64> = common.iter().map(|q| metric(&a.per_query[*q])).collect();
        let ys: Vec<f64> = common.iter().map(|q| metric(&b.per_query[*q])).collect();
        p_values.insert(name, paired_randomization_test(&xs, &ys, iterations, seed)?);
    }
    Ok(Comparison { paired_queries: common.len(), iterations, other_mean: b.mean, p_values })
}

fn eval(a: EvalArgs, cfg: RunConfig) -> Result<()> {
    if !a.run.exists() {
        bail!("run path {} does not exist", a.run.display());
    }
    let qrels = load_qrels(input(&a.qrels, &cfg.paths.qrels, "qrels")?, cfg.positive_threshold(a.positive_threshold))?;
    let run = read_run(&a.run)?;
    let other = match &a.compare {
        Some(p) if !p.exists() => bail!("compare path {} does not exist", p.display()),
        Some(p) => Some(read_run(p)?),
        None => None,
    };
    let report = metrics_suite(&run, &qrels);
    let comparison =
        other.map(|o| compare(&report, &metrics_suite(&o, &qrels), a.iterations, cfg.seed())).transpose()?;
    log::info!(
        "{} queries evaluated, {} excluded; MAP {:.4}",
        report.num_queries,
        report.excluded.len(),
        report.mean.map
    );
    write_json(
        &a.out,
        &EvalReport {
            num_queries: report.num_queries,
            num_excluded: report.excluded.len(),
            excluded: report.excluded,
            mean: report.mean,
            per_query: report.per_query,
            comparison,
        },
    )
}

fn experiment(s: &SplitArgs, cfg: &mut RunConfig) -> Result<Experiment> {
    s.lexical.apply(cfg);
    if let Some(e) = s.epochs {
        cfg.train.epochs = e;
    }
    if s.fallback_top_k.is_some() {
        cfg.fallback_top_k = s.fallback_top_k;
    }
    let docs = load_corpus(input(&s.corpus, &cfg.paths.corpus, "corpus")?)?;
    let taxonomy = Taxonomy::load(input(&s.taxonomy, &cfg.paths.taxonomy, "taxonomy")?)?;
    let train_queries = load_queries(input(&s.train_queries, &cfg.paths.train_queries, "train-queries")?)?;
    let test_queries = load_queries(input(&s.test_queries, &cfg.paths.test_queries, "test-queries")?)?;
    let qrels: QrelSet =
        load_qrels(input(&s.qrels, &cfg.paths.qrels, "qrels")?, cfg.positive_threshold(s.positive_threshold))?;
    let file_indicators = optional_input(&s.indicators, &cfg.paths.indicators, "indicators")?
        .map(|p| load_indicators(p, &taxonomy).map(|l| l.results))
        .transpose()?;
    let data = ExperimentData { docs, taxonomy, train_queries, test_queries, qrels, file_indicators };
    Ok(Experiment::new(data, cfg.experiment())?)
}

#[derive(Serialize)]
struct VariantSummary {
    variant: String,
    num_queries: usize,
    num_excluded: usize,
    mean: QueryMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    map_p_value_vs_full: Option<f64>,
}

#[derive(Serialize)]
struct AblationReport {
    seed: u64,
    variants: Vec<VariantSummary>,
}

fn ablate(a: AblateArgs, mut cfg: RunConfig) -> Result<()> {
    let variants: Vec<Variant> = a
        .variants
        .iter()
        .map(|v| v.trim().parse().map_err(|e: juris_core::Error| UsageError(e.to_string())))
        .collect::<std::result::Result<_, _>>()?;
    let exp = experiment(&a.split, &mut cfg)?;
    let outcomes = if variants.is_empty() {
        exp.run_all()?
    } else {
        variants.iter().map(|v| exp.run_variant(*v)).collect::<juris_core::Result<Vec<_>>>()?
    };
    let full = outcomes.iter().find(|o| o.variant == Variant::Full).map(|o| o.report.per_query_values(|m| m.map));
    let mut table = String::from("variant\tMAP\tP@3\tR@3\tR@5\tHits@3\tHits@5\tMRR@5\tNDCG@5\n");
    let mut summaries = Vec::new();
    for o in &outcomes {
        let m = &o.report.mean;
        writeln!(
            table,
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            o.variant,
            100.0 * m.map,
            100.0 * m.p_at_3,
            100.0 * m.r_at_3,
            100.0 * m.r_at_5,
            100.0 * m.hits_at_3,
            100.0 * m.hits_at_5,
            100.0 * m.mrr_at_5,
            100.0 * m.ndcg_at_5
        )?;
        let p = match &full {
            Some(f) if o.variant != Variant::Full => {
                Some(paired_randomization_test(f, &o.report.per_query_values(|m| m.map), a.iterations, cfg.seed())?)
            }
            _ => None,
        };
        summaries.push(VariantSummary {
            variant: o.variant.to_string(),
            num_queries: o.report.num_queries,
            num_excluded: o.report.excluded.len(),
            mean: o.report.mean,
            map_p_value_vs_full: p,
        });
    }
    print!("{table}");
    write_json(&a.out, &AblationReport { seed: cfg.seed(), variants: summaries })
}

fn shapley(a: ShapleyArgs, cfg: RunConfig) -> Result<()> {
    let model = ScorerModel::load(input(&a.model, &cfg.paths.scorer, "model")?)?;
    let features_path = input(&a.features, &cfg.paths.features, "features")?;
    let rows = read_features(&features_path)?;
    let baseline_rows = match &a.baseline_features {
        Some(p) => read_features(input(&Some(p.clone()), &None, "baseline-features")?)?,
        None => rows.clone(),
    };
    let baseline = FeatureVector::mean(baseline_rows.iter().map(|r| &r.features))
        .ok_or_else(|| anyhow::anyhow!("baseline feature file has no rows"))?;
    let selected: Vec<_> = rows.iter().filter(|r| !a.positives_only || r.label == 1).collect();
    if selected.is_empty() {
        bail!("no rows to attribute");
    }
    let instances: Vec<FeatureVector> = selected.iter().map(|r| r.features).collect();
    let attributions = attribute_all(&model, &instances, &baseline);

    let mut out = String::from("qid\tdocid\tphi_v1\tphi_v2\tphi_v3\tphi_v4\tphi_v5\tbase\tvalue\n");
    for (r, at) in selected.iter().zip(&attributions) {
        let phi: Vec<String> = at.phi.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.qid, r.docid, phi.join("\t"), at.base_value, at.instance_value)?;
    }
    let summary = a.summary.as_ref().map(|_| {
        let mut csv = String::from("feature,mean_abs_phi\n");
        for (name, m) in FEATURE_NAMES.iter().zip(mean_abs_phi(&attributions)) {
            csv.push_str(&format!("{name},{m}\n"));
        }
        csv
    });
    write_text(&a.out, &out)?;
    if let (Some(p), Some(csv)) = (&a.summary, summary) {
        write_text(p, &csv)?;
    }
    log::info!("attributed {} pairs", attributions.len());
    Ok(())
}

fn sweep(a: SweepArgs, mut cfg: RunConfig) -> Result<()> {
    if a.ratios.is_empty() {
        bail!(UsageError("--ratios needs at least one value".into()));
    }
    if let Some(r) = a.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        bail!(UsageError(format!("ratio {r} outside (0, 1]")));
    }
    let exp = experiment(&a.split, &mut cfg)?;
    let rows = exp.sweep(&a.ratios, cfg.seed())?;
    let table = render_sweep_table(&rows);
    print!("{table}");
    write_text(&a.out, &table)?;
    if let Some(p) = &a.json {
        write_json(p, &rows)?;
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs, cfg: RunConfig) -> Result<()> {
    let mut sc: SynthConfig = match &a.synth_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(n) = a.queries {
        sc.num_queries = n;
    }
    let data = synth::generate(&sc, cfg.seed())?;
    data.save(&a.out)?;
    log::info!(
        "wrote {} documents, {} train and {} test queries to {}",
        data.docs.len(),
        data.train_queries.len(),
        data.test_queries.len(),
        a.out.display()
    );
    Ok(())
}
