//! Benchmark runner: every IR setting x query type over a category list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use mmndb_core::aggregator::{aggregate, IndecisivePolicy, QueryAnswer};
use mmndb_core::eval::{
    build_setting, eval_query, retrieval_metrics, summarize, EvalError, IrSetting, MetricSummary,
    QueryMetrics, RetrievalMetrics, SettingContext,
};
use mmndb_core::query::{Query, QueryError, QueryType};
use mmndb_core::reasoner::{IntermediateAnswer, Reasoner};
use serde::{Deserialize, Serialize};

use crate::parallel::par_map;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("no categories to query")]
    NoCategories,
}

/// What to run and what to record alongside the results.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub settings: Vec<IrSetting>,
    pub query_types: Vec<QueryType>,
    /// Empty means the database vocabulary.
    pub categories: Vec<String>,
    pub policy: IndecisivePolicy,
    pub parallelism: usize,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            settings: vec![IrSetting::Perfect],
            query_types: QueryType::ALL.to_vec(),
            categories: Vec::new(),
            policy: IndecisivePolicy::AsZero,
            parallelism: 1,
            seeds: BTreeMap::new(),
            config: serde_json::Value::Null,
        }
    }
}

/// The outcome of one query through retrieval, reasoning and aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub query: Query,
    pub ground_truth: u64,
    pub retrieved: BTreeSet<String>,
    pub answers: BTreeMap<String, IntermediateAnswer>,
    /// `None` for MAX when no retrieved document got a numeric answer.
    #[serde(flatten)]
    pub answer: Option<QueryAnswer>,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQuery {
    pub category: String,
    pub ground_truth: u64,
    pub answer: Option<u64>,
    pub witness: Option<String>,
    pub excluded: usize,
    pub retrieved: usize,
    pub relevant: usize,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub setting_config: IrSetting,
    pub query_type: QueryType,
    pub policy: IndecisivePolicy,
    pub per_query: Vec<PerQuery>,
    pub mean: MetricSummary,
    pub stderr: MetricSummary,
    pub retrieval: Option<RetrievalMetrics>,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

fn finish(
    query: Query,
    gt: &mmndb_core::corpus::GroundTruth,
    retrieved: BTreeSet<String>,
    answers: BTreeMap<String, IntermediateAnswer>,
    policy: IndecisivePolicy,
) -> Result<QueryRun, EvalError> {
    let answer = aggregate(query.qtype(), retrieved.iter().map(|id| &answers[id]), policy).ok();
    let metrics = eval_query(gt, &retrieved, &answers, answer.as_ref(), policy)?;
    Ok(QueryRun {
        ground_truth: gt.global,
        query,
        retrieved,
        answers,
        answer,
        metrics,
    })
}

/// Runs one query end to end, fanning the reasoner out over retrieved documents.
pub fn run_query(
    ctx: &SettingContext<'_>,
    reasoner: &dyn Reasoner,
    query: &Query,
    setting: &IrSetting,
    policy: IndecisivePolicy,
    parallelism: usize,
) -> Result<QueryRun, EvalError> {
    let gt = ctx.db.ground_truth(query);
    let retrieved = build_setting(setting, ctx, &gt)?;
    let answers = crate::parallel::reason_all(reasoner, ctx.db, query, &retrieved, parallelism);
    finish(query.clone(), &gt, retrieved, answers, policy)
}

/// Runs every setting and query type of `spec`.
///
/// Work fans out over all (query, document) pairs of a query type at once, and each
/// pair is asked once per run even when several settings retrieve it. Reports come
/// back ordered by setting, then query type.
pub fn run_benchmark(
    ctx: &SettingContext<'_>,
    reasoner: &dyn Reasoner,
    spec: &BenchSpec,
) -> Result<Vec<EvalReport>, BenchError> {
    let categories: Vec<String> = if spec.categories.is_empty() {
        ctx.db.vocabulary().iter().cloned().collect()
    } else {
        spec.categories.clone()
    };
    if categories.is_empty() {
        return Err(BenchError::NoCategories);
    }

    let mut reports: BTreeMap<(usize, QueryType), EvalReport> = BTreeMap::new();
    for &qtype in &spec.query_types {
        let queries: Vec<Query> = categories
            .iter()
            .map(|c| Query::new(qtype, c))
            .collect::<Result<_, _>>()?;
        let truths: Vec<_> = queries.iter().map(|q| ctx.db.ground_truth(q)).collect();

        let mut retrieved_by_setting = Vec::with_capacity(spec.settings.len());
        for setting in &spec.settings {
            let sets = par_map(&truths, spec.parallelism, |gt| build_setting(setting, ctx, gt));
            retrieved_by_setting.push(sets.into_iter().collect::<Result<Vec<_>, _>>()?);
        }

        let pairs: BTreeSet<(usize, &str)> = retrieved_by_setting
            .iter()
            .flat_map(|sets| {
                sets.iter()
                    .enumerate()
                    .flat_map(|(qi, set)| set.iter().map(move |id| (qi, id.as_str())))
            })
            .collect();
        let pairs: Vec<(usize, &str)> = pairs.into_iter().collect();
        let answers = par_map(&pairs, spec.parallelism, |(qi, id)| match ctx.db.get(id) {
            Some(doc) => reasoner.reason(&queries[*qi], doc),
            None => IntermediateAnswer::failed(*id, "unknown document"),
        });
        let mut by_query: Vec<BTreeMap<String, IntermediateAnswer>> =
            vec![BTreeMap::new(); queries.len()];
        for ((qi, id), a) in pairs.into_iter().zip(answers) {
            by_query[qi].insert(id.to_string(), a);
        }

        for (si, (setting, sets)) in spec.settings.iter().zip(retrieved_by_setting).enumerate() {
            let mut per_query = Vec::with_capacity(queries.len());
            let mut metrics = Vec::with_capacity(queries.len());
            let mut ir = Vec::with_capacity(queries.len());
            for (qi, retrieved) in sets.into_iter().enumerate() {
                let gt = &truths[qi];
                let answers: BTreeMap<String, IntermediateAnswer> = retrieved
                    .iter()
                    .map(|id| (id.clone(), by_query[qi][id].clone()))
                    .collect();
                let run = finish(queries[qi].clone(), gt, retrieved, answers, spec.policy)?;
                per_query.push(PerQuery {
                    category: queries[qi].category().to_string(),
                    ground_truth: gt.global,
                    answer: run.answer.as_ref().map(|a| a.value),
                    witness: run.answer.as_ref().and_then(|a| a.witness.clone()),
                    excluded: run.answer.as_ref().map_or(0, |a| a.excluded),
                    retrieved: run.retrieved.len(),
                    relevant: gt.relevant.len(),
                    metrics: run.metrics.clone(),
                });
                metrics.push(run.metrics);
                ir.push((gt.relevant.clone(), run.retrieved));
            }
            let (mean, stderr) = summarize(&metrics);
            reports.insert(
                (si, qtype),
                EvalReport {
                    setting: setting.to_string(),
                    setting_config: *setting,
                    query_type: qtype,
                    policy: spec.policy,
                    per_query,
                    mean,
                    stderr,
                    retrieval: retrieval_metrics(&ir).ok(),
                    seeds: spec.seeds.clone(),
                    config: spec.config.clone(),
                },
            );
        }
    }
    Ok(reports.into_values().collect())
}

pub fn reports_to_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize") + "\n"
}

fn cell(mean: Option<f64>, stderr: Option<f64>) -> String {
    match (mean, stderr) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".to_string(),
    }
}

/// Plain-text summary table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "setting", "type", "n", "total_err", "delta_err", "accuracy", "max_hit", "P", "R",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for r in reports {
        let (m, s) = (&r.mean, &r.stderr);
        rows.push(vec![
            r.setting.clone(),
            r.query_type.as_str().to_string(),
            r.per_query.len().to_string(),
            cell(m.total_error, s.total_error),
            cell(m.delta_error, s.delta_error),
            cell(m.accuracy, s.accuracy),
            cell(m.max_hit, None),
            cell(r.retrieval.map(|x| x.precision), None),
            cell(r.retrieval.map(|x| x.recall), None),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).expect("write to string");
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "{}", rule.join("  ")).expect("write to string");
        }
    }
    out
}
