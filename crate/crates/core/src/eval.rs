//! Retrieval regimes and pipeline metrics.
//!
//! For a query with relevant set `R` and retrieved set `D_r`:
//! `TP = D_r ∩ R`, `FP = D_r \ R`, `FN = R \ D_r`. Per-document answers `a(d)` are
//! compared with the ground truth `g(d)`; totals are normalized by `max(G, 1)`
//! where `G` is the query's global ground truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::aggregator::{IndecisivePolicy, QueryAnswer};
use crate::corpus::{GroundTruth, MultimodalDatabase};
use crate::embedding::{EmbeddingError, EmbeddingStore, QueryEncoder, SimilarityMetric};
use crate::query::{Query, QueryType};
use crate::reasoner::IntermediateAnswer;
use crate::retriever::{retrieve, RetrieverConfig, RetrieverError, SelectorModel};
use crate::seed::derived_rng;

pub const DEFAULT_NOISY_NEGATIVES: usize = 300;
pub const DEFAULT_DAMAGING_NEGATIVES: usize = 300;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("setting `{0}` needs an embedding store")]
    MissingStore(&'static str),
    #[error("setting `{0}` needs a query encoder")]
    MissingEncoder(&'static str),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("no answer for retrieved document `{0}`")]
    MissingAnswer(String),
    #[error("retrieval metrics need at least one query")]
    NoQueries,
}

/// How the retrieved set handed to the reasoner is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum IrSetting {
    /// Exactly the relevant documents.
    Perfect,
    /// Relevant documents plus `n_random` seeded random non-relevant ones.
    Noisy { n_random: usize, seed: u64 },
    /// Relevant documents plus the `n_top` non-relevant ones most similar to the query.
    Damaging { n_top: usize, metric: SimilarityMetric },
    /// Whatever the configured retriever returns.
    Full { retriever: RetrieverConfig },
}

impl IrSetting {
    pub fn name(&self) -> &'static str {
        match self {
            IrSetting::Perfect => "perfect",
            IrSetting::Noisy { .. } => "noisy",
            IrSetting::Damaging { .. } => "damaging",
            IrSetting::Full { .. } => "full",
        }
    }
}

impl fmt::Display for IrSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrSetting::Perfect => f.write_str("PerfectIR"),
            IrSetting::Noisy { n_random, .. } => write!(f, "NoisyIR(n={n_random})"),
            IrSetting::Damaging { n_top, .. } => write!(f, "DamagingIR(n={n_top})"),
            IrSetting::Full { retriever } => write!(f, "Full({})", retriever.strategy),
        }
    }
}

/// Everything a setting may need beyond the corpus.
#[derive(Clone, Copy)]
pub struct SettingContext<'a> {
    pub db: &'a MultimodalDatabase,
    pub store: Option<&'a EmbeddingStore>,
    pub encoder: Option<&'a dyn QueryEncoder>,
    pub selector: Option<&'a SelectorModel>,
}

impl<'a> SettingContext<'a> {
    pub fn new(db: &'a MultimodalDatabase) -> Self {
        Self {
            db,
            store: None,
            encoder: None,
            selector: None,
        }
    }

    fn embedding(
        &self,
        name: &'static str,
        query: &Query,
    ) -> Result<(&'a EmbeddingStore, Vec<f32>), EvalError> {
        let store = self.store.ok_or(EvalError::MissingStore(name))?;
        let encoder = self.encoder.ok_or(EvalError::MissingEncoder(name))?;
        Ok((store, encoder.encode(query)?))
    }
}

/// Builds the retrieved set `D_r` for one query under `setting`.
pub fn build_setting(
    setting: &IrSetting,
    ctx: &SettingContext<'_>,
    gt: &GroundTruth,
) -> Result<BTreeSet<String>, EvalError> {
    let relevant = &gt.relevant;
    let negatives = || -> Vec<&str> {
        ctx.db
            .doc_ids()
            .filter(|id| !relevant.contains(*id))
            .collect()
    };
    match setting {
        IrSetting::Perfect => Ok(relevant.clone()),
        IrSetting::Noisy { n_random, seed } => {
            let pool = negatives();
            let mut out = relevant.clone();
            if *n_random >= pool.len() {
                out.extend(pool.iter().map(|s| s.to_string()));
            } else {
                let query = &gt.query;
                let mut rng = derived_rng(
                    *seed,
                    &[
                        b"noisy-ir",
                        query.qtype().as_str().as_bytes(),
                        query.category().as_bytes(),
                    ],
                );
                let picks = rand::seq::index::sample(&mut rng, pool.len(), *n_random);
                out.extend(picks.into_iter().map(|i| pool[i].to_string()));
            }
            Ok(out)
        }
        IrSetting::Damaging { n_top, metric } => {
            let (store, qv) = ctx.embedding("damaging", &gt.query)?;
            let mut out = relevant.clone();
            let candidates = store
                .rank_all(&qv, *metric)?
                .into_iter()
                .filter(|(id, _)| !relevant.contains(*id) && ctx.db.get(id).is_some())
                .take(*n_top);
            out.extend(candidates.map(|(id, _)| id.to_string()));
            Ok(out)
        }
        IrSetting::Full { retriever } => {
            let (store, qv) = ctx.embedding("full", &gt.query)?;
            let result = retrieve(retriever, store, &qv, ctx.selector)?;
            Ok(result
                .retrieved
                .into_iter()
                .filter(|id| ctx.db.get(id).is_some())
                .collect())
        }
    }
}

/// Per-query pipeline metrics.
///
/// Split fields are `None` where the split is undefined: the TP/FP accuracy and
/// delta splits when that subset is empty, and the total-error decomposition for MAX.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryMetrics {
    pub total_error: f64,
    pub total_error_tp: Option<f64>,
    pub total_error_fp: Option<f64>,
    pub total_error_fn: Option<f64>,
    pub delta_error: f64,
    pub delta_error_tp: Option<f64>,
    pub delta_error_fp: Option<f64>,
    pub accuracy: f64,
    pub accuracy_tp: Option<f64>,
    pub accuracy_fp: Option<f64>,
    /// MAX only: the reported witness attains the true maximum.
    pub max_hit: Option<bool>,
    pub tp: usize,
    pub fp: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

#[derive(Default)]
struct Tally {
    docs: usize,
    exact: usize,
    abs_dev: u64,
}

impl Tally {
    fn add(&mut self, a: u64, g: u64) {
        self.docs += 1;
        self.exact += usize::from(a == g);
        self.abs_dev += a.abs_diff(g);
    }

    fn accuracy(&self) -> Option<f64> {
        (self.docs > 0).then(|| self.exact as f64 / self.docs as f64)
    }

    fn delta(&self) -> Option<f64> {
        (self.docs > 0).then(|| self.abs_dev as f64 / self.docs as f64)
    }
}

/// Scores one query.
///
/// `answers` must cover `d_r`. Non-numeric answers count as 0 under
/// [`IndecisivePolicy::AsZero`] and are left out of accuracy and delta error under
/// [`IndecisivePolicy::Skip`]. For IN, answers are read as presence flags. `final_answer`
/// is `None` when the aggregate is undefined (MAX over no numeric answer).
pub fn eval_query(
    gt: &GroundTruth,
    d_r: &BTreeSet<String>,
    answers: &BTreeMap<String, IntermediateAnswer>,
    final_answer: Option<&QueryAnswer>,
    policy: IndecisivePolicy,
) -> Result<QueryMetrics, EvalError> {
    let qtype = gt.query.qtype();
    let coerce = |n: u64| match qtype {
        QueryType::In => u64::from(n >= 1),
        QueryType::Count | QueryType::Max => n,
    };
    let norm = gt.global.max(1) as f64;

    let (mut all, mut tp, mut fp) = (Tally::default(), Tally::default(), Tally::default());
    let mut tp_signed: i128 = 0;
    let mut fp_sum: u64 = 0;
    for doc_id in d_r {
        let answer = answers
            .get(doc_id)
            .ok_or_else(|| EvalError::MissingAnswer(doc_id.clone()))?;
        let a = match (answer.as_number(), policy) {
            (Some(n), _) => Some(coerce(n)),
            (None, IndecisivePolicy::AsZero) => Some(0),
            (None, IndecisivePolicy::Skip) => None,
        };
        let g = gt.value(doc_id);
        let is_tp = gt.relevant.contains(doc_id);
        if let Some(a) = a {
            all.add(a, g);
            if is_tp {
                tp.add(a, g);
                tp_signed += i128::from(a) - i128::from(g);
            } else {
                fp.add(a, g);
                fp_sum += a;
            }
        }
    }
    let n_tp = d_r.iter().filter(|d| gt.relevant.contains(*d)).count();
    let fn_docs: Vec<&String> = gt.relevant.iter().filter(|d| !d_r.contains(*d)).collect();

    let (total_error, tp_err, fp_err, fn_err, max_hit) = match qtype {
        QueryType::Count | QueryType::In => {
            let o = final_answer.map_or(0, |f| f.value);
            let fn_sum: u64 = fn_docs.iter().map(|d| gt.value(d)).sum();
            (
                o.abs_diff(gt.global) as f64 / norm,
                Some(tp_signed.unsigned_abs() as f64 / norm),
                Some(fp_sum as f64 / norm),
                Some(fn_sum as f64 / norm),
                None,
            )
        }
        QueryType::Max => {
            let witness = final_answer.and_then(|f| f.witness.as_deref());
            let found = witness.map_or(0, |w| gt.value(w));
            let hit = gt.global == 0 || witness.is_some_and(|w| gt.max_docs.contains(w));
            (
                found.abs_diff(gt.global) as f64 / norm,
                None,
                None,
                None,
                Some(hit),
            )
        }
    };

    Ok(QueryMetrics {
        total_error,
        total_error_tp: tp_err,
        total_error_fp: fp_err,
        total_error_fn: fn_err,
        delta_error: all.delta().unwrap_or(0.0),
        delta_error_tp: tp.delta(),
        delta_error_fp: fp.delta(),
        accuracy: all.accuracy().unwrap_or(1.0),
        accuracy_tp: tp.accuracy(),
        accuracy_fp: fp.accuracy(),
        max_hit,
        tp: n_tp,
        fp: d_r.len() - n_tp,
        fn_: fn_docs.len(),
    })
}

/// Micro (pooled) and macro (per-query averaged) precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalMetrics {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let retrieved = tp + fp;
    let relevant = tp + fn_;
    let p = if retrieved == 0 {
        if relevant == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / retrieved as f64
    };
    let r = if relevant == 0 {
        1.0
    } else {
        tp as f64 / relevant as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// `per_query` holds `(relevant, retrieved)` pairs.
pub fn retrieval_metrics(
    per_query: &[(BTreeSet<String>, BTreeSet<String>)],
) -> Result<RetrievalMetrics, EvalError> {
    if per_query.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for (relevant, retrieved) in per_query {
        let t = retrieved.intersection(relevant).count();
        let (f, n) = (retrieved.len() - t, relevant.len() - t);
        tp += t;
        fp += f;
        fn_ += n;
        let (p, r, f1) = prf(t, f, n);
        sp += p;
        sr += r;
        sf += f1;
    }
    let (mp, mr, mf) = prf(tp, fp, fn_);
    let n = per_query.len() as f64;
    Ok(RetrievalMetrics {
        micro_precision: mp,
        micro_recall: mr,
        micro_f1: mf,
        precision: sp / n,
        recall: sr / n,
        f1: sf / n,
    })
}

/// Mean and standard error (sample std / sqrt(n)); `None` without samples.
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, libm::sqrt(var) / libm::sqrt(n)))
}

/// One value per metric, averaged across queries.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSummary {
    pub total_error: Option<f64>,
    pub total_error_tp: Option<f64>,
    pub total_error_fp: Option<f64>,
    pub total_error_fn: Option<f64>,
    pub delta_error: Option<f64>,
    pub delta_error_tp: Option<f64>,
    pub delta_error_fp: Option<f64>,
    pub accuracy: Option<f64>,
    pub accuracy_tp: Option<f64>,
    pub accuracy_fp: Option<f64>,
    pub max_hit: Option<f64>,
}

/// Averages per-query metrics; optional fields average over the queries that define them.
pub fn summarize(per_query: &[QueryMetrics]) -> (MetricSummary, MetricSummary) {
    let mut mean = MetricSummary::default();
    let mut stderr = MetricSummary::default();
    let mut put = |get: &dyn Fn(&QueryMetrics) -> Option<f64>,
                   set: &dyn Fn(&mut MetricSummary) -> &mut Option<f64>| {
        let xs: Vec<f64> = per_query.iter().filter_map(get).collect();
        if let Some((m, s)) = mean_stderr(&xs) {
            *set(&mut mean) = Some(m);
            *set(&mut stderr) = Some(s);
        }
    };
    put(&|m| Some(m.total_error), &|s| &mut s.total_error);
    put(&|m| m.total_error_tp, &|s| &mut s.total_error_tp);
    put(&|m| m.total_error_fp, &|s| &mut s.total_error_fp);
    put(&|m| m.total_error_fn, &|s| &mut s.total_error_fn);
    put(&|m| Some(m.delta_error), &|s| &mut s.delta_error);
    put(&|m| m.delta_error_tp, &|s| &mut s.delta_error_tp);
    put(&|m| m.delta_error_fp, &|s| &mut s.delta_error_fp);
    put(&|m| Some(m.accuracy), &|s| &mut s.accuracy);
    put(&|m| m.accuracy_tp, &|s| &mut s.accuracy_tp);
    put(&|m| m.accuracy_fp, &|s| &mut s.accuracy_fp);
    put(&|m| m.max_hit.map(|h| if h { 1.0 } else { 0.0 }), &|s| &mut s.max_hit);
    (mean, stderr)
}
