//! Candidate selection: TopK, threshold, the trainable neural selector, their
//! union (mixed), and a ranked windowed scan with an early-stop tolerance.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::corpus::MultimodalDatabase;
use crate::embedding::{l2_norm, EmbeddingError, EmbeddingStore, QueryEncoder, SimilarityMetric};
use crate::query::Query;
use crate::seed::derived_rng;

/// Default cosine threshold, the middle of the range that works for CLIP-style models.
pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_MIXED_K: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieverError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("K must be at least 1")]
    ZeroK,
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("threshold must be finite")]
    NonFiniteTau,
    #[error("strategy `{0}` needs a trained selector")]
    MissingSelector(Strategy),
    #[error("selector expects dimension {expected}, got {found}")]
    SelectorDim { expected: usize, found: usize },
    #[error("document `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("training data has no positive pairs")]
    NoPositives,
    #[error("invalid selector: {0}")]
    InvalidSelector(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Strategy {
    TopK,
    Threshold,
    Neural,
    #[default]
    Mixed,
    /// Ranked scan in windows, stopping once a window yields few relevant documents.
    Batched,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TopK => "topk",
            Strategy::Threshold => "threshold",
            Strategy::Neural => "neural",
            Strategy::Mixed => "mixed",
            Strategy::Batched => "batched",
        }
    }

    /// Ranking metric used when the configuration leaves it open.
    pub fn default_metric(self) -> SimilarityMetric {
        match self {
            Strategy::Threshold => SimilarityMetric::Cosine,
            _ => SimilarityMetric::Dot,
        }
    }

    pub fn needs_selector(self) -> bool {
        matches!(self, Strategy::Neural | Strategy::Mixed | Strategy::Batched)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrieverConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub tau: f64,
    pub window: usize,
    pub tolerance: usize,
    /// Ranking metric for topk, mixed and batched; `None` uses the strategy default.
    pub metric: Option<SimilarityMetric>,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mixed,
            k: DEFAULT_MIXED_K,
            tau: DEFAULT_TAU,
            window: 64,
            tolerance: 0,
            metric: None,
        }
    }
}

impl RetrieverConfig {
    pub fn metric(&self) -> SimilarityMetric {
        self.metric.unwrap_or_else(|| self.strategy.default_metric())
    }
}

/// The retrieved subset of the corpus with the scores that selected it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub retrieved: BTreeSet<String>,
    pub scores: BTreeMap<String, f64>,
    /// Documents examined by a batched scan; the store size otherwise.
    pub scanned: usize,
}

impl RetrievalResult {
    fn insert(&mut self, id: &str, score: f64) {
        self.retrieved.insert(id.to_string());
        self.scores.insert(id.to_string(), score);
    }
}

pub fn retrieve_topk(
    store: &EmbeddingStore,
    q: &[f32],
    k: usize,
    metric: SimilarityMetric,
) -> Result<RetrievalResult, RetrieverError> {
    if k == 0 {
        return Err(RetrieverError::ZeroK);
    }
    let mut out = RetrievalResult {
        scanned: store.len(),
        ..RetrievalResult::default()
    };
    for (id, s) in store.rank_all(q, metric)?.into_iter().take(k) {
        out.insert(id, s);
    }
    Ok(out)
}

/// Every document whose cosine similarity with the query is strictly above `tau`.
pub fn retrieve_threshold(
    store: &EmbeddingStore,
    q: &[f32],
    tau: f64,
) -> Result<RetrievalResult, RetrieverError> {
    if !tau.is_finite() {
        return Err(RetrieverError::NonFiniteTau);
    }
    let scores = store.scores(q, SimilarityMetric::Cosine)?;
    let mut out = RetrievalResult {
        scanned: store.len(),
        ..RetrievalResult::default()
    };
    for (id, s) in store.ids().iter().zip(scores) {
        if s > tau {
            out.insert(id, s);
        }
    }
    Ok(out)
}

/// Hyper-parameters for [`train_selector`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectorHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight both classes equally in the loss instead of weighting every pair equally.
    pub balance_classes: bool,
}

impl Default for SelectorHyper {
    fn default() -> Self {
        Self {
            hidden: 8,
            epochs: 200,
            learning_rate: 0.05,
            seed: 0,
            balance_classes: true,
        }
    }
}

/// One-hidden-layer binary relevance classifier over `normalize(q) * normalize(d)`.
///
/// `p = sigmoid(out_w . tanh(W^T x + hidden_b) + out_b)`; `hidden_w` is `dim x hidden`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    dim: usize,
    hidden: usize,
    hidden_w: Vec<f32>,
    hidden_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: f32,
}

impl SelectorModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            hidden_w: vec![0.0; dim * hidden],
            hidden_b: vec![0.0; hidden],
            out_w: vec![0.0; hidden],
            out_b: 0.0,
        }
    }

    pub fn from_parts(
        dim: usize,
        hidden: usize,
        hidden_w: Vec<f32>,
        hidden_b: Vec<f32>,
        out_w: Vec<f32>,
        out_b: f32,
    ) -> Result<Self, RetrieverError> {
        if dim == 0 || hidden == 0 {
            return Err(RetrieverError::InvalidSelector("dim and hidden width must be positive"));
        }
        if hidden_w.len() != dim * hidden || hidden_b.len() != hidden || out_w.len() != hidden {
            return Err(RetrieverError::InvalidSelector("weight shapes do not match dim/hidden"));
        }
        let finite = hidden_w
            .iter()
            .chain(&hidden_b)
            .chain(&out_w)
            .chain(core::iter::once(&out_b))
            .all(|w| w.is_finite());
        if !finite {
            return Err(RetrieverError::InvalidSelector("non-finite weight"));
        }
        Ok(Self {
            dim,
            hidden,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn hidden_w(&self) -> &[f32] {
        &self.hidden_w
    }

    pub fn hidden_b(&self) -> &[f32] {
        &self.hidden_b
    }

    pub fn out_w(&self) -> &[f32] {
        &self.out_w
    }

    pub fn out_b(&self) -> f32 {
        self.out_b
    }

    /// `dim * hidden + 2 * hidden + 1`.
    pub fn param_count(&self) -> usize {
        self.dim * self.hidden + 2 * self.hidden + 1
    }

    fn forward(&self, x: &[f64]) -> f64 {
        let mut z = f64::from(self.out_b);
        for j in 0..self.hidden {
            let mut a = f64::from(self.hidden_b[j]);
            for (i, xi) in x.iter().enumerate() {
                a += xi * f64::from(self.hidden_w[i * self.hidden + j]);
            }
            z += f64::from(self.out_w[j]) * libm::tanh(a);
        }
        sigmoid(z)
    }

    /// Relevance probability and the decision `p > 0.5`.
    pub fn predict(&self, q: &[f32], d: &[f32]) -> Result<(f64, bool), RetrieverError> {
        for v in [q, d] {
            if v.len() != self.dim {
                return Err(RetrieverError::SelectorDim {
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        let p = self.forward(&pair_features(q, d));
        Ok((p, p > 0.5))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

fn unit(v: &[f32]) -> Vec<f64> {
    let n = l2_norm(v);
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| f64::from(*x) / n).collect()
    }
}

/// Elementwise product of the L2-normalized query and document vectors, scaled
/// by `sqrt(dim)` so that the features sum to `sqrt(dim) * cosine` and single
/// coordinates stay of order one.
pub fn pair_features(q: &[f32], d: &[f32]) -> Vec<f64> {
    let scale = libm::sqrt(q.len() as f64);
    unit(q).iter().zip(unit(d)).map(|(a, b)| scale * a * b).collect()
}

/// Adam optimizer state for one parameter block.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], step: i32) {
        let c1 = 1.0 - libm::pow(Self::BETA1, f64::from(step));
        let c2 = 1.0 - libm::pow(Self::BETA2, f64::from(step));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
        }
    }
}

/// Trains a selector on every (query, document) pair with full-batch Adam on
/// binary cross-entropy. A pair is positive iff the document contains
/// the query's category. With `balance_classes` the positive and negative halves
/// of the loss are weighted equally. Deterministic for a given seed.
pub fn train_selector(
    store: &EmbeddingStore,
    db: &MultimodalDatabase,
    encoder: &dyn QueryEncoder,
    train_queries: &[Query],
    hyper: &SelectorHyper,
) -> Result<SelectorModel, RetrieverError> {
    if hyper.hidden == 0 {
        return Err(RetrieverError::InvalidSelector("hidden width must be positive"));
    }
    if !(hyper.learning_rate.is_finite() && hyper.learning_rate > 0.0) {
        return Err(RetrieverError::InvalidSelector("learning rate must be positive"));
    }
    let dim = store.dim();
    let hidden = hyper.hidden;

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for query in train_queries {
        let qv = encoder.encode(query)?;
        if qv.len() != dim {
            return Err(EmbeddingError::DimMismatch {
                expected: dim,
                found: qv.len(),
            }
            .into());
        }
        let relevant = db.ground_truth(query).relevant;
        for doc_id in db.doc_ids() {
            let dv = store
                .get(doc_id)
                .ok_or_else(|| RetrieverError::MissingEmbedding(doc_id.to_string()))?;
            features.extend(pair_features(&qv, dv));
            labels.push(if relevant.contains(doc_id) { 1.0 } else { 0.0 });
        }
    }
    let n = labels.len();
    let positives = labels.iter().filter(|y| **y > 0.5).count();
    if positives == 0 {
        return Err(RetrieverError::NoPositives);
    }
    let (w_pos, w_neg) = if hyper.balance_classes && positives < n {
        (0.5 / positives as f64, 0.5 / (n - positives) as f64)
    } else {
        (1.0 / n as f64, 1.0 / n as f64)
    };

    let mut rng = derived_rng(hyper.seed, &[b"selector-init"]);
    let limit_hidden = 0.1 * libm::sqrt(6.0 / (dim + hidden) as f64);
    let limit_out = libm::sqrt(6.0 / (hidden + 1) as f64);
    let mut w: Vec<f64> = (0..dim * hidden)
        .map(|_| rng.random_range(-limit_hidden..limit_hidden))
        .collect();
    let mut b = vec![0.0f64; hidden];
    let mut v: Vec<f64> = (0..hidden)
        .map(|_| rng.random_range(-limit_out..limit_out))
        .collect();
    let mut c = 0.0f64;

    let mut act = vec![0.0f64; n * hidden];
    let mut grad_w = vec![0.0f64; dim * hidden];
    let mut grad_b = vec![0.0f64; hidden];
    let mut grad_v = vec![0.0f64; hidden];
    let lr = hyper.learning_rate;
    let (mut adam_w, mut adam_b) = (Adam::new(dim * hidden, lr), Adam::new(hidden, lr));
    let (mut adam_v, mut adam_c) = (Adam::new(hidden, lr), Adam::new(1, lr));
    let mut step = 0;
    for _ in 0..hyper.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        grad_v.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_c = 0.0;
        for s in 0..n {
            let x = &features[s * dim..(s + 1) * dim];
            let h = &mut act[s * hidden..(s + 1) * hidden];
            let mut z = c;
            for j in 0..hidden {
                let mut a = b[j];
                for (i, xi) in x.iter().enumerate() {
                    a += xi * w[i * hidden + j];
                }
                h[j] = libm::tanh(a);
                z += v[j] * h[j];
            }
            // d(BCE)/dz for a sigmoid output
            let weight = if labels[s] > 0.5 { w_pos } else { w_neg };
            let dz = (sigmoid(z) - labels[s]) * weight;
            grad_c += dz;
            for j in 0..hidden {
                grad_v[j] += dz * h[j];
                let da = dz * v[j] * (1.0 - h[j] * h[j]);
                grad_b[j] += da;
                for (i, xi) in x.iter().enumerate() {
                    grad_w[i * hidden + j] += da * xi;
                }
            }
        }
        step += 1;
        adam_w.update(&mut w, &grad_w, step);
        adam_b.update(&mut b, &grad_b, step);
        adam_v.update(&mut v, &grad_v, step);
        adam_c.update(core::slice::from_mut(&mut c), &[grad_c], step);
    }

    let f32s = |xs: &[f64]| xs.iter().map(|x| *x as f32).collect::<Vec<f32>>();
    SelectorModel::from_parts(dim, hidden, f32s(&w), f32s(&b), f32s(&v), c as f32)
}

pub fn retrieve_neural(
    store: &EmbeddingStore,
    q: &[f32],
    model: &SelectorModel,
) -> Result<RetrievalResult, RetrieverError> {
    let mut out = RetrievalResult {
        scanned: store.len(),
        ..RetrievalResult::default()
    };
    for (id, d) in store.iter() {
        let (p, relevant) = model.predict(q, d)?;
        if relevant {
            out.insert(id, p);
        }
    }
    Ok(out)
}

/// Union of the top `k` and the selector's picks, scored by `metric`.
pub fn retrieve_mixed(
    store: &EmbeddingStore,
    q: &[f32],
    model: &SelectorModel,
    k: usize,
    metric: SimilarityMetric,
) -> Result<RetrievalResult, RetrieverError> {
    let top = retrieve_topk(store, q, k, metric)?;
    let neural = retrieve_neural(store, q, model)?;
    let mut out = RetrievalResult {
        scanned: store.len(),
        ..RetrievalResult::default()
    };
    for (id, s) in store.rank_all(q, metric)? {
        if top.retrieved.contains(id) || neural.retrieved.contains(id) {
            out.insert(id, s);
        }
    }
    Ok(out)
}

/// Walks the ranking in windows of `window` documents, keeping the selector's
/// picks, and stops after the first window with at most `tolerance` picks
/// (that window's picks are kept).
pub fn retrieve_batched(
    store: &EmbeddingStore,
    q: &[f32],
    model: &SelectorModel,
    window: usize,
    tolerance: usize,
    metric: SimilarityMetric,
) -> Result<RetrievalResult, RetrieverError> {
    if window == 0 {
        return Err(RetrieverError::ZeroWindow);
    }
    let ranked = store.rank_all(q, metric)?;
    let mut out = RetrievalResult::default();
    for chunk in ranked.chunks(window) {
        let mut picked = 0;
        for (id, s) in chunk {
            let d = store.get(id).expect("ranked ids come from the store");
            if model.predict(q, d)?.1 {
                out.insert(id, *s);
                picked += 1;
            }
        }
        out.scanned += chunk.len();
        if picked <= tolerance {
            break;
        }
    }
    Ok(out)
}

/// Runs the configured strategy.
pub fn retrieve(
    config: &RetrieverConfig,
    store: &EmbeddingStore,
    q: &[f32],
    model: Option<&SelectorModel>,
) -> Result<RetrievalResult, RetrieverError> {
    let metric = config.metric();
    let need = || model.ok_or(RetrieverError::MissingSelector(config.strategy));
    match config.strategy {
        Strategy::TopK => retrieve_topk(store, q, config.k, metric),
        Strategy::Threshold => retrieve_threshold(store, q, config.tau),
        Strategy::Neural => retrieve_neural(store, q, need()?),
        Strategy::Mixed => retrieve_mixed(store, q, need()?, config.k, metric),
        Strategy::Batched => retrieve_batched(
            store,
            q,
            need()?,
            config.window,
            config.tolerance,
            metric,
        ),
    }
}
