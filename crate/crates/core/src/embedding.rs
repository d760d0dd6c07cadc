//! Static document embeddings and similarity scoring.
//!
//! Document vectors never depend on a query: the only query-side input is the
//! vector produced by a [`QueryEncoder`] at lookup time.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::MultimodalDatabase;
use crate::query::Query;
use crate::seed::derived_rng;

/// Generator id recorded in store headers for stores built by [`synth_generate`].
pub const SYNTH_GENERATOR_CHACHA8_V1: u8 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding for `{0}` has a non-finite component")]
    NonFinite(String),
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("no query embedding for category `{0}`")]
    UnknownCategory(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(&'static str),
    #[error("query encoder failed: {0}")]
    Encoder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SimilarityMetric {
    #[default]
    Dot,
    Cosine,
}

impl SimilarityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMetric::Dot => "dot",
            SimilarityMetric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Scores a query vector against a document vector.
pub fn score(metric: SimilarityMetric, q: &[f32], d: &[f32]) -> Result<f64, EmbeddingError> {
    if q.len() != d.len() {
        return Err(EmbeddingError::DimMismatch {
            expected: q.len(),
            found: d.len(),
        });
    }
    match metric {
        SimilarityMetric::Dot => Ok(dot(q, d)),
        SimilarityMetric::Cosine => {
            let (nq, nd) = (l2_norm(q), l2_norm(d));
            if nq == 0.0 || nd == 0.0 {
                return Err(EmbeddingError::ZeroVector);
            }
            Ok((dot(q, d) / (nq * nd)).clamp(-1.0, 1.0))
        }
    }
}

/// Descending by score, ascending by id on ties. Scores are finite; `-0.0 == 0.0`.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// An immutable, id-sorted set of equal-length document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    metric_hint: SimilarityMetric,
    generator: u8,
}

impl EmbeddingStore {
    /// Builds a store from `(id, vector)` pairs. Entries are kept sorted by id.
    pub fn from_entries<I>(
        dim: usize,
        metric_hint: SimilarityMetric,
        entries: I,
    ) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut entries: Vec<(String, Vec<f32>)> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        let mut norms = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            if v.len() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite(id));
            }
            if ids.last() == Some(&id) {
                return Err(EmbeddingError::DuplicateId(id));
            }
            norms.push(l2_norm(&v));
            data.extend_from_slice(&v);
            ids.push(id);
        }
        Ok(Self {
            dim,
            ids,
            data,
            norms,
            metric_hint,
            generator: 0,
        })
    }

    pub fn with_generator(mut self, generator: u8) -> Self {
        self.generator = generator;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn metric_hint(&self) -> SimilarityMetric {
        self.metric_hint
    }

    /// Id of the algorithm that generated the vectors; 0 when unknown or external.
    pub fn generator(&self) -> u8 {
        self.generator
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index_of(id).is_some()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.vector(i))
    }

    pub fn norm(&self, id: &str) -> Option<f64> {
        self.index_of(id).map(|i| self.norms[i])
    }

    fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `(id, vector)` pairs in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.vector(i)))
    }

    fn check_query(&self, q: &[f32]) -> Result<(), EmbeddingError> {
        if q.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Scores every document in id order.
    ///
    /// Under cosine a stored zero vector scores 0; a zero query is an error.
    pub fn scores(&self, q: &[f32], metric: SimilarityMetric) -> Result<Vec<f64>, EmbeddingError> {
        self.check_query(q)?;
        let qnorm = match metric {
            SimilarityMetric::Dot => 1.0,
            SimilarityMetric::Cosine => {
                let n = l2_norm(q);
                if n == 0.0 {
                    return Err(EmbeddingError::ZeroVector);
                }
                n
            }
        };
        Ok((0..self.len())
            .map(|i| {
                let raw = dot(q, self.vector(i));
                match metric {
                    SimilarityMetric::Dot => raw,
                    SimilarityMetric::Cosine if self.norms[i] == 0.0 => 0.0,
                    SimilarityMetric::Cosine => (raw / (qnorm * self.norms[i])).clamp(-1.0, 1.0),
                }
            })
            .collect())
    }

    /// Every document with its score, best first; ties go to the smaller id.
    pub fn rank_all(
        &self,
        q: &[f32],
        metric: SimilarityMetric,
    ) -> Result<Vec<(&str, f64)>, EmbeddingError> {
        let scores = self.scores(q, metric)?;
        let mut ranked: Vec<(&str, f64)> = self.ids.iter().map(String::as_str).zip(scores).collect();
        ranked.sort_by(|a, b| rank_order(*a, *b));
        Ok(ranked)
    }
}

/// Maps a query to its embedding in the store's space.
pub trait QueryEncoder: Sync {
    fn encode(&self, query: &Query) -> Result<Vec<f32>, EmbeddingError>;
}

/// Query encoder backed by one stored vector per category.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEncoder {
    anchors: EmbeddingStore,
}

impl AnchorEncoder {
    pub fn new(anchors: EmbeddingStore) -> Self {
        Self { anchors }
    }

    pub fn anchors(&self) -> &EmbeddingStore {
        &self.anchors
    }

    pub fn into_store(self) -> EmbeddingStore {
        self.anchors
    }
}

impl QueryEncoder for AnchorEncoder {
    fn encode(&self, query: &Query) -> Result<Vec<f32>, EmbeddingError> {
        self.anchors
            .get(query.category())
            .map(<[f32]>::to_vec)
            .ok_or_else(|| EmbeddingError::UnknownCategory(query.category().to_string()))
    }
}

/// Parameters of the planted-similarity generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthParams {
    pub dim: usize,
    /// Weight of each annotated instance's anchor in the document vector.
    pub signal_weight: f64,
    /// Standard deviation of the per-document noise, relative to a unit vector.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Gram-Schmidt the category anchors; requires at most `dim` categories.
    pub orthogonal_anchors: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            dim: 64,
            signal_weight: 1.0,
            noise_sigma: 0.0,
            seed: 0,
            orthogonal_anchors: true,
        }
    }
}

fn gaussian(rng: &mut impl rand::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize64(v: &mut [f64]) -> f64 {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

/// Generates a planted-similarity store for `db` and the matching query encoder.
///
/// Each vocabulary category gets a seeded unit anchor. A document's vector is
/// `normalize(sum_c count_c * signal_weight * anchor_c + noise_sigma * eps)` where
/// `eps ~ N(0, I / dim)` is seeded per document id, so vectors do not depend on
/// the rest of the corpus. Documents with no instances and no noise stay zero.
pub fn synth_generate(
    db: &MultimodalDatabase,
    params: &SynthParams,
) -> Result<(EmbeddingStore, AnchorEncoder), EmbeddingError> {
    let dim = params.dim;
    if dim < 2 {
        return Err(EmbeddingError::InvalidParams("dim must be at least 2"));
    }
    if !(params.signal_weight.is_finite() && params.signal_weight >= 0.0) {
        return Err(EmbeddingError::InvalidParams("signal_weight must be finite and >= 0"));
    }
    if !(params.noise_sigma.is_finite() && params.noise_sigma >= 0.0) {
        return Err(EmbeddingError::InvalidParams("noise_sigma must be finite and >= 0"));
    }
    if params.orthogonal_anchors && db.vocabulary().len() > dim {
        return Err(EmbeddingError::InvalidParams(
            "orthogonal anchors need at most `dim` categories",
        ));
    }

    let mut anchors: Vec<(String, Vec<f64>)> = Vec::with_capacity(db.vocabulary().len());
    for category in db.vocabulary() {
        let mut rng = derived_rng(params.seed, &[b"anchor", category.as_bytes()]);
        let mut v = gaussian(&mut rng, dim);
        if params.orthogonal_anchors {
            for (_, prev) in &anchors {
                let proj: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= proj * b);
            }
        }
        if normalize64(&mut v) < 1e-9 {
            return Err(EmbeddingError::InvalidParams("degenerate anchor draw"));
        }
        anchors.push((category.clone(), v));
    }

    let noise_scale = params.noise_sigma / libm::sqrt(dim as f64);
    let mut docs = Vec::with_capacity(db.len());
    for doc in db.documents() {
        let mut v = vec_zeros(dim);
        for (category, count) in doc.counts() {
            let anchor = &anchors
                .iter()
                .find(|(c, _)| c == category)
                .expect("every document category is in the vocabulary")
                .1;
            let w = *count as f64 * params.signal_weight;
            v.iter_mut().zip(anchor).for_each(|(a, b)| *a += w * b);
        }
        if noise_scale > 0.0 {
            let mut rng = derived_rng(params.seed, &[b"doc", doc.doc_id().as_bytes()]);
            let eps = gaussian(&mut rng, dim);
            v.iter_mut().zip(&eps).for_each(|(a, e)| *a += noise_scale * e);
        }
        normalize64(&mut v);
        docs.push((doc.doc_id().to_string(), to_f32(&v)));
    }

    let store = EmbeddingStore::from_entries(dim, SimilarityMetric::Cosine, docs)?
        .with_generator(SYNTH_GENERATOR_CHACHA8_V1);
    let anchor_store = EmbeddingStore::from_entries(
        dim,
        SimilarityMetric::Cosine,
        anchors.into_iter().map(|(c, v)| (c, to_f32(&v))),
    )?
    .with_generator(SYNTH_GENERATOR_CHACHA8_V1);
    Ok((store, AnchorEncoder::new(anchor_store)))
}

fn vec_zeros(dim: usize) -> Vec<f64> {
    alloc::vec![0.0; dim]
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::query::QueryType;
    use alloc::vec;
    use proptest::prelude::*;

    pub(crate) fn toyvec() -> EmbeddingStore {
        EmbeddingStore::from_entries(
            2,
            SimilarityMetric::Cosine,
            [
                ("a".to_string(), vec![1.0, 0.0]),
                ("b".to_string(), vec![0.0, 1.0]),
                ("c".to_string(), vec![0.8, 0.6]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let c = SimilarityMetric::Cosine;
        assert!((score(c, &[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score(c, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((score(c, &[1.0, 0.0], &[0.8, 0.6]).unwrap() - 0.8).abs() < 1e-6);
    }

    #[test]
    fn score_errors() {
        assert_eq!(
            score(SimilarityMetric::Dot, &[1.0], &[1.0, 2.0]),
            Err(EmbeddingError::DimMismatch {
                expected: 1,
                found: 2
            })
        );
        assert_eq!(
            score(SimilarityMetric::Cosine, &[0.0, 0.0], &[1.0, 2.0]),
            Err(EmbeddingError::ZeroVector)
        );
    }

    #[test]
    fn rank_toyvec() {
        let store = toyvec();
        let ranked = store.rank_all(&[1.0, 0.0], SimilarityMetric::Cosine).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|r| r.0).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        assert!((ranked[0].1 - 1.0).abs() < 1e-9);
        assert!((ranked[1].1 - 0.8).abs() < 1e-6);
        assert!(ranked[2].1.abs() < 1e-12);
    }

    #[test]
    fn rank_empty_and_ties() {
        let empty = EmbeddingStore::from_entries(3, SimilarityMetric::Dot, []).unwrap();
        assert!(empty.rank_all(&[1.0, 0.0, 0.0], SimilarityMetric::Dot).unwrap().is_empty());

        let tied = EmbeddingStore::from_entries(
            2,
            SimilarityMetric::Dot,
            [("z".to_string(), vec![1.0, 1.0]), ("m".to_string(), vec![1.0, 1.0])],
        )
        .unwrap();
        let ranked = tied.rank_all(&[1.0, 0.0], SimilarityMetric::Dot).unwrap();
        assert_eq!(ranked[0].0, "m");
        assert_eq!(ranked[1].0, "z");
    }

    #[test]
    fn store_rejects_bad_entries() {
        assert!(matches!(
            EmbeddingStore::from_entries(2, SimilarityMetric::Dot, [("a".into(), vec![1.0])]),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert!(matches!(
            EmbeddingStore::from_entries(1, SimilarityMetric::Dot, [("a".into(), vec![f32::NAN])]),
            Err(EmbeddingError::NonFinite(_))
        ));
        assert!(matches!(
            EmbeddingStore::from_entries(
                1,
                SimilarityMetric::Dot,
                [("a".into(), vec![1.0]), ("a".into(), vec![2.0])]
            ),
            Err(EmbeddingError::DuplicateId(_))
        ));
        let store = toyvec();
        assert!(store.rank_all(&[1.0], SimilarityMetric::Dot).is_err());
        assert_eq!(
            store.rank_all(&[0.0, 0.0], SimilarityMetric::Cosine).unwrap_err(),
            EmbeddingError::ZeroVector
        );
    }

    #[test]
    fn norm_cache_matches() {
        let store = toyvec();
        for (id, v) in store.iter() {
            let n = libm::sqrt(v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>());
            assert!((store.norm(id).unwrap() - n).abs() <= 1e-6 * n.max(1.0));
        }
    }

    fn single_category_db() -> MultimodalDatabase {
        MultimodalDatabase::from_documents([
            Document::new("p1").unwrap().with_count("dog", 2).unwrap(),
            Document::new("p2").unwrap().with_count("cat", 1).unwrap(),
            Document::new("p3").unwrap().with_count("cat", 4).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn planted_noiseless_single_category() {
        let db = single_category_db();
        let params = SynthParams {
            dim: 8,
            ..SynthParams::default()
        };
        let (store, enc) = synth_generate(&db, &params).unwrap();
        let dog = enc.encode(&Query::new(QueryType::Count, "dog").unwrap()).unwrap();
        let cat = enc.encode(&Query::new(QueryType::Count, "cat").unwrap()).unwrap();
        let c = SimilarityMetric::Cosine;
        assert!((score(c, &dog, store.get("p1").unwrap()).unwrap() - 1.0).abs() < 1e-6);
        assert!((score(c, &cat, store.get("p3").unwrap()).unwrap() - 1.0).abs() < 1e-6);
        // orthogonalized anchors: a doc without the category scores ~0
        assert!(score(c, &dog, store.get("p2").unwrap()).unwrap().abs() < 1e-6);
        assert!(score(c, &cat, store.get("p1").unwrap()).unwrap().abs() < 1e-6);
        assert_eq!(store.generator(), SYNTH_GENERATOR_CHACHA8_V1);
    }

    #[test]
    fn synth_is_deterministic() {
        let db = single_category_db();
        let params = SynthParams {
            dim: 16,
            noise_sigma: 0.5,
            seed: 42,
            ..SynthParams::default()
        };
        let (a, ea) = synth_generate(&db, &params).unwrap();
        let (b, eb) = synth_generate(&db, &params).unwrap();
        let bits = |s: &EmbeddingStore| -> Vec<u32> {
            s.iter().flat_map(|(_, v)| v.iter().map(|x| x.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ea, eb);
        let (c, _) = synth_generate(&db, &SynthParams { seed: 43, ..params }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn synth_rejects_bad_params() {
        let db = single_category_db();
        for params in [
            SynthParams { dim: 1, ..SynthParams::default() },
            SynthParams { noise_sigma: -1.0, ..SynthParams::default() },
            SynthParams { signal_weight: f64::NAN, ..SynthParams::default() },
        ] {
            assert!(matches!(
                synth_generate(&db, &params),
                Err(EmbeddingError::InvalidParams(_))
            ));
        }
    }

    fn brute_rank(store: &EmbeddingStore, q: &[f32], metric: SimilarityMetric) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = store
            .iter()
            .map(|(id, v)| {
                let d: f64 = q.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
                let s = match metric {
                    SimilarityMetric::Dot => d,
                    SimilarityMetric::Cosine => {
                        let nq = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                        let nv = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                        if nv == 0.0 { 0.0 } else { (d / (nq * nv)).clamp(-1.0, 1.0) }
                    }
                };
                (id.to_string(), s)
            })
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn arb_store() -> impl Strategy<Value = (EmbeddingStore, Vec<f32>)> {
        (1usize..6, 0usize..40).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(-4i8..5, dim), n),
                proptest::collection::vec(-4i8..5, dim),
            )
                .prop_map(move |(vs, q)| {
                    let entries = vs.into_iter().enumerate().map(|(i, v)| {
                        (alloc::format!("doc{:03}", (i * 7) % 1000), v.into_iter().map(f32::from).collect())
                    });
                    let store = EmbeddingStore::from_entries(dim, SimilarityMetric::Dot, entries).unwrap();
                    (store, q.into_iter().map(f32::from).collect())
                })
        })
    }

    proptest! {
        #[test]
        fn rank_all_matches_brute_force((store, q) in arb_store()) {
            let ranked = store.rank_all(&q, SimilarityMetric::Dot).unwrap();
            let brute = brute_rank(&store, &q, SimilarityMetric::Dot);
            prop_assert_eq!(ranked.len(), brute.len());
            for (r, b) in ranked.iter().zip(&brute) {
                prop_assert_eq!(r.0, b.0.as_str());
                prop_assert_eq!(r.1, b.1);
            }
            if q.iter().any(|x| *x != 0.0) {
                let ranked = store.rank_all(&q, SimilarityMetric::Cosine).unwrap();
                let brute = brute_rank(&store, &q, SimilarityMetric::Cosine);
                for (r, b) in ranked.iter().zip(&brute) {
                    prop_assert_eq!(r.0, b.0.as_str());
                    prop_assert!(r.1 >= -1.0 && r.1 <= 1.0);
                }
            }
        }

        #[test]
        fn positive_scaling_preserves_ranking((store, q) in arb_store(), lambda in 1u8..9) {
            let scaled: Vec<f32> = q.iter().map(|x| x * f32::from(lambda)).collect();
            let a: Vec<&str> = store.rank_all(&q, SimilarityMetric::Dot).unwrap().into_iter().map(|r| r.0).collect();
            let b: Vec<&str> = store.rank_all(&scaled, SimilarityMetric::Dot).unwrap().into_iter().map(|r| r.0).collect();
            prop_assert_eq!(a, b);
            if q.iter().any(|x| *x != 0.0) {
                // cosine ties between parallel docs may differ in the last ulp, so compare score profiles
                let a = store.rank_all(&q, SimilarityMetric::Cosine).unwrap();
                let b = store.rank_all(&scaled, SimilarityMetric::Cosine).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x.1 - y.1).abs() < 1e-9);
                    if x.0 != y.0 {
                        prop_assert!((x.1 - store.rank_all(&q, SimilarityMetric::Cosine).unwrap().iter().find(|r| r.0 == y.0).unwrap().1).abs() < 1e-9);
                    }
                }
            }
            for (_, d) in store.iter() {
                let s1 = score(SimilarityMetric::Dot, &q, d).unwrap();
                let s2 = score(SimilarityMetric::Dot, &scaled, d).unwrap();
                prop_assert!((s2 - f64::from(lambda) * s1).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_self_is_one(v in proptest::collection::vec(-100.0f32..100.0, 1..32)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let s = score(SimilarityMetric::Cosine, &v, &v).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
