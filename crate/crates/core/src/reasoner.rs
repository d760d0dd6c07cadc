//! Per-document reasoning: the intermediate answer for one (query, document) pair.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::Document;
use crate::embedding::{score, EmbeddingStore, QueryEncoder, SimilarityMetric};
use crate::query::{Query, QueryType};
use crate::seed::derived_rng;

/// Non-numeric answers recognised by [`parse_answer`], longest first.
pub const INDECISIVE_TOKENS: [&str; 5] = ["a lot", "several", "many", "some", "few"];

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AnswerKind {
    Number(u64),
    Indecisive(String),
    Failed(String),
}

/// A reasoner's output for one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntermediateAnswer {
    pub doc_id: String,
    pub kind: AnswerKind,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub raw_text: Option<String>,
}

impl IntermediateAnswer {
    pub fn number(doc_id: impl Into<String>, n: u64) -> Self {
        Self {
            doc_id: doc_id.into(),
            kind: AnswerKind::Number(n),
            raw_text: None,
        }
    }

    pub fn indecisive(doc_id: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            kind: AnswerKind::Indecisive(token.into()),
            raw_text: None,
        }
    }

    pub fn failed(doc_id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            kind: AnswerKind::Failed(reason.into()),
            raw_text: None,
        }
    }

    pub fn as_number(&self) -> Option<u64> {
        match self.kind {
            AnswerKind::Number(n) => Some(n),
            _ => None,
        }
    }
}

/// Reads a count out of free-form model text.
///
/// The first integer (digits, or a number word up to twenty) wins; otherwise an
/// indecisive token such as "many"; otherwise the answer is `failed("unparseable")`.
pub fn parse_answer(doc_id: &str, text: &str) -> IntermediateAnswer {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let number = words.iter().find_map(|w| {
        if w.bytes().all(|b| b.is_ascii_digit()) {
            w.parse::<u64>().ok()
        } else {
            NUMBER_WORDS.iter().position(|n| n == w).map(|i| i as u64)
        }
    });
    let kind = match number {
        Some(n) => AnswerKind::Number(n),
        None => {
            let joined = words.join(" ");
            let padded = [" ", joined.as_str(), " "].concat();
            INDECISIVE_TOKENS
                .iter()
                .find(|t| padded.contains(&[" ", t, " "].concat()))
                .map(|t| AnswerKind::Indecisive((*t).to_string()))
                .unwrap_or_else(|| AnswerKind::Failed("unparseable".to_string()))
        }
    };
    IntermediateAnswer {
        doc_id: doc_id.to_string(),
        kind,
        raw_text: Some(text.to_string()),
    }
}

/// A backend that judges one document against one query.
pub trait Reasoner: Sync {
    fn reason(&self, query: &Query, doc: &Document) -> IntermediateAnswer;
}

/// The value a perfect reasoner reports: the instance count, or presence for IN.
pub fn oracle_value(query: &Query, doc: &Document) -> u64 {
    let n = doc.count(query.category());
    match query.qtype() {
        QueryType::In => u64::from(n > 0),
        QueryType::Count | QueryType::Max => n,
    }
}

/// Answers straight from the annotations.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReasoner;

impl Reasoner for OracleReasoner {
    fn reason(&self, query: &Query, doc: &Document) -> IntermediateAnswer {
        IntermediateAnswer::number(doc.doc_id(), oracle_value(query, doc))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
    #[error("max_offset must be at least 1")]
    Offset,
    #[error("damage gain must be finite and non-negative")]
    Gain,
}

/// Error model of the simulated reasoner.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseParams {
    /// Probability of a wrong count.
    pub p_err: f64,
    /// Wrong counts are off by a uniform non-zero offset in `-max_offset..=max_offset`.
    pub max_offset: u64,
    /// Probability of answering "many" when the true value is at least `many_threshold`.
    pub p_indecisive: f64,
    pub many_threshold: u64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            p_err: 0.0,
            max_offset: 1,
            p_indecisive: 0.0,
            many_threshold: 10,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..=1.0).contains(&self.p_err) {
            return Err(NoiseError::Probability("p_err"));
        }
        if !(0.0..=1.0).contains(&self.p_indecisive) {
            return Err(NoiseError::Probability("p_indecisive"));
        }
        if self.max_offset == 0 {
            return Err(NoiseError::Offset);
        }
        Ok(())
    }
}

/// Raises the error probability of documents that look similar to the query.
///
/// `p = clamp(p_err + gain * max(0, cosine(query, doc)), 0, 1)`; documents missing
/// from the store get no extra error.
pub struct DamageModel<'a> {
    pub store: &'a EmbeddingStore,
    pub encoder: &'a dyn QueryEncoder,
    pub gain: f64,
}

/// A seeded stand-in for a neural reasoner that makes counting mistakes.
///
/// Randomness is derived from `(seed, query, doc_id)`, so every pair's answer is
/// fixed regardless of evaluation order or parallelism.
pub struct NoisyReasoner<'a> {
    params: NoiseParams,
    damage: Option<DamageModel<'a>>,
}

impl<'a> NoisyReasoner<'a> {
    pub fn new(params: NoiseParams) -> Result<Self, NoiseError> {
        params.validate()?;
        Ok(Self {
            params,
            damage: None,
        })
    }

    pub fn with_damage(mut self, damage: DamageModel<'a>) -> Result<Self, NoiseError> {
        if !(damage.gain.is_finite() && damage.gain >= 0.0) {
            return Err(NoiseError::Gain);
        }
        self.damage = Some(damage);
        Ok(self)
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    fn error_probability(&self, query: &Query, doc: &Document) -> f64 {
        let base = self.params.p_err;
        let Some(damage) = &self.damage else {
            return base;
        };
        let similarity = damage
            .encoder
            .encode(query)
            .ok()
            .zip(damage.store.get(doc.doc_id()))
            .and_then(|(q, d)| score(SimilarityMetric::Cosine, &q, d).ok())
            .unwrap_or(0.0);
        (base + damage.gain * similarity.max(0.0)).clamp(0.0, 1.0)
    }
}

impl Reasoner for NoisyReasoner<'_> {
    fn reason(&self, query: &Query, doc: &Document) -> IntermediateAnswer {
        let truth = oracle_value(query, doc);
        let mut rng = derived_rng(
            self.params.seed,
            &[
                b"reason",
                query.qtype().as_str().as_bytes(),
                query.category().as_bytes(),
                doc.doc_id().as_bytes(),
            ],
        );
        // fixed draw order keeps the realization stable when parameters change
        let u_indecisive: f64 = rng.random();
        let u_error: f64 = rng.random();
        let e = self.params.max_offset;
        let pick = rng.random_range(0..2 * e);

        if truth >= self.params.many_threshold && u_indecisive < self.params.p_indecisive {
            return IntermediateAnswer::indecisive(doc.doc_id(), "many");
        }
        if u_error < self.error_probability(query, doc) {
            let value = if pick < e {
                truth.saturating_sub(e - pick)
            } else {
                truth + (pick - e + 1)
            };
            return IntermediateAnswer::number(doc.doc_id(), value);
        }
        IntermediateAnswer::number(doc.doc_id(), truth)
    }
}
