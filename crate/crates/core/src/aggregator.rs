//! Folds intermediate answers into the final query answer.

use alloc::string::String;
use core::fmt;

use crate::query::QueryType;
use crate::reasoner::IntermediateAnswer;

/// How indecisive and failed answers enter the fold.
///
/// Both modes leave them out of sums and maxima; they differ in how evaluation
/// scores them (see `eval::eval_query`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IndecisivePolicy {
    /// Non-numeric answers count as 0.
    #[default]
    AsZero,
    /// Non-numeric answers are dropped and only reported.
    Skip,
}

impl fmt::Display for IndecisivePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndecisivePolicy::AsZero => "as_zero",
            IndecisivePolicy::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryAnswer {
    pub qtype: QueryType,
    pub value: u64,
    /// Document attaining the maximum; MAX only.
    pub witness: Option<String>,
    /// Number of indecisive or failed answers.
    pub excluded: usize,
    pub policy: IndecisivePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("MAX over an empty or all non-numeric answer set is undefined")]
    EmptyMax,
}

fn fold_numbers<'a, I>(answers: I, mut f: impl FnMut(&'a str, u64)) -> usize
where
    I: IntoIterator<Item = &'a IntermediateAnswer>,
{
    let mut excluded = 0;
    for a in answers {
        match a.as_number() {
            Some(n) => f(&a.doc_id, n),
            None => excluded += 1,
        }
    }
    excluded
}

pub fn aggregate_count<'a, I>(answers: I, policy: IndecisivePolicy) -> QueryAnswer
where
    I: IntoIterator<Item = &'a IntermediateAnswer>,
{
    let mut total = 0u64;
    let excluded = fold_numbers(answers, |_, n| total += n);
    QueryAnswer {
        qtype: QueryType::Count,
        value: total,
        witness: None,
        excluded,
        policy,
    }
}

pub fn aggregate_in<'a, I>(answers: I, policy: IndecisivePolicy) -> QueryAnswer
where
    I: IntoIterator<Item = &'a IntermediateAnswer>,
{
    let mut present = 0u64;
    let excluded = fold_numbers(answers, |_, n| present += u64::from(n >= 1));
    QueryAnswer {
        qtype: QueryType::In,
        value: present,
        witness: None,
        excluded,
        policy,
    }
}

/// Largest numeric answer; ties go to the smaller doc id.
pub fn aggregate_max<'a, I>(answers: I, policy: IndecisivePolicy) -> Result<QueryAnswer, AggregateError>
where
    I: IntoIterator<Item = &'a IntermediateAnswer>,
{
    let mut best: Option<(u64, &'a str)> = None;
    let excluded = fold_numbers(answers, |id, n| {
        best = match best {
            Some((v, w)) if v > n || (v == n && w <= id) => Some((v, w)),
            _ => Some((n, id)),
        };
    });
    let (value, witness) = best.ok_or(AggregateError::EmptyMax)?;
    Ok(QueryAnswer {
        qtype: QueryType::Max,
        value,
        witness: Some(witness.into()),
        excluded,
        policy,
    })
}

pub fn aggregate<'a, I>(
    qtype: QueryType,
    answers: I,
    policy: IndecisivePolicy,
) -> Result<QueryAnswer, AggregateError>
where
    I: IntoIterator<Item = &'a IntermediateAnswer>,
{
    match qtype {
        QueryType::Count => Ok(aggregate_count(answers, policy)),
        QueryType::In => Ok(aggregate_in(answers, policy)),
        QueryType::Max => aggregate_max(answers, policy),
    }
}
