//! The document collection and its ground truth.
//!
//! A [`MultimodalDatabase`] is an unordered set of image [`Document`]s, each
//! carrying per-category object-instance counts. Everything that scores a
//! pipeline ultimately derives from [`MultimodalDatabase::ground_truth`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::query::{Query, QueryType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("document id must not be empty")]
    EmptyDocId,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("category name must not be empty")]
    EmptyCategory,
}

/// Plural forms that suffix rules get wrong, mapped to their singular.
const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("persons", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("oxen", "ox"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("leaves", "leaf"),
    ("loaves", "loaf"),
    ("shelves", "shelf"),
    ("wolves", "wolf"),
    ("calves", "calf"),
    ("halves", "half"),
    ("buses", "bus"),
    ("ties", "tie"),
    ("pies", "pie"),
    ("potatoes", "potato"),
    ("tomatoes", "tomato"),
    ("dice", "die"),
];

/// Words whose singular and plural coincide, or that would be damaged by suffix stripping.
const INVARIANT_WORDS: &[&str] = &[
    "sheep",
    "deer",
    "fish",
    "moose",
    "bison",
    "series",
    "species",
    "scissors",
    "skis",
    "pants",
    "news",
    "broccoli",
];

/// Lower-cases, collapses whitespace and singularizes the last word of a category name.
///
/// Idempotent: `normalize_category(normalize_category(s)) == normalize_category(s)`.
pub fn normalize_category(raw: &str) -> String {
    let words: Vec<String> = raw.split_whitespace().map(|w| w.to_lowercase()).collect();
    let Some((last, head)) = words.split_last() else {
        return String::new();
    };
    let mut out = String::new();
    for w in head {
        out.push_str(w);
        out.push(' ');
    }
    out.push_str(&singularize(last));
    out
}

fn singularize(word: &str) -> String {
    if INVARIANT_WORDS.contains(&word) {
        return word.to_string();
    }
    if let Some((_, single)) = IRREGULAR_PLURALS.iter().find(|(plural, _)| *plural == word) {
        return (*single).to_string();
    }
    let len = word.len();
    if len > 4 && word.ends_with("ies") {
        return [&word[..len - 3], "y"].concat();
    }
    for suffix in ["sses", "ches", "shes", "xes", "zzes"] {
        if len > suffix.len() + 1 && word.ends_with(suffix) {
            return word[..len - 2].to_string();
        }
    }
    if len > 2
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        return word[..len - 1].to_string();
    }
    word.to_string()
}

/// A single image document with its object-instance annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Document {
    doc_id: String,
    counts: BTreeMap<String, u64>,
    #[cfg_attr(feature = "serde", serde(default))]
    meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        if doc_id.is_empty() {
            return Err(CorpusError::EmptyDocId);
        }
        Ok(Self {
            doc_id,
            counts: BTreeMap::new(),
            meta: BTreeMap::new(),
        })
    }

    /// Adds `n` instances of `category`. Zero additions store nothing.
    pub fn add_instances(&mut self, category: &str, n: u64) -> Result<(), CorpusError> {
        let category = normalize_category(category);
        if category.is_empty() {
            return Err(CorpusError::EmptyCategory);
        }
        if n > 0 {
            *self.counts.entry(category).or_insert(0) += n;
        }
        Ok(())
    }

    pub fn with_count(mut self, category: &str, n: u64) -> Result<Self, CorpusError> {
        self.add_instances(category, n)?;
        Ok(self)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    /// Instance count of an already-normalized category; absent means zero.
    pub fn count(&self, category: &str) -> u64 {
        self.counts.get(category).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }
}

/// An unordered collection of documents keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MultimodalDatabase {
    docs: BTreeMap<String, Document>,
    vocabulary: BTreeSet<String>,
}

impl MultimodalDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents<I>(docs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = Document>,
    {
        let mut db = Self::new();
        for doc in docs {
            db.insert(doc)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, doc: Document) -> Result<(), CorpusError> {
        if self.docs.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        self.vocabulary.extend(doc.counts.keys().cloned());
        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    /// Adds a category to the vocabulary even if no document contains it.
    pub fn declare_category(&mut self, category: &str) -> Result<(), CorpusError> {
        let category = normalize_category(category);
        if category.is_empty() {
            return Err(CorpusError::EmptyCategory);
        }
        self.vocabulary.insert(category);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    /// Documents in ascending id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> + '_ {
        self.docs.values()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.docs.keys().map(String::as_str)
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn total_instances(&self) -> u64 {
        self.docs.values().flat_map(|d| d.counts.values()).sum()
    }

    pub fn instance_count(&self, doc_id: &str, category: &str) -> Result<u64, CorpusError> {
        let doc = self
            .docs
            .get(doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.to_string()))?;
        Ok(doc.count(&normalize_category(category)))
    }

    /// Computes the true answer to `query`. Out-of-vocabulary categories give an all-zero result.
    pub fn ground_truth(&self, query: &Query) -> GroundTruth {
        let category = query.category();
        let mut per_doc = BTreeMap::new();
        for doc in self.docs.values() {
            let n = doc.count(category);
            if n > 0 {
                let value = match query.qtype() {
                    QueryType::In => 1,
                    QueryType::Count | QueryType::Max => n,
                };
                per_doc.insert(doc.doc_id.clone(), value);
            }
        }
        let relevant: BTreeSet<String> = per_doc.keys().cloned().collect();
        let (global, max_docs) = match query.qtype() {
            QueryType::Count => (per_doc.values().sum(), BTreeSet::new()),
            QueryType::In => (relevant.len() as u64, BTreeSet::new()),
            QueryType::Max => {
                let max = per_doc.values().copied().max().unwrap_or(0);
                let argmax = per_doc
                    .iter()
                    .filter(|(_, v)| **v == max && max > 0)
                    .map(|(k, _)| k.clone())
                    .collect();
                (max, argmax)
            }
        };
        GroundTruth {
            query: query.clone(),
            relevant,
            per_doc,
            global,
            max_docs,
        }
    }
}

/// Shape of a seeded random corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomCorpusParams {
    pub docs: usize,
    pub categories: usize,
    /// Each document holds between 0 and this many distinct categories.
    pub max_categories_per_doc: usize,
    pub max_count: u64,
    pub seed: u64,
}

/// Builds a corpus with documents `doc00000..` and categories `object00..`.
///
/// Every category is declared in the vocabulary even if no document draws it.
pub fn random_corpus(params: &RandomCorpusParams) -> MultimodalDatabase {
    use rand::seq::index::sample;
    use rand::Rng;

    let names: Vec<String> = (0..params.categories)
        .map(|i| alloc::format!("object{i:02}"))
        .collect();
    let mut rng = crate::seed::derived_rng(params.seed, &[b"random-corpus"]);
    let mut db = MultimodalDatabase::new();
    for name in &names {
        db.vocabulary.insert(name.clone());
    }
    let per_doc = params.max_categories_per_doc.min(params.categories);
    for i in 0..params.docs {
        let mut doc = Document::new(alloc::format!("doc{i:05}")).expect("non-empty id");
        let k = rng.random_range(0..=per_doc);
        for c in sample(&mut rng, params.categories, k) {
            let n = rng.random_range(1..=params.max_count.max(1));
            doc.counts.insert(names[c].clone(), n);
        }
        db.insert(doc).expect("generated ids are unique");
    }
    db
}

/// The true answer to a query, with the per-document values it is built from.
///
/// `per_doc` holds instance counts for COUNT and MAX and presence flags (1) for IN;
/// documents without the target object are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub query: Query,
    pub relevant: BTreeSet<String>,
    pub per_doc: BTreeMap<String, u64>,
    pub global: u64,
    pub max_docs: BTreeSet<String>,
}

impl GroundTruth {
    pub fn value(&self, doc_id: &str) -> u64 {
        self.per_doc.get(doc_id).copied().unwrap_or(0)
    }
}
