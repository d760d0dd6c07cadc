//! Template-based parsing of natural-language queries and reasoner prompt rendering.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::normalize_category;

/// The versioned template resource shared by the parser, CLI help and tests.
pub const TEMPLATE_RESOURCE: &str = include_str!("query_templates.txt");

const OBJECT_PLACEHOLDER: &str = "{object}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("unsupported query `{0}`")]
    Unsupported(String),
    #[error("query `{0}` names no object")]
    EmptyObject(String),
    #[error("template must contain exactly one `{{object}}` placeholder: `{0}`")]
    InvalidTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum QueryType {
    Count,
    In,
    Max,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::Count, QueryType::In, QueryType::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Count => "COUNT",
            QueryType::In => "IN",
            QueryType::Max => "MAX",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "COUNT" => Some(QueryType::Count),
            "IN" => Some(QueryType::In),
            "MAX" => Some(QueryType::Max),
            _ => None,
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed query: what to compute, over which object category.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Query {
    qtype: QueryType,
    category: String,
    raw_text: String,
}

impl Query {
    /// Builds a query directly; `raw_text` is the canonical rendering.
    pub fn new(qtype: QueryType, category: &str) -> Result<Self, QueryError> {
        let category = normalize_category(category);
        if category.is_empty() {
            return Err(QueryError::EmptyObject(String::new()));
        }
        let raw_text = canonical_template(qtype).replace(OBJECT_PLACEHOLDER, &category);
        Ok(Self {
            qtype,
            category,
            raw_text,
        })
    }

    pub fn qtype(&self) -> QueryType {
        self.qtype
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.qtype, self.category)
    }
}

#[derive(Debug)]
enum PatternToken<'a> {
    Word(Vec<&'a str>),
    Optional(Vec<&'a str>),
    Object,
}

struct TemplateLine<'a> {
    qtype: QueryType,
    canonical: bool,
    text: &'a str,
}

fn template_lines() -> impl Iterator<Item = TemplateLine<'static>> {
    TEMPLATE_RESOURCE.lines().filter_map(|line| {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let mut parts = line.splitn(3, ' ');
        let qtype = QueryType::from_tag(parts.next()?)?;
        let canonical = match parts.next()? {
            "canonical" => true,
            "pattern" => false,
            _ => return None,
        };
        Some(TemplateLine {
            qtype,
            canonical,
            text: parts.next()?.trim(),
        })
    })
}

/// The canonical phrasing for a query type, with an `{object}` placeholder.
pub fn canonical_template(qtype: QueryType) -> &'static str {
    template_lines()
        .find(|l| l.canonical && l.qtype == qtype)
        .map(|l| l.text)
        .expect("template resource has a canonical line per query type")
}

fn compile(pattern: &str) -> Vec<PatternToken<'_>> {
    pattern
        .split_whitespace()
        .map(|tok| {
            if tok == OBJECT_PLACEHOLDER {
                PatternToken::Object
            } else if let Some(inner) = tok.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
                PatternToken::Optional(inner.split('|').collect())
            } else {
                PatternToken::Word(tok.split('|').collect())
            }
        })
        .collect()
}

/// Backtracking word matcher; records the object span as (start, end) word indices.
fn match_words(
    pattern: &[PatternToken<'_>],
    words: &[String],
    object: &mut Option<(usize, usize)>,
    offset: usize,
) -> bool {
    let Some((head, rest)) = pattern.split_first() else {
        return words.is_empty();
    };
    match head {
        PatternToken::Word(alts) => match words.split_first() {
            Some((w, tail)) if alts.contains(&w.as_str()) => {
                match_words(rest, tail, object, offset + 1)
            }
            _ => false,
        },
        PatternToken::Optional(alts) => {
            if let Some((w, tail)) = words.split_first() {
                if alts.contains(&w.as_str()) && match_words(rest, tail, object, offset + 1) {
                    return true;
                }
            }
            match_words(rest, words, object, offset)
        }
        PatternToken::Object => {
            for take in 0..=words.len() {
                if match_words(rest, &words[take..], object, offset + take) {
                    *object = Some((offset, offset + take));
                    return true;
                }
            }
            false
        }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| matches!(c, '?' | '!' | '.' | ',' | ';' | ':' | '"'))
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Parses a query string against the template grammar.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let words = tokenize(text);
    for line in template_lines().filter(|l| !l.canonical) {
        let pattern = compile(line.text);
        let mut object = None;
        if match_words(&pattern, &words, &mut object, 0) {
            let (start, end) = object.unwrap_or((0, 0));
            let category = normalize_category(&words[start..end].join(" "));
            if category.is_empty() {
                return Err(QueryError::EmptyObject(text.to_string()));
            }
            return Ok(Query {
                qtype: line.qtype,
                category,
                raw_text: text.to_string(),
            });
        }
    }
    Err(QueryError::Unsupported(text.to_string()))
}

/// A reasoner prompt with a single `{object}` placeholder and an optional instruction suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptTemplate {
    template: String,
    suffix: Option<String>,
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>, suffix: Option<String>) -> Result<Self, QueryError> {
        let template = template.into();
        if template.matches(OBJECT_PLACEHOLDER).count() != 1 {
            return Err(QueryError::InvalidTemplate(template));
        }
        Ok(Self { template, suffix })
    }

    /// The counting prompt used for every query type: IN and MAX read presence
    /// and maxima off the same per-image count.
    pub fn counting() -> Self {
        Self {
            template: "How many {object} are in this image?".to_string(),
            suffix: Some("Answer with a number.".to_string()),
        }
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn suffix(&self) -> Option<&str> {
        self.suffix.as_deref()
    }
}

pub fn render_prompt(query: &Query, template: &PromptTemplate) -> String {
    let mut out = template.template.replace(OBJECT_PLACEHOLDER, query.category());
    if let Some(suffix) = &template.suffix {
        out.push(' ');
        out.push_str(suffix);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(text: &str) -> (QueryType, String) {
        let q = parse_query(text).unwrap();
        (q.qtype(), q.category().to_string())
    }

    #[test]
    fn parses_count() {
        assert_eq!(
            parsed("How many dogs are in the database?"),
            (QueryType::Count, "dog".into())
        );
        assert_eq!(
            parsed("  how   MANY wine glasses are there in the database "),
            (QueryType::Count, "wine glass".into())
        );
    }

    #[test]
    fn parses_in() {
        assert_eq!(
            parsed("In how many pictures there are persons?"),
            (QueryType::In, "person".into())
        );
        assert_eq!(
            parsed("in how many images are there cats"),
            (QueryType::In, "cat".into())
        );
    }

    #[test]
    fn parses_max() {
        assert_eq!(
            parsed("Which image has the most guitars?"),
            (QueryType::Max, "guitar".into())
        );
        assert_eq!(
            parsed("What is the maximum number of people in an image?"),
            (QueryType::Max, "person".into())
        );
        assert_eq!(
            parsed("What is the maximum number of hot dogs"),
            (QueryType::Max, "hot dog".into())
        );
    }

    #[test]
    fn raw_text_is_kept() {
        let q = parse_query("How many dogs are in the database?").unwrap();
        assert_eq!(q.raw_text(), "How many dogs are in the database?");
    }

    #[test]
    fn unsupported_and_empty() {
        assert_eq!(
            parse_query("list all dogs"),
            Err(QueryError::Unsupported("list all dogs".into()))
        );
        assert!(matches!(
            parse_query("How many are in the database?"),
            Err(QueryError::EmptyObject(_))
        ));
        assert!(matches!(parse_query(""), Err(QueryError::Unsupported(_))));
    }

    #[test]
    fn renders_prompts() {
        let q = Query::new(QueryType::Count, "dog").unwrap();
        let t = PromptTemplate::new(
            "How many {object} are in this image?",
            Some("Answer with a number.".into()),
        )
        .unwrap();
        assert_eq!(
            render_prompt(&q, &t),
            "How many dog are in this image? Answer with a number."
        );

        let q = Query::new(QueryType::In, "person").unwrap();
        let t = PromptTemplate::new("Is there a {object} in this image?", None).unwrap();
        assert_eq!(render_prompt(&q, &t), "Is there a person in this image?");
    }

    #[test]
    fn template_placeholder_invariant() {
        assert!(PromptTemplate::new("How many are here?", None).is_err());
        assert!(PromptTemplate::new("{object} and {object}", None).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        for qtype in QueryType::ALL {
            let q = Query::new(qtype, "teddy bear").unwrap();
            let back = parse_query(q.raw_text()).unwrap();
            assert_eq!((back.qtype(), back.category()), (qtype, "teddy bear"));
        }
    }
}
