//! Annotation ingestion: COCO `instances_*.json` and a line-oriented JSON format.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use mmndb_core::corpus::{CorpusError, Document, MultimodalDatabase};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: {source}")]
    Corpus { line: usize, source: CorpusError },
    #[error("annotation {annotation} references unknown {what} {id}")]
    DanglingReference {
        annotation: usize,
        what: &'static str,
        id: u64,
    },
    #[error("unknown annotation format `{0}` (expected coco-json or simple-jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationFormat {
    #[serde(rename = "coco-json")]
    CocoJson,
    #[serde(rename = "simple-jsonl")]
    SimpleJsonl,
}

impl FromStr for AnnotationFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco-json" | "coco" => Ok(AnnotationFormat::CocoJson),
            "simple-jsonl" | "jsonl" => Ok(AnnotationFormat::SimpleJsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for AnnotationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationFormat::CocoJson => "coco-json",
            AnnotationFormat::SimpleJsonl => "simple-jsonl",
        })
    }
}

pub fn load_annotations(
    path: impl AsRef<Path>,
    format: AnnotationFormat,
) -> Result<MultimodalDatabase, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        AnnotationFormat::CocoJson => parse_coco_json(reader),
        AnnotationFormat::SimpleJsonl => parse_simple_jsonl(reader),
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: Option<String>,
    coco_url: Option<String>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn json_error(e: serde_json::Error) -> IngestError {
    IngestError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// One document per image, keyed by the decimal image id; every declared
/// category enters the vocabulary.
pub fn parse_coco_json(reader: impl Read) -> Result<MultimodalDatabase, IngestError> {
    let coco: CocoFile = serde_json::from_reader(reader).map_err(json_error)?;
    let categories: HashMap<u64, &str> = coco
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut per_image: HashMap<u64, BTreeMap<&str, u64>> = HashMap::new();
    for (i, ann) in coco.annotations.iter().enumerate() {
        let name = categories
            .get(&ann.category_id)
            .ok_or(IngestError::DanglingReference {
                annotation: i,
                what: "category",
                id: ann.category_id,
            })?;
        *per_image
            .entry(ann.image_id)
            .or_default()
            .entry(name)
            .or_insert(0) += 1;
    }

    let mut db = MultimodalDatabase::new();
    for c in &coco.categories {
        db.declare_category(&c.name)
            .map_err(|source| IngestError::Corpus { line: 0, source })?;
    }
    for image in &coco.images {
        let corpus = |source| IngestError::Corpus { line: 0, source };
        let mut doc = Document::new(image.id.to_string()).map_err(corpus)?;
        if let Some(counts) = per_image.remove(&image.id) {
            for (name, n) in counts {
                doc.add_instances(name, n).map_err(corpus)?;
            }
        }
        if let Some(file_name) = &image.file_name {
            doc = doc.with_meta("file_name", file_name.clone());
        }
        if let Some(uri) = image.coco_url.as_ref().or(image.file_name.as_ref()) {
            doc = doc.with_meta("image_uri", uri.clone());
        }
        db.insert(doc).map_err(corpus)?;
    }
    if let Some((&id, _)) = per_image.iter().min_by_key(|(id, _)| **id) {
        let annotation = coco
            .annotations
            .iter()
            .position(|a| a.image_id == id)
            .unwrap_or(0);
        return Err(IngestError::DanglingReference {
            annotation,
            what: "image",
            id,
        });
    }
    Ok(db)
}

/// A record of the `simple-jsonl` format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlRecord {
    pub doc_id: String,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn parse_simple_jsonl(reader: impl BufRead) -> Result<MultimodalDatabase, IngestError> {
    let mut db = MultimodalDatabase::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: line_no,
            column: 0,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            line: line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        let corpus = |source| IngestError::Corpus {
            line: line_no,
            source,
        };
        let mut doc = Document::new(record.doc_id).map_err(corpus)?;
        for (category, n) in &record.counts {
            doc.add_instances(category, *n).map_err(corpus)?;
        }
        for (k, v) in record.meta {
            doc = doc.with_meta(k, v);
        }
        db.insert(doc).map_err(corpus)?;
    }
    Ok(db)
}

/// Writes `db` in `simple-jsonl`, one document per line in id order.
pub fn write_simple_jsonl(db: &MultimodalDatabase, mut out: impl Write) -> std::io::Result<()> {
    for doc in db.documents() {
        let record = JsonlRecord {
            doc_id: doc.doc_id().to_string(),
            counts: doc.counts().clone(),
            meta: doc.meta().clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Document, category and instance totals of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub documents: usize,
    pub categories: usize,
    pub instances: u64,
    pub empty_documents: usize,
}

pub fn summarize(db: &MultimodalDatabase) -> CorpusSummary {
    CorpusSummary {
        documents: db.len(),
        categories: db.vocabulary().len(),
        instances: db.total_instances(),
        empty_documents: db.documents().filter(|d| d.counts().is_empty()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY3: &str = r#"{"doc_id": "d1", "counts": {"person": 2, "guitar": 1}, "meta": {}}
{"doc_id": "d2", "counts": {"dog": 3}, "meta": {}}
{"doc_id": "d3", "counts": {"person": 1, "dog": 1}, "meta": {"image_uri": "file:///d3.jpg"}}
"#;

    #[test]
    fn jsonl_toy3() {
        let db = parse_simple_jsonl(TOY3.as_bytes()).unwrap();
        assert_eq!(db.len(), 3);
        let vocab: Vec<&str> = db.vocabulary().iter().map(String::as_str).collect();
        assert_eq!(vocab, ["dog", "guitar", "person"]);
        assert_eq!(db.get("d3").unwrap().meta()["image_uri"], "file:///d3.jpg");
    }

    #[test]
    fn jsonl_empty_counts() {
        let db = parse_simple_jsonl(r#"{"doc_id": "d4", "counts": {}}"#.as_bytes()).unwrap();
        assert!(db.get("d4").unwrap().counts().is_empty());
    }

    #[test]
    fn jsonl_errors_carry_position() {
        let bad = "{\"doc_id\": \"a\", \"counts\": {}}\n{\"doc_id\": \"b\", \"counts\": {\"x\": -1}}\n";
        match parse_simple_jsonl(bad.as_bytes()) {
            Err(IngestError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let dup = "{\"doc_id\": \"a\"}\n{\"doc_id\": \"a\"}\n";
        match parse_simple_jsonl(dup.as_bytes()) {
            Err(IngestError::Corpus { line: 2, source }) => {
                assert_eq!(source, CorpusError::DuplicateDocId("a".into()))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_simple_jsonl("{\"doc_id\": \"a\", \"extra\": 1}".as_bytes()),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let db = parse_simple_jsonl(TOY3.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_simple_jsonl(&db, &mut buf).unwrap();
        assert_eq!(parse_simple_jsonl(buf.as_slice()).unwrap(), db);
    }

    const COCO: &str = r#"{
      "info": {"year": 2017},
      "images": [
        {"id": 1, "file_name": "000000000001.jpg", "coco_url": "http://x/1.jpg", "height": 10, "width": 10},
        {"id": 2, "file_name": "000000000002.jpg"},
        {"id": 3, "file_name": "000000000003.jpg"}
      ],
      "annotations": [
        {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1]},
        {"id": 11, "image_id": 1, "category_id": 1},
        {"id": 12, "image_id": 1, "category_id": 18},
        {"id": 13, "image_id": 2, "category_id": 18}
      ],
      "categories": [
        {"id": 1, "name": "person", "supercategory": "person"},
        {"id": 18, "name": "dog"},
        {"id": 5, "name": "airplane"}
      ]
    }"#;

    #[test]
    fn coco_counts_instances() {
        let db = parse_coco_json(COCO.as_bytes()).unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.vocabulary().len(), 3);
        assert_eq!(db.instance_count("1", "person").unwrap(), 2);
        assert_eq!(db.instance_count("1", "dog").unwrap(), 1);
        assert_eq!(db.instance_count("2", "dog").unwrap(), 1);
        assert!(db.get("3").unwrap().counts().is_empty());
        assert_eq!(db.get("1").unwrap().meta()["image_uri"], "http://x/1.jpg");
        assert_eq!(db.get("2").unwrap().meta()["image_uri"], "000000000002.jpg");
        let s = summarize(&db);
        assert_eq!((s.documents, s.categories, s.instances, s.empty_documents), (3, 3, 4, 1));
    }

    #[test]
    fn coco_errors() {
        let bad_ref = COCO.replace("\"category_id\": 18}", "\"category_id\": 99}");
        assert!(matches!(
            parse_coco_json(bad_ref.as_bytes()),
            Err(IngestError::DanglingReference { what: "category", id: 99, .. })
        ));
        let bad_image = COCO.replace("{\"id\": 13, \"image_id\": 2", "{\"id\": 13, \"image_id\": 7");
        assert!(matches!(
            parse_coco_json(bad_image.as_bytes()),
            Err(IngestError::DanglingReference { what: "image", id: 7, annotation: 3 })
        ));
        match parse_coco_json("{\n  \"images\": [,]\n}".as_bytes()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = COCO.replace("{\"id\": 3,", "{\"id\": 2,");
        assert!(matches!(
            parse_coco_json(dup.as_bytes()),
            Err(IngestError::Corpus { source: CorpusError::DuplicateDocId(_), .. })
        ));
    }
}
