//! Question records, dataset ingestion and sentence decomposition.

mod normalize;
mod sentences;
mod tokenize;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use normalize::{contains_token_run, normalize_answer, normalized_tokens};
pub use sentences::{sentence_spans, split_sentences, ABBREVIATIONS};
pub use tokenize::{count_tokens, token_slices, tokenize, TokenizerConfig, TokenizerMode};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: key \"{key}\": {message}")]
    Schema {
        line: usize,
        key: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub title: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    /// Retrieval rank order.
    pub documents: Vec<DocumentRecord>,
}

/// One sentence of a retrieved document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub id: String,
    pub doc_id: String,
    /// Zero-based retrieval rank of the source document.
    pub doc_rank: usize,
    /// Zero-based index of the sentence within its document.
    pub position: usize,
    pub text: String,
    /// Byte offsets into the document body.
    pub char_span: (usize, usize),
    pub token_count: usize,
}

impl QuestionRecord {
    /// Decomposes every document, in retrieval order, into sentences.
    pub fn sentences(&self, cfg: &TokenizerConfig) -> Vec<SentenceUnit> {
        self.documents
            .iter()
            .enumerate()
            .flat_map(|(rank, doc)| document_sentences(doc, rank, cfg))
            .collect()
    }

    /// Documents joined with newlines, in retrieval order.
    pub fn full_context(&self) -> String {
        self.documents
            .iter()
            .map(|d| d.body.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn document_sentences(
    doc: &DocumentRecord,
    doc_rank: usize,
    cfg: &TokenizerConfig,
) -> Vec<SentenceUnit> {
    sentence_spans(&doc.body)
        .into_iter()
        .enumerate()
        .map(|(position, span)| {
            let text = doc.body[span.clone()].to_owned();
            SentenceUnit {
                id: format!("{}:{}", doc.id, position),
                doc_id: doc.id.clone(),
                doc_rank,
                position,
                token_count: count_tokens(&text, cfg),
                text,
                char_span: (span.start, span.end),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<QuestionRecord>,
    /// Lines dropped in lenient mode.
    pub skipped: Vec<SkippedLine>,
}

/// Reads a JSON-lines dataset. In strict mode the first schema violation
/// aborts; otherwise bad lines are skipped and reported. Blank lines are
/// ignored.
pub fn load_dataset(path: &Path, strict: bool) -> Result<Dataset, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Dataset::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, idx + 1) {
            Ok(rec) => out.records.push(rec),
            Err(err) if strict => return Err(err),
            Err(err) => {
                log::warn!("skipping {err}");
                out.skipped.push(SkippedLine {
                    line: idx + 1,
                    reason: err.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Validates one dataset line.
pub fn parse_record(line: &str, line_no: usize) -> Result<QuestionRecord, CorpusError> {
    let schema = |key: &str, message: &str| CorpusError::Schema {
        line: line_no,
        key: key.to_owned(),
        message: message.to_owned(),
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| schema("<line>", &format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema("<line>", "expected a JSON object"))?;
    let string = |key: &str| -> Result<String, CorpusError> {
        match obj.get(key) {
            None => Err(schema(key, "missing")),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(schema(key, "expected a string")),
        }
    };
    let id = string("id")?;
    let question = string("question")?;

    let answers = match obj.get("answers") {
        None => return Err(schema("answers", "missing")),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(schema("answers", "expected an array of strings")),
    };
    if answers.is_empty() {
        return Err(schema("answers", "must contain at least one alias"));
    }
    let mut gold_answers = Vec::with_capacity(answers.len());
    for a in answers {
        let s = a
            .as_str()
            .ok_or_else(|| schema("answers", "expected an array of strings"))?;
        if normalize_answer(s).is_empty() {
            return Err(schema("answers", "alias is empty after normalization"));
        }
        gold_answers.push(s.to_owned());
    }

    let docs = match obj.get("documents") {
        None => return Err(schema("documents", "missing")),
        Some(Value::Array(d)) => d,
        Some(_) => return Err(schema("documents", "expected an array")),
    };
    let mut documents = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        let key = |k: &str| format!("documents[{i}].{k}");
        let d = d
            .as_object()
            .ok_or_else(|| schema(&format!("documents[{i}]"), "expected an object"))?;
        let doc_id = match d.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(schema(&key("id"), "expected a string")),
            None => return Err(schema(&key("id"), "missing")),
        };
        let title = match d.get("title") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(schema(&key("title"), "expected a string or null")),
        };
        let body = match d.get("body") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::String(_)) => return Err(schema(&key("body"), "must be non-empty")),
            Some(_) => return Err(schema(&key("body"), "expected a string")),
            None => return Err(schema(&key("body"), "missing")),
        };
        documents.push(DocumentRecord {
            id: doc_id,
            title,
            body,
        });
    }
    Ok(QuestionRecord {
        id,
        question,
        gold_answers,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const GOOD: &str = r#"{"id":"q1","question":"capital of france?","answers":["Paris"],"documents":[{"id":"d1","title":"France","body":"Paris is big. It is old."},{"id":"d2","title":null,"body":"Lyon is a city."}]}"#;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_well_formed_line() {
        let f = write_lines(&[GOOD]);
        let ds = load_dataset(f.path(), true).unwrap();
        assert_eq!(ds.records.len(), 1);
        let r = &ds.records[0];
        assert_eq!(r.gold_answers, vec!["Paris"]);
        let ids: Vec<_> = r.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2"]);
        assert_eq!(r.documents[1].title, None);
    }

    #[test]
    fn missing_answers_names_line_and_key() {
        let f = write_lines(&[r#"{"id":"q1","question":"x","documents":[]}"#]);
        match load_dataset(f.path(), true) {
            Err(CorpusError::Schema { line, key, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(key, "answers");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn lenient_mode_skips_and_reports() {
        let f = write_lines(&[GOOD, r#"{"id":"q2","question":"x","answers":[]}"#, GOOD]);
        let ds = load_dataset(f.path(), false).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.skipped.len(), 1);
        assert_eq!(ds.skipped[0].line, 2);
        assert!(ds.skipped[0].reason.contains("answers"));
        assert!(load_dataset(f.path(), true).is_err());
    }

    #[test]
    fn rejects_empty_bodies_and_article_only_answers() {
        let empty_body = r#"{"id":"q","question":"x","answers":["a"],"documents":[]}"#;
        assert!(matches!(
            parse_record(empty_body, 4),
            Err(CorpusError::Schema { line: 4, ref key, .. }) if key == "answers"
        ));
        let bad_doc = r#"{"id":"q","question":"x","answers":["b"],"documents":[{"id":"d","body":""}]}"#;
        assert!(matches!(
            parse_record(bad_doc, 1),
            Err(CorpusError::Schema { ref key, .. }) if key == "documents[0].body"
        ));
    }

    #[test]
    fn sentences_carry_provenance() {
        let rec = parse_record(GOOD, 1).unwrap();
        let cfg = TokenizerConfig::default();
        let sents = rec.sentences(&cfg);
        assert_eq!(sents.len(), 3);
        assert_eq!(sents[1].id, "d1:1");
        assert_eq!(sents[1].text, "It is old.");
        assert_eq!(sents[2].doc_rank, 1);
        for s in &sents {
            let body = &rec.documents[s.doc_rank].body;
            assert_eq!(&body[s.char_span.0..s.char_span.1], s.text);
            assert_eq!(s.token_count, count_tokens(&s.text, &cfg));
        }
    }
}
