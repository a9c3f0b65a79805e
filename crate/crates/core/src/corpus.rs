//! Newline-delimited JSON corpora: questions, faculty references, deep-store
//! facts, student responses, human scores and grade output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::FactRecord;
use crate::evaluation::GradeResult;
use crate::pipeline::StudentResponse;
use crate::retrieval::ReferenceRecord;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Question prompt and topic. Not part of the faculty reference file, which
/// only carries answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub response_id: String,
    pub score: f64,
}

/// One line of a grades file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub response_id: String,
    pub question_id: String,
    #[serde(flatten)]
    pub grade: GradeResult,
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CorpusError::Parse {
                path: origin.to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("corpus records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let display = path.display().to_string();
    let io = |source| CorpusError::Io {
        path: display.clone(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: display.clone(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(to_jsonl(items).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

/// The three corpora a grading engine is built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub questions: Vec<QuestionRecord>,
    pub references: Vec<ReferenceRecord>,
    pub facts: Vec<FactRecord>,
}

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const REFERENCES_FILE: &str = "references.jsonl";
pub const FACTS_FILE: &str = "facts.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const HUMAN_FILE: &str = "human.jsonl";

impl Corpus {
    pub fn load(references: &Path, facts: &Path, questions: Option<&Path>) -> Result<Self, CorpusError> {
        Ok(Self {
            references: read_jsonl(references)?,
            facts: read_jsonl(facts)?,
            questions: questions.map(read_jsonl).transpose()?.unwrap_or_default(),
        })
    }

    /// Loads the standard file names from a directory; questions are optional.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let q = dir.join(QUESTIONS_FILE);
        Self::load(
            &dir.join(REFERENCES_FILE),
            &dir.join(FACTS_FILE),
            q.exists().then_some(q.as_path()),
        )
    }
}

pub fn read_responses(path: &Path) -> Result<Vec<StudentResponse>, CorpusError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_file_roundtrip_is_byte_identical() {
        let text = concat!(
            r#"{"chunk_id":"c1","question_id":"q1","text":"Akbar introduced the mansabdari system.","max_marks":5.0,"marking_notes":"rank and pay"}"#,
            "\n",
            r#"{"chunk_id":"c2","question_id":"q1","text":"Revenue was assessed on land.","max_marks":5.0}"#,
            "\n"
        );
        let parsed: Vec<ReferenceRecord> = parse_jsonl(text, "inline").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].marking_notes, None);
        assert_eq!(to_jsonl(&parsed), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_jsonl::<FactRecord>(
            "{\"fact_id\":\"a\",\"topic\":\"t\",\"text\":\"x\"}\n{oops}\n",
            "f.jsonl",
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }
}
