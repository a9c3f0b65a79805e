//! Faculty knowledge base: question-level reference answers indexed for
//! exhaustive similarity checking.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{clamped_similarity, Embedder, Embedding, EmbeddingError};

pub const DEFAULT_THRESHOLD: f64 = 0.20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunkId(String),
    #[error("embedding dimension mismatch on chunk `{chunk_id}`: index uses {expected}, chunk has {actual}")]
    DimensionMismatch {
        chunk_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("unknown question `{0}`")]
    QuestionUnknown(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("max_marks must be finite and non-negative on chunk `{0}`")]
    InvalidMarks(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// A faculty answer chunk as stored on disk. Embeddings are computed at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub chunk_id: String,
    pub question_id: String,
    pub text: String,
    pub max_marks: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marking_notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChunk {
    pub chunk_id: String,
    pub question_id: String,
    pub text: String,
    pub embedding: Embedding,
    pub max_marks: f64,
    pub marking_notes: Option<String>,
}

impl ReferenceChunk {
    pub fn from_record(record: ReferenceRecord, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let embedding = embedder.embed(&record.text)?;
        Ok(Self {
            chunk_id: record.chunk_id,
            question_id: record.question_id,
            text: record.text,
            embedding,
            max_marks: record.max_marks,
            marking_notes: record.marking_notes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, RetrievalError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(RetrievalError::InvalidThreshold(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// "Exceeded" is strict: a similarity equal to the threshold does not pass.
    pub fn passes(self, similarity: f64) -> bool {
        similarity > self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(DEFAULT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVerdict {
    pub best_chunk_id: String,
    pub similarity: f64,
    pub passed: bool,
    pub threshold: f64,
}

/// Per-question reference chunks. Immutable once built.
#[derive(Debug, Clone)]
pub struct Rag1Index {
    dimension: usize,
    by_question: BTreeMap<String, Vec<ReferenceChunk>>,
}

impl Rag1Index {
    pub fn build(dimension: usize, chunks: Vec<ReferenceChunk>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        let mut by_question: BTreeMap<String, Vec<ReferenceChunk>> = BTreeMap::new();
        for chunk in chunks {
            if !seen.insert(chunk.chunk_id.clone()) {
                return Err(RetrievalError::DuplicateChunkId(chunk.chunk_id));
            }
            if chunk.embedding.dimension() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    chunk_id: chunk.chunk_id,
                    expected: dimension,
                    actual: chunk.embedding.dimension(),
                });
            }
            if !(chunk.max_marks.is_finite() && chunk.max_marks >= 0.0) {
                return Err(RetrievalError::InvalidMarks(chunk.chunk_id));
            }
            by_question.entry(chunk.question_id.clone()).or_default().push(chunk);
        }
        for list in by_question.values_mut() {
            list.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        }
        Ok(Self { dimension, by_question })
    }

    pub fn from_records(records: Vec<ReferenceRecord>, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let chunks = records
            .into_iter()
            .map(|r| ReferenceChunk::from_record(r, embedder))
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(embedder.dimension(), chunks)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn question_count(&self) -> usize {
        self.by_question.len()
    }

    pub fn chunk_count(&self) -> usize {
        self.by_question.values().map(Vec::len).sum()
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.by_question.keys().map(String::as_str)
    }

    pub fn chunks_for(&self, question_id: &str) -> Result<&[ReferenceChunk], RetrievalError> {
        self.by_question
            .get(question_id)
            .map(Vec::as_slice)
            .ok_or_else(|| RetrievalError::QuestionUnknown(question_id.to_string()))
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&ReferenceChunk> {
        self.by_question
            .values()
            .flat_map(|v| v.iter())
            .find(|c| c.chunk_id == chunk_id)
    }

    /// Largest `max_marks` among a question's chunks.
    pub fn max_marks(&self, question_id: &str) -> Result<f64, RetrievalError> {
        Ok(self
            .chunks_for(question_id)?
            .iter()
            .map(|c| c.max_marks)
            .fold(0.0, f64::max))
    }

    /// Exhaustive check of a response against one question's faculty chunks.
    pub fn check(
        &self,
        question_id: &str,
        response: &Embedding,
        threshold: Threshold,
    ) -> Result<SimilarityVerdict, RetrievalError> {
        let chunks = self.chunks_for(question_id)?;
        let mut best: Option<(&str, f64)> = None;
        for chunk in chunks {
            let sim = clamped_similarity(&chunk.embedding, response)?;
            best = match best {
                None => Some((&chunk.chunk_id, sim)),
                Some((id, s)) if sim > s || (sim == s && chunk.chunk_id.as_str() < id) => Some((&chunk.chunk_id, sim)),
                keep => keep,
            };
        }
        // every indexed question has at least one chunk
        let (best_chunk_id, similarity) = best.expect("indexed question without chunks");
        Ok(SimilarityVerdict {
            best_chunk_id: best_chunk_id.to_string(),
            similarity,
            passed: threshold.passes(similarity),
            threshold: threshold.value(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    fn chunk(id: &str, q: &str, e: Embedding) -> ReferenceChunk {
        ReferenceChunk {
            chunk_id: id.into(),
            question_id: q.into(),
            text: format!("text of {id}"),
            embedding: e,
            max_marks: 5.0,
            marking_notes: None,
        }
    }

    #[test]
    fn empty_index_knows_no_questions() {
        let idx = Rag1Index::build(2, vec![]).unwrap();
        assert_eq!(idx.question_count(), 0);
        let e = unit(vec![1.0, 0.0]);
        assert!(matches!(
            idx.check("q1", &e, Threshold::default()),
            Err(RetrievalError::QuestionUnknown(_))
        ));
    }

    #[test]
    fn counts_questions_and_chunks() {
        let e = unit(vec![1.0, 0.0]);
        let chunks = vec![
            chunk("a", "q1", e.clone()),
            chunk("b", "q1", e.clone()),
            chunk("c", "q1", e.clone()),
            chunk("d", "q2", e.clone()),
            chunk("e", "q2", e.clone()),
        ];
        let idx = Rag1Index::build(2, chunks).unwrap();
        assert_eq!(idx.question_count(), 2);
        assert_eq!(idx.chunk_count(), 5);
    }

    #[test]
    fn duplicate_and_dimension_errors() {
        let e = unit(vec![1.0, 0.0]);
        let dup = vec![chunk("a", "q1", e.clone()), chunk("a", "q2", e.clone())];
        assert_eq!(
            Rag1Index::build(2, dup).unwrap_err(),
            RetrievalError::DuplicateChunkId("a".into())
        );
        let wrong = vec![chunk("a", "q1", unit(vec![1.0, 0.0, 0.0]))];
        assert!(matches!(
            Rag1Index::build(2, wrong),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn self_match_passes() {
        let e = unit(vec![0.3, 0.4, 0.5]);
        let idx = Rag1Index::build(3, vec![chunk("a", "q1", e.clone())]).unwrap();
        let v = idx.check("q1", &e, Threshold::new(0.20).unwrap()).unwrap();
        assert!((v.similarity - 1.0).abs() < 1e-12);
        assert!(v.passed);
    }

    #[test]
    fn equal_to_threshold_fails() {
        // cos = 0.2 exactly is hard to hit by construction; use the threshold
        // rule directly and a constructed exact similarity of 0.5.
        let a = unit(vec![1.0, 0.0]);
        let b = Embedding::normalized(vec![0.5, 0.75f64.sqrt()]).unwrap();
        let idx = Rag1Index::build(2, vec![chunk("a", "q1", a)]).unwrap();
        let sim = idx.check("q1", &b, Threshold::new(0.0).unwrap()).unwrap().similarity;
        let v = idx.check("q1", &b, Threshold::new(sim).unwrap()).unwrap();
        assert!(!v.passed);
        assert!(!Threshold::new(0.20).unwrap().passes(0.20));
        assert!(Threshold::new(0.20).unwrap().passes(0.2000001));
    }

    #[test]
    fn picks_max_over_chunks() {
        // response along x; chunk cosines 0.1, 0.45, 0.3
        let resp = unit(vec![1.0, 0.0]);
        let at = |c: f64| unit(vec![c, (1.0 - c * c).sqrt()]);
        let idx = Rag1Index::build(
            2,
            vec![
                chunk("c1", "q", at(0.1)),
                chunk("c2", "q", at(0.45)),
                chunk("c3", "q", at(0.3)),
            ],
        )
        .unwrap();
        let v = idx.check("q", &resp, Threshold::default()).unwrap();
        assert_eq!(v.best_chunk_id, "c2");
        assert!((v.similarity - 0.45).abs() < 1e-12);
        assert!(v.passed);
    }

    #[test]
    fn ties_prefer_smallest_chunk_id() {
        let e = unit(vec![1.0, 1.0]);
        let idx = Rag1Index::build(2, vec![chunk("zz", "q", e.clone()), chunk("aa", "q", e.clone())]).unwrap();
        assert_eq!(idx.check("q", &e, Threshold::default()).unwrap().best_chunk_id, "aa");
    }

    #[test]
    fn negative_cosine_clamped() {
        let idx = Rag1Index::build(2, vec![chunk("a", "q", unit(vec![1.0, 0.0]))]).unwrap();
        let v = idx
            .check("q", &unit(vec![-1.0, 0.0]), Threshold::new(0.0).unwrap())
            .unwrap();
        assert_eq!(v.similarity, 0.0);
        assert!(!v.passed);
    }

    #[test]
    fn threshold_bounds() {
        assert!(Threshold::new(-0.01).is_err());
        assert!(Threshold::new(1.01).is_err());
        assert!(Threshold::new(f64::NAN).is_err());
        assert!(Threshold::new(1.0).is_ok());
    }
}
