//! Seeded synthetic exam corpus with ground-truth scores.
//!
//! Each question has its own topic vocabulary of pseudo-words. Facts are
//! short sentences over that vocabulary, the faculty answer concatenates a
//! few of the topic's facts, and every student response is the faculty
//! answer with each token independently corrupted with probability `c`
//! (dropped or replaced by a noise word). The ground-truth score is
//! `max_marks · (1 − c)`.
//!
//! Noise words are spelled from a consonant set disjoint from the topic
//! vocabulary, so substituted tokens share no character trigrams with the
//! reference material. Question prompts drift away from their topic as the
//! question index grows: later prompts borrow more words from unrelated
//! topics, which weakens any grader that only sees the prompt.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::anonymize;
use crate::cache::FactRecord;
use crate::corpus::{Corpus, HumanScore, QuestionRecord};
use crate::pipeline::StudentResponse;
use crate::retrieval::ReferenceRecord;

const TOPIC_CONSONANTS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const NOISE_CONSONANTS: &[&str] = &["j", "q", "w", "x", "y", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const FUNCTION_WORDS: &[&str] = &["the", "of", "and", "in", "to", "a", "is", "its", "for", "on", "as"];

const TOPIC_VOCABULARY: usize = 24;
const NOISE_VOCABULARY: usize = 400;
const TOPIC_WORDS_PER_FACT: usize = 6;
const PROMPT_WORDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_questions: usize,
    pub n_facts_per_topic: usize,
    pub n_responses_per_question: usize,
    pub corruption_levels: Vec<f64>,
    pub seed: u64,
    pub max_marks: f64,
    /// Facts concatenated into each faculty answer.
    pub facts_per_answer: usize,
    /// Off-topic share of the last question's prompt; earlier prompts scale linearly.
    pub topic_drift: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_questions: 50,
            n_facts_per_topic: 12,
            n_responses_per_question: 10,
            corruption_levels: (0..=10).map(|i| i as f64 / 10.0).collect(),
            seed: 7,
            max_marks: 10.0,
            facts_per_answer: 3,
            topic_drift: 0.9,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.into()));
        if self.n_questions == 0 || self.n_facts_per_topic == 0 || self.n_responses_per_question == 0 {
            return bad("counts must be positive");
        }
        if self.corruption_levels.is_empty() {
            return bad("corruption_levels must be non-empty");
        }
        if self.corruption_levels.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("corruption levels must lie in [0, 1]");
        }
        if !(self.max_marks.is_finite() && self.max_marks > 0.0) {
            return bad("max_marks must be positive");
        }
        if self.facts_per_answer == 0 || self.facts_per_answer > self.n_facts_per_topic {
            return bad("facts_per_answer must be in 1..=n_facts_per_topic");
        }
        if !(0.0..=1.0).contains(&self.topic_drift) {
            return bad("topic_drift must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn total_responses(&self) -> usize {
        self.n_questions * self.n_responses_per_question
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub responses: Vec<StudentResponse>,
    /// Ground truth, aligned with `responses`.
    pub oracle_scores: Vec<HumanScore>,
    /// Corruption level used for each response, aligned with `responses`.
    pub corruption: Vec<f64>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, consonants: &[&str], syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", consonants.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn vocabulary(rng: &mut ChaCha8Rng, consonants: &[&str], size: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let syllables = rng.gen_range(2..=4);
        let w = pseudo_word(rng, consonants, syllables);
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// Replaces or drops each token with probability `level`. Never returns an
/// empty string.
pub fn corrupt(text: &str, level: f64, noise: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut out: Vec<&str> = Vec::new();
    for token in text.split_whitespace() {
        if rng.gen_bool(level) {
            if rng.gen_bool(0.5) {
                out.push(noise.choose(rng).expect("noise vocabulary is non-empty"));
            }
        } else {
            out.push(token);
        }
    }
    if out.is_empty() {
        out.push(noise.choose(rng).expect("noise vocabulary is non-empty"));
    }
    out.join(" ")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = vocabulary(&mut rng, NOISE_CONSONANTS, NOISE_VOCABULARY);
    let topics: Vec<Vec<String>> = (0..spec.n_questions)
        .map(|_| vocabulary(&mut rng, TOPIC_CONSONANTS, TOPIC_VOCABULARY))
        .collect();

    let students: Vec<String> = (0..spec.n_responses_per_question)
        .map(|j| format!("student-{j:04}"))
        .collect();
    let pseudonyms = anonymize(&students, spec.seed).expect("generated student ids are unique");

    let mut corpus = Corpus::default();
    let mut responses = Vec::with_capacity(spec.total_responses());
    let mut oracle_scores = Vec::with_capacity(spec.total_responses());
    let mut corruption = Vec::with_capacity(spec.total_responses());

    for (q, vocab) in topics.iter().enumerate() {
        let topic = format!("topic-{q:03}");
        let facts: Vec<String> = (0..spec.n_facts_per_topic)
            .map(|_| {
                let mut words: Vec<&str> = vocab
                    .choose_multiple(&mut rng, TOPIC_WORDS_PER_FACT)
                    .map(String::as_str)
                    .collect();
                for slot in [1, 4, 6] {
                    words.insert(slot.min(words.len()), FUNCTION_WORDS.choose(&mut rng).unwrap());
                }
                words.join(" ")
            })
            .collect();
        for (i, text) in facts.iter().enumerate() {
            corpus.facts.push(FactRecord {
                fact_id: format!("f{q:03}-{i:02}"),
                topic: topic.clone(),
                text: text.clone(),
            });
        }

        let mut picks: Vec<usize> = (0..facts.len()).collect();
        picks.shuffle(&mut rng);
        let answer = picks[..spec.facts_per_answer]
            .iter()
            .map(|&i| facts[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");

        let drift = if spec.n_questions > 1 {
            spec.topic_drift * q as f64 / (spec.n_questions - 1) as f64
        } else {
            0.0
        };
        let prompt_words: Vec<&str> = (0..PROMPT_WORDS)
            .map(|_| {
                let source = if rng.gen_bool(drift) {
                    &topics[rng.gen_range(0..topics.len())]
                } else {
                    vocab
                };
                source.choose(&mut rng).unwrap().as_str()
            })
            .collect();
        let qid = format!("q{q:03}");
        corpus.questions.push(QuestionRecord {
            question_id: qid.clone(),
            topic: topic.clone(),
            text: format!("explain {} and its significance", prompt_words.join(" ")),
        });
        corpus.references.push(ReferenceRecord {
            chunk_id: format!("{qid}-ref"),
            question_id: qid.clone(),
            text: answer.clone(),
            max_marks: spec.max_marks,
            marking_notes: None,
        });

        for (j, student) in students.iter().enumerate() {
            let level = *spec.corruption_levels.choose(&mut rng).unwrap();
            let rid = format!("r{q:03}-{j:03}");
            responses.push(StudentResponse {
                response_id: rid.clone(),
                pseudonym: pseudonyms.pseudonym_of(student).unwrap().to_string(),
                question_id: qid.clone(),
                transcript: corrupt(&answer, level, &noise, &mut rng),
                transcript_confidence: 1.0,
            });
            oracle_scores.push(HumanScore {
                response_id: rid,
                score: spec.max_marks * (1.0 - level),
            });
            corruption.push(level);
        }
    }

    Ok(SyntheticCorpus {
        corpus,
        responses,
        oracle_scores,
        corruption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_questions: 4,
            n_responses_per_question: 6,
            ..Default::default()
        }
    }

    #[test]
    fn zero_corruption_is_verbatim() {
        let spec = SyntheticSpec {
            corruption_levels: vec![0.0],
            ..small()
        };
        let s = generate_synthetic(&spec).unwrap();
        for (r, o) in s.responses.iter().zip(&s.oracle_scores) {
            let reference = s
                .corpus
                .references
                .iter()
                .find(|c| c.question_id == r.question_id)
                .unwrap();
            assert_eq!(r.transcript, reference.text);
            assert_eq!(o.score, spec.max_marks);
        }
    }

    #[test]
    fn full_corruption_scores_zero_and_replaces_everything() {
        let spec = SyntheticSpec {
            corruption_levels: vec![1.0],
            ..small()
        };
        let s = generate_synthetic(&spec).unwrap();
        let topic_words: std::collections::HashSet<&str> =
            s.corpus.facts.iter().flat_map(|f| f.text.split_whitespace()).collect();
        for (r, o) in s.responses.iter().zip(&s.oracle_scores) {
            assert_eq!(o.score, 0.0);
            assert!(!r.transcript.is_empty());
            assert!(r.transcript.split_whitespace().all(|w| !topic_words.contains(w)));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 99, ..small() }).unwrap();
        assert_ne!(a.responses, c.responses);
    }

    #[test]
    fn counts_and_ids() {
        let s = generate_synthetic(&small()).unwrap();
        assert_eq!(s.corpus.questions.len(), 4);
        assert_eq!(s.corpus.references.len(), 4);
        assert_eq!(s.corpus.facts.len(), 4 * 12);
        assert_eq!(s.responses.len(), 24);
        let mut ids: Vec<_> = s.responses.iter().map(|r| r.response_id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 24);
        assert!(s.responses.iter().all(|r| r.pseudonym.starts_with("anon-")));
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec {
                corruption_levels: vec![],
                ..small()
            },
            SyntheticSpec {
                corruption_levels: vec![1.5],
                ..small()
            },
            SyntheticSpec {
                n_questions: 0,
                ..small()
            },
            SyntheticSpec {
                facts_per_answer: 99,
                ..small()
            },
        ] {
            assert!(generate_synthetic(&spec).is_err());
        }
    }
}
