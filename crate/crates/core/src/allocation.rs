//! Script anonymization and randomized reviewer allocation.
//!
//! Pseudonyms come from a seeded hash of the student id, so the same batch
//! and seed always produce the same map while pseudonyms reveal nothing
//! about submission order. Allocation shuffles scripts and reviewers,
//! deals scripts round-robin, then repairs any reviewer holding more than
//! `ceil(s / min(s, R))` of one student's `s` scripts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{AuditAction, AuditError, AuditLog, AuditPayload};

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("duplicate student id `{0}`")]
    DuplicateStudentId(String),
    #[error("duplicate script id `{0}`")]
    DuplicateScriptId(String),
    #[error("duplicate reviewer id `{0}`")]
    DuplicateReviewer(String),
    #[error("no reviewers available")]
    NoReviewers,
    #[error("no scripts to allocate")]
    NoScripts,
    #[error("pseudonym map is sealed")]
    Sealed,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// Sealed bijection from real student ids to pseudonyms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymMap {
    forward: BTreeMap<String, String>,
    #[serde(skip)]
    reverse: BTreeMap<String, String>,
    seed: u64,
    created_at: u64,
    sealed: bool,
}

fn derive_pseudonym(id: &str, seed: u64, attempt: u32) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(attempt.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    format!("anon-{}", hex::encode(&digest[..8]))
}

pub fn anonymize(students: &[String], seed: u64) -> Result<PseudonymMap, AllocationError> {
    anonymize_at(students, seed, 0)
}

/// Like [`anonymize`], stamping the map with a logical creation time.
pub fn anonymize_at(students: &[String], seed: u64, created_at: u64) -> Result<PseudonymMap, AllocationError> {
    let mut map = PseudonymMap {
        forward: BTreeMap::new(),
        reverse: BTreeMap::new(),
        seed,
        created_at,
        sealed: false,
    };
    for id in students {
        map.insert(id)?;
    }
    map.sealed = true;
    Ok(map)
}

impl PseudonymMap {
    fn insert(&mut self, id: &str) -> Result<String, AllocationError> {
        if self.forward.contains_key(id) {
            return Err(AllocationError::DuplicateStudentId(id.to_string()));
        }
        let mut attempt = 0;
        let pseudonym = loop {
            let p = derive_pseudonym(id, self.seed, attempt);
            if !self.reverse.contains_key(&p) {
                break p;
            }
            attempt += 1;
        };
        self.forward.insert(id.to_string(), pseudonym.clone());
        self.reverse.insert(pseudonym.clone(), id.to_string());
        Ok(pseudonym)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn pseudonym_of(&self, student_id: &str) -> Option<&str> {
        self.forward.get(student_id).map(String::as_str)
    }

    pub fn pseudonyms(&self) -> impl Iterator<Item = &str> {
        self.forward.values().map(String::as_str)
    }

    /// Opens the map for edits. Always leaves an audit record.
    pub fn unseal(&mut self, audit: &AuditLog, actor: &str, reason: &str) -> Result<(), AllocationError> {
        audit.append(&AuditPayload {
            actor: actor.to_string(),
            note: Some(reason.to_string()),
            ..AuditPayload::system("pseudonym-map", AuditAction::MapUnsealed)
        })?;
        self.sealed = false;
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn add_student(&mut self, student_id: &str) -> Result<String, AllocationError> {
        if self.sealed {
            return Err(AllocationError::Sealed);
        }
        self.insert(student_id)
    }

    /// Rebuilds the reverse index after deserialization.
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let mut map: Self = serde_json::from_str(json)?;
        map.reverse = map.forward.iter().map(|(k, v)| (v.clone(), k.clone())).collect();
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub script_id: String,
    pub pseudonym: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub assignments: BTreeMap<String, String>,
    pub seed: u64,
    pub constraints_satisfied: bool,
}

/// Most scripts of one `s`-script student any single reviewer may hold.
pub fn spread_cap(student_scripts: usize, reviewers: usize) -> usize {
    let spread = student_scripts.min(reviewers).max(1);
    student_scripts.div_ceil(spread)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadViolation {
    pub pseudonym: String,
    pub reviewer_id: String,
    pub count: usize,
    pub cap: usize,
}

/// Direct count of every (student, reviewer) pair over the bound.
pub fn spread_violations(scripts: &[Script], plan: &AllocationPlan, reviewers: usize) -> Vec<SpreadViolation> {
    let mut per_student: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for s in scripts {
        *per_student.entry(&s.pseudonym).or_default() += 1;
        if let Some(r) = plan.assignments.get(&s.script_id) {
            *pairs.entry((&s.pseudonym, r)).or_default() += 1;
        }
    }
    pairs
        .into_iter()
        .filter_map(|((p, r), count)| {
            let cap = spread_cap(per_student[p], reviewers);
            (count > cap).then(|| SpreadViolation {
                pseudonym: p.to_string(),
                reviewer_id: r.to_string(),
                count,
                cap,
            })
        })
        .collect()
}

pub fn allocate(scripts: &[Script], reviewers: &[String], seed: u64) -> Result<AllocationPlan, AllocationError> {
    if reviewers.is_empty() {
        return Err(AllocationError::NoReviewers);
    }
    if scripts.is_empty() {
        return Err(AllocationError::NoScripts);
    }
    let mut seen = BTreeSet::new();
    if let Some(r) = reviewers.iter().find(|r| !seen.insert(r.as_str())) {
        return Err(AllocationError::DuplicateReviewer(r.clone()));
    }
    let mut seen = BTreeSet::new();
    if let Some(s) = scripts.iter().find(|s| !seen.insert(s.script_id.as_str())) {
        return Err(AllocationError::DuplicateScriptId(s.script_id.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..scripts.len()).collect();
    order.shuffle(&mut rng);
    let mut revs: Vec<usize> = (0..reviewers.len()).collect();
    revs.shuffle(&mut rng);

    let r_count = reviewers.len();
    // assigned[script] = reviewer index
    let mut assigned = vec![0usize; scripts.len()];
    for (i, &s) in order.iter().enumerate() {
        assigned[s] = revs[i % r_count];
    }

    repair(scripts, &mut assigned, &revs, r_count);

    let plan = AllocationPlan {
        assignments: scripts
            .iter()
            .zip(&assigned)
            .map(|(s, &r)| (s.script_id.clone(), reviewers[r].clone()))
            .collect(),
        seed,
        constraints_satisfied: false,
    };
    let ok = spread_violations(scripts, &plan, r_count).is_empty();
    Ok(AllocationPlan {
        constraints_satisfied: ok,
        ..plan
    })
}

fn repair(scripts: &[Script], assigned: &mut [usize], revs: &[usize], r_count: usize) {
    let mut by_student: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in scripts.iter().enumerate() {
        by_student.entry(&s.pseudonym).or_default().push(i);
    }
    let cap_of: HashMap<&str, usize> = by_student
        .iter()
        .map(|(p, v)| (*p, spread_cap(v.len(), r_count)))
        .collect();
    let mut pair: HashMap<(&str, usize), usize> = HashMap::new();
    let mut load = vec![0usize; r_count];
    for (i, s) in scripts.iter().enumerate() {
        *pair.entry((&s.pseudonym, assigned[i])).or_default() += 1;
        load[assigned[i]] += 1;
    }

    for (student, idxs) in &by_student {
        let cap = cap_of[student];
        for &script in idxs {
            let from = assigned[script];
            if pair[&(*student, from)] <= cap {
                continue;
            }
            let targets: Vec<usize> = revs
                .iter()
                .copied()
                .filter(|&r| pair.get(&(*student, r)).copied().unwrap_or(0) < cap)
                .collect();
            // prefer a swap, which leaves every reviewer's load unchanged
            let swap = targets.iter().find_map(|&to| {
                (0..scripts.len()).find(|&x| {
                    let other = scripts[x].pseudonym.as_str();
                    assigned[x] == to
                        && other != *student
                        && pair.get(&(other, from)).copied().unwrap_or(0) < cap_of[other]
                })
            });
            match swap {
                Some(x) => {
                    let to = assigned[x];
                    let other = scripts[x].pseudonym.as_str();
                    *pair.get_mut(&(*student, from)).unwrap() -= 1;
                    *pair.entry((*student, to)).or_default() += 1;
                    *pair.get_mut(&(other, to)).unwrap() -= 1;
                    *pair.entry((other, from)).or_default() += 1;
                    assigned[script] = to;
                    assigned[x] = from;
                }
                None => {
                    let to = *targets
                        .iter()
                        .min_by_key(|&&r| load[r])
                        .expect("a reviewer under the cap always exists");
                    *pair.get_mut(&(*student, from)).unwrap() -= 1;
                    *pair.entry((*student, to)).or_default() += 1;
                    load[from] -= 1;
                    load[to] += 1;
                    assigned[script] = to;
                }
            }
        }
    }
}

impl AllocationPlan {
    pub fn loads(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for r in self.assignments.values() {
            *m.entry(r.as_str()).or_default() += 1;
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("script_id,reviewer_id\n");
        for (script, reviewer) in &self.assignments {
            let _ = writeln!(s, "{script},{reviewer}");
        }
        s
    }
}
