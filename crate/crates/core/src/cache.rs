//! Supporting-material store with a two-tier fact cache.
//!
//! Every question gets its own [`TieredCache`] over a shared [`DeepStore`].
//! COLD is seeded with the `k_cold_seed` facts closest to the question; HOT
//! starts empty and receives COLD facts once their access count reaches
//! `promote_threshold`. Both tiers are capacity bounded with
//! least-frequently-used eviction, ties broken by the oldest tier entry.
//! Time is a logical counter bumped on every tier entry, so an operation
//! sequence always reproduces the same state.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{clamped_similarity, Embedder, Embedding, EmbeddingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CacheError {
    #[error("deep store is empty")]
    EmptyDeepStore,
    #[error("cannot seed {k} facts from a deep store of {store}")]
    SeedLargerThanStore { k: usize, store: usize },
    #[error("invalid cache configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate fact id `{0}`")]
    DuplicateFactId(String),
    #[error("unknown fact id `{0}`")]
    UnknownFact(String),
    #[error("invalid cache snapshot: {0}")]
    InvalidSnapshot(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Hot,
    Cold,
    DeepStore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub k_cold_seed: usize,
    pub promote_threshold: u64,
    pub hot_capacity: usize,
    pub cold_capacity: usize,
    pub retrieval_top_m: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            k_cold_seed: 5,
            promote_threshold: 3,
            hot_capacity: 32,
            cold_capacity: 256,
            retrieval_top_m: 3,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        let positive = [
            ("k_cold_seed", self.k_cold_seed as u64),
            ("promote_threshold", self.promote_threshold),
            ("hot_capacity", self.hot_capacity as u64),
            ("cold_capacity", self.cold_capacity as u64),
            ("retrieval_top_m", self.retrieval_top_m as u64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CacheError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.hot_capacity > self.cold_capacity {
            return Err(CacheError::InvalidConfig("hot_capacity exceeds cold_capacity".into()));
        }
        if self.k_cold_seed > self.cold_capacity {
            return Err(CacheError::InvalidConfig("k_cold_seed exceeds cold_capacity".into()));
        }
        Ok(())
    }
}

/// A supporting-material chunk as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub fact_id: String,
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct StoredFact {
    pub fact_id: String,
    pub topic: String,
    pub text: String,
    pub embedding: Embedding,
}

/// The full topic-chunk collection, sorted by fact id.
#[derive(Debug, Clone, Default)]
pub struct DeepStore {
    facts: Vec<StoredFact>,
    by_id: HashMap<String, usize>,
}

impl DeepStore {
    pub fn new(mut facts: Vec<StoredFact>) -> Result<Self, CacheError> {
        facts.sort_by(|a, b| a.fact_id.cmp(&b.fact_id));
        let mut by_id = HashMap::with_capacity(facts.len());
        for (i, f) in facts.iter().enumerate() {
            if by_id.insert(f.fact_id.clone(), i).is_some() {
                return Err(CacheError::DuplicateFactId(f.fact_id.clone()));
            }
        }
        Ok(Self { facts, by_id })
    }

    pub fn from_records(records: Vec<FactRecord>, embedder: &dyn Embedder) -> Result<Self, CacheError> {
        let facts = records
            .into_iter()
            .map(|r| {
                Ok(StoredFact {
                    embedding: embedder.embed(&r.text)?,
                    fact_id: r.fact_id,
                    topic: r.topic,
                    text: r.text,
                })
            })
            .collect::<Result<Vec<_>, EmbeddingError>>()?;
        Self::new(facts)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn get(&self, fact_id: &str) -> Option<&StoredFact> {
        self.by_id.get(fact_id).map(|&i| &self.facts[i])
    }

    pub fn facts(&self) -> &[StoredFact] {
        &self.facts
    }

    fn index_of(&self, fact_id: &str) -> Option<usize> {
        self.by_id.get(fact_id).copied()
    }

    /// Facts ranked by clamped similarity, ties by fact id.
    fn ranked(&self, query: &Embedding) -> Result<Vec<(usize, f64)>, CacheError> {
        let mut scored = self
            .facts
            .iter()
            .enumerate()
            .map(|(i, f)| clamped_similarity(&f.embedding, query).map(|s| (i, s)))
            .collect::<Result<Vec<_>, _>>()?;
        // facts are sorted by id, so a stable sort keeps id order within ties
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored)
    }
}

/// A fact as observed through the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct FactChunk {
    pub fact_id: String,
    pub topic: String,
    pub text: String,
    pub embedding: Embedding,
    pub access_count: u64,
    pub tier: Tier,
    pub inserted_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedFact {
    pub fact: FactChunk,
    pub similarity: f64,
}

/// One tier movement. `to == None` means the fact left the cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierTransition {
    pub fact_id: String,
    pub from: Tier,
    pub to: Option<Tier>,
    pub access_count: u64,
    pub at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resident {
    idx: usize,
    access_count: u64,
    inserted_at: u64,
}

/// Comparable view of the cache's tiers: `(fact_id, access_count, inserted_at)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheState {
    pub hot: Vec<(String, u64, u64)>,
    pub cold: Vec<(String, u64, u64)>,
    pub clock: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub lookups: u64,
    pub fallbacks: u64,
    pub facts_scanned: u64,
}

/// Persisted cache state. `hot` and `cold` list fact ids in tier-entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub config: CacheConfig,
    pub hot: Vec<String>,
    pub cold: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    pub clock: u64,
}

#[derive(Debug, Clone)]
pub struct TieredCache {
    deep: Arc<DeepStore>,
    config: CacheConfig,
    hot: BTreeMap<String, Resident>,
    cold: BTreeMap<String, Resident>,
    clock: u64,
    transitions: Vec<TierTransition>,
    stats: ScanStats,
}

impl TieredCache {
    /// Seeds COLD with the `k_cold_seed` facts nearest the question. HOT starts empty.
    pub fn init_for_question(
        deep: Arc<DeepStore>,
        question_embedding: &Embedding,
        config: CacheConfig,
    ) -> Result<Self, CacheError> {
        config.validate()?;
        if deep.is_empty() {
            return Err(CacheError::EmptyDeepStore);
        }
        if config.k_cold_seed > deep.len() {
            return Err(CacheError::SeedLargerThanStore {
                k: config.k_cold_seed,
                store: deep.len(),
            });
        }
        let ranked = deep.ranked(question_embedding)?;
        let mut cache = Self {
            deep,
            config,
            hot: BTreeMap::new(),
            cold: BTreeMap::new(),
            clock: 0,
            transitions: Vec::new(),
            stats: ScanStats::default(),
        };
        for &(idx, _) in ranked.iter().take(cache.config.k_cold_seed) {
            cache.admit_cold(idx, 0);
        }
        Ok(cache)
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn deep_store(&self) -> &Arc<DeepStore> {
        &self.deep
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn stats(&self) -> ScanStats {
        self.stats
    }

    pub fn transitions(&self) -> &[TierTransition] {
        &self.transitions
    }

    pub fn hot_len(&self) -> usize {
        self.hot.len()
    }

    pub fn cold_len(&self) -> usize {
        self.cold.len()
    }

    pub fn hot_ids(&self) -> Vec<String> {
        self.hot.keys().cloned().collect()
    }

    pub fn cold_ids(&self) -> Vec<String> {
        self.cold.keys().cloned().collect()
    }

    pub fn tier_of(&self, fact_id: &str) -> Tier {
        if self.hot.contains_key(fact_id) {
            Tier::Hot
        } else if self.cold.contains_key(fact_id) {
            Tier::Cold
        } else {
            Tier::DeepStore
        }
    }

    pub fn access_count(&self, fact_id: &str) -> Option<u64> {
        self.hot
            .get(fact_id)
            .or_else(|| self.cold.get(fact_id))
            .map(|r| r.access_count)
    }

    pub fn state(&self) -> CacheState {
        let view = |m: &BTreeMap<String, Resident>| {
            m.iter()
                .map(|(id, r)| (id.clone(), r.access_count, r.inserted_at))
                .collect()
        };
        CacheState {
            hot: view(&self.hot),
            cold: view(&self.cold),
            clock: self.clock,
        }
    }

    fn tick(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    fn fact_id(&self, idx: usize) -> &str {
        &self.deep.facts[idx].fact_id
    }

    fn admit_cold(&mut self, idx: usize, access_count: u64) {
        let at = self.tick();
        let id = self.fact_id(idx).to_string();
        self.cold.insert(
            id.clone(),
            Resident {
                idx,
                access_count,
                inserted_at: at,
            },
        );
        self.transitions.push(TierTransition {
            fact_id: id,
            from: Tier::DeepStore,
            to: Some(Tier::Cold),
            access_count,
            at,
        });
    }

    fn view(&self, r: &Resident, tier: Tier) -> FactChunk {
        let f = &self.deep.facts[r.idx];
        FactChunk {
            fact_id: f.fact_id.clone(),
            topic: f.topic.clone(),
            text: f.text.clone(),
            embedding: f.embedding.clone(),
            access_count: r.access_count,
            tier,
            inserted_at: r.inserted_at,
        }
    }

    fn bump(&mut self, fact_id: &str) -> Option<(Resident, Tier)> {
        if let Some(r) = self.hot.get_mut(fact_id) {
            r.access_count += 1;
            return Some((*r, Tier::Hot));
        }
        if let Some(r) = self.cold.get_mut(fact_id) {
            r.access_count += 1;
            return Some((*r, Tier::Cold));
        }
        None
    }

    /// Searches HOT then COLD and returns up to `retrieval_top_m` facts by
    /// similarity (HOT wins ties, then smaller fact id). Every returned fact
    /// is counted as accessed, then the promotion policy runs.
    pub fn lookup(&mut self, response: &Embedding) -> Result<Vec<RetrievedFact>, CacheError> {
        let mut candidates = Vec::with_capacity(self.hot.len() + self.cold.len());
        for (tier, map) in [(Tier::Hot, &self.hot), (Tier::Cold, &self.cold)] {
            for (id, r) in map {
                let sim = clamped_similarity(&self.deep.facts[r.idx].embedding, response)?;
                candidates.push((sim, tier, id.clone()));
            }
        }
        self.stats.lookups += 1;
        self.stats.facts_scanned += candidates.len() as u64;
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| (a.1 != Tier::Hot).cmp(&(b.1 != Tier::Hot)))
                .then_with(|| a.2.cmp(&b.2))
        });
        candidates.truncate(self.config.retrieval_top_m);

        let mut out = Vec::with_capacity(candidates.len());
        for (similarity, _, id) in candidates {
            let (r, tier) = self.bump(&id).expect("candidate is resident");
            out.push(RetrievedFact {
                fact: self.view(&r, tier),
                similarity,
            });
        }
        self.promote_and_evict();
        Ok(out)
    }

    /// Brute-force search over the whole deep store. Facts not yet cached are
    /// admitted to COLD; every returned fact is counted as accessed.
    pub fn fallback_retrieve(&mut self, response: &Embedding) -> Result<Vec<RetrievedFact>, CacheError> {
        if self.deep.is_empty() {
            return Err(CacheError::EmptyDeepStore);
        }
        let ranked = self.deep.ranked(response)?;
        self.stats.fallbacks += 1;
        self.stats.facts_scanned += self.deep.len() as u64;

        let mut out = Vec::with_capacity(self.config.retrieval_top_m);
        for &(idx, similarity) in ranked.iter().take(self.config.retrieval_top_m) {
            let id = self.fact_id(idx).to_string();
            let (r, tier) = match self.bump(&id) {
                Some(found) => found,
                None => {
                    self.admit_cold(idx, 0);
                    let (r, _) = self.bump(&id).expect("just admitted");
                    (r, Tier::DeepStore)
                }
            };
            out.push(RetrievedFact {
                fact: self.view(&r, tier),
                similarity,
            });
        }
        self.promote_and_evict();
        Ok(out)
    }

    /// Promotes every COLD fact at or above `promote_threshold`, then trims
    /// HOT (demoting to COLD) and COLD (dropping) back within capacity.
    pub fn promote_and_evict(&mut self) -> Vec<TierTransition> {
        let start = self.transitions.len();
        let threshold = self.config.promote_threshold;

        let qualifying: Vec<String> = self
            .cold
            .iter()
            .filter(|(_, r)| r.access_count >= threshold)
            .map(|(id, _)| id.clone())
            .collect();
        for id in qualifying {
            let mut r = self.cold.remove(&id).expect("listed above");
            r.inserted_at = self.tick();
            self.transitions.push(TierTransition {
                fact_id: id.clone(),
                from: Tier::Cold,
                to: Some(Tier::Hot),
                access_count: r.access_count,
                at: r.inserted_at,
            });
            self.hot.insert(id, r);
        }

        while self.hot.len() > self.config.hot_capacity {
            let id = least_used(&self.hot);
            let mut r = self.hot.remove(&id).expect("victim is resident");
            r.inserted_at = self.tick();
            self.transitions.push(TierTransition {
                fact_id: id.clone(),
                from: Tier::Hot,
                to: Some(Tier::Cold),
                access_count: r.access_count,
                at: r.inserted_at,
            });
            self.cold.insert(id, r);
        }

        while self.cold.len() > self.config.cold_capacity {
            let id = least_used(&self.cold);
            let r = self.cold.remove(&id).expect("victim is resident");
            let at = self.clock;
            self.transitions.push(TierTransition {
                fact_id: id,
                from: Tier::Cold,
                to: None,
                access_count: r.access_count,
                at,
            });
        }

        self.transitions[start..].to_vec()
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        let ordered = |m: &BTreeMap<String, Resident>| {
            let mut v: Vec<_> = m.iter().map(|(id, r)| (r.inserted_at, id.clone())).collect();
            v.sort();
            v.into_iter().map(|(_, id)| id).collect()
        };
        let counts = self
            .hot
            .iter()
            .chain(self.cold.iter())
            .map(|(id, r)| (id.clone(), r.access_count))
            .collect();
        CacheSnapshot {
            config: self.config.clone(),
            hot: ordered(&self.hot),
            cold: ordered(&self.cold),
            counts,
            clock: self.clock,
        }
    }

    /// Rebuilds a cache from a snapshot. Entry times are reassigned below the
    /// snapshot clock, preserving the recorded order within each tier, which
    /// is all the eviction tie-break looks at.
    pub fn restore(deep: Arc<DeepStore>, snapshot: &CacheSnapshot) -> Result<Self, CacheError> {
        snapshot.config.validate()?;
        let resident = snapshot.hot.len() + snapshot.cold.len();
        if (snapshot.clock as usize) < resident {
            return Err(CacheError::InvalidSnapshot("clock older than resident set".into()));
        }
        if snapshot.hot.len() > snapshot.config.hot_capacity || snapshot.cold.len() > snapshot.config.cold_capacity {
            return Err(CacheError::InvalidSnapshot("tier exceeds capacity".into()));
        }
        let mut stamp = snapshot.clock - resident as u64;
        let mut fill = |ids: &[String]| -> Result<BTreeMap<String, Resident>, CacheError> {
            let mut m = BTreeMap::new();
            for id in ids {
                let idx = deep.index_of(id).ok_or_else(|| CacheError::UnknownFact(id.clone()))?;
                let access_count = *snapshot
                    .counts
                    .get(id)
                    .ok_or_else(|| CacheError::InvalidSnapshot(format!("no count for `{id}`")))?;
                if m.insert(
                    id.clone(),
                    Resident {
                        idx,
                        access_count,
                        inserted_at: stamp,
                    },
                )
                .is_some()
                {
                    return Err(CacheError::InvalidSnapshot(format!("`{id}` listed twice")));
                }
                stamp += 1;
            }
            Ok(m)
        };
        let cold = fill(&snapshot.cold)?;
        let hot = fill(&snapshot.hot)?;
        if let Some(id) = hot.keys().find(|id| cold.contains_key(*id)) {
            return Err(CacheError::InvalidSnapshot(format!("`{id}` in both tiers")));
        }
        Ok(Self {
            deep,
            config: snapshot.config.clone(),
            hot,
            cold,
            clock: snapshot.clock,
            transitions: Vec::new(),
            stats: ScanStats::default(),
        })
    }
}

fn least_used(tier: &BTreeMap<String, Resident>) -> String {
    tier.iter()
        .min_by_key(|(_, r)| (r.access_count, r.inserted_at))
        .map(|(id, _)| id.clone())
        .expect("evicting from an empty tier")
}
