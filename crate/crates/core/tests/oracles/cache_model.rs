//! List-based model of the two-tier cache rules.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Hot,
    Cold,
}

#[derive(Debug, Clone)]
struct Entry {
    id: String,
    tier: Tier,
    count: u64,
    at: u64,
}

#[derive(Debug, Clone)]
pub struct Params {
    pub k: usize,
    pub promote: u64,
    pub hot_cap: usize,
    pub cold_cap: usize,
    pub top_m: usize,
}

pub struct Model {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    params: Params,
    entries: Vec<Entry>,
    pub clock: u64,
}

/// (id, access_count, inserted_at) per tier, sorted by id, plus the clock.
pub type State = (Vec<(String, u64, u64)>, Vec<(String, u64, u64)>, u64);

fn sim(a: &[f64], b: &[f64]) -> f64 {
    super::embedding::dot(a, b).clamp(0.0, 1.0)
}

impl Model {
    /// `facts` must be (id, unit vector) pairs.
    pub fn new(mut facts: Vec<(String, Vec<f64>)>, params: Params, question: &[f64]) -> Self {
        facts.sort_by(|a, b| a.0.cmp(&b.0));
        let (ids, vectors) = facts.into_iter().unzip();
        let mut m = Model {
            ids,
            vectors,
            params,
            entries: Vec::new(),
            clock: 0,
        };
        for i in m.rank(question).into_iter().take(m.params.k) {
            m.admit(i);
        }
        m
    }

    fn rank(&self, q: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ids.len()).collect();
        idx.sort_by(|&a, &b| {
            sim(&self.vectors[b], q)
                .total_cmp(&sim(&self.vectors[a], q))
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        idx
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock - 1
    }

    fn admit(&mut self, i: usize) {
        let at = self.tick();
        self.entries.push(Entry {
            id: self.ids[i].clone(),
            tier: Tier::Cold,
            count: 0,
            at,
        });
    }

    fn find(&mut self, id: &str) -> Option<&mut Entry> {
        self.entries.iter_mut().find(|e| e.id == id)
    }

    fn vector(&self, id: &str) -> &[f64] {
        &self.vectors[self.ids.iter().position(|x| x == id).unwrap()]
    }

    /// Returned ids in rank order.
    pub fn lookup(&mut self, q: &[f64]) -> Vec<String> {
        let mut cands: Vec<(f64, bool, String)> = self
            .entries
            .iter()
            .map(|e| (sim(self.vector(&e.id), q), e.tier == Tier::Hot, e.id.clone()))
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        cands.truncate(self.params.top_m);
        for (_, _, id) in &cands {
            self.find(id).unwrap().count += 1;
        }
        self.promote_and_evict();
        cands.into_iter().map(|c| c.2).collect()
    }

    pub fn fallback(&mut self, q: &[f64]) -> Vec<String> {
        let top: Vec<usize> = self.rank(q).into_iter().take(self.params.top_m).collect();
        let mut out = Vec::new();
        for i in top {
            let id = self.ids[i].clone();
            if self.find(&id).is_none() {
                self.admit(i);
            }
            self.find(&id).unwrap().count += 1;
            out.push(id);
        }
        self.promote_and_evict();
        out
    }

    fn victim(&self, tier: Tier) -> usize {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].tier == tier)
            .min_by_key(|&i| (self.entries[i].count, self.entries[i].at))
            .unwrap()
    }

    fn len(&self, tier: Tier) -> usize {
        self.entries.iter().filter(|e| e.tier == tier).count()
    }

    pub fn promote_and_evict(&mut self) {
        let mut qualifying: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].tier == Tier::Cold && self.entries[i].count >= self.params.promote)
            .collect();
        qualifying.sort_by(|&a, &b| self.entries[a].id.cmp(&self.entries[b].id));
        for i in qualifying {
            let at = self.tick();
            self.entries[i].tier = Tier::Hot;
            self.entries[i].at = at;
        }
        while self.len(Tier::Hot) > self.params.hot_cap {
            let v = self.victim(Tier::Hot);
            let at = self.tick();
            self.entries[v].tier = Tier::Cold;
            self.entries[v].at = at;
        }
        while self.len(Tier::Cold) > self.params.cold_cap {
            let v = self.victim(Tier::Cold);
            self.entries.remove(v);
        }
    }

    pub fn state(&self) -> State {
        let tier = |t: Tier| {
            let mut v: Vec<_> = self
                .entries
                .iter()
                .filter(|e| e.tier == t)
                .map(|e| (e.id.clone(), e.count, e.at))
                .collect();
            v.sort();
            v
        };
        (tier(Tier::Hot), tier(Tier::Cold), self.clock)
    }
}
