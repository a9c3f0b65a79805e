//! Agreement statistics between two raters' scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("series contains a non-finite value")]
    NonFinite,
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ConstantSeries);
    }
    let mut denom = (sxx * syy).sqrt();
    if !denom.is_normal() {
        denom = sxx.sqrt() * syy.sqrt();
    }
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Unweighted Cohen's kappa over any label type.
///
/// When both raters use a single identical label throughout, expected
/// agreement is 1 and the result is defined as 1.0.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    // Integer counts until the final division: (n·agree − Σ ca·cb) / (n² − Σ ca·cb).
    let n = a.len() as u128;
    let mut marg: BTreeMap<&T, (u128, u128)> = BTreeMap::new();
    let mut agree = 0u128;
    for (x, y) in a.iter().zip(b) {
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let chance: u128 = marg.values().map(|(ca, cb)| ca * cb).sum();
    if chance == n * n {
        return Ok(1.0);
    }
    Ok((n as f64 * agree as f64 - chance as f64) / ((n * n - chance) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaWeighting {
    #[default]
    Unweighted,
    Linear,
    Quadratic,
}

/// Kappa over the four ordered grade categories with optional disagreement weights.
pub fn category_kappa(a: &[Category], b: &[Category], weighting: KappaWeighting) -> Result<f64, MetricsError> {
    if weighting == KappaWeighting::Unweighted {
        return cohen_kappa(a, b);
    }
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    const K: usize = 4;
    let n = a.len() as f64;
    let mut obs = [[0.0f64; K]; K];
    for (x, y) in a.iter().zip(b) {
        obs[x.index()][y.index()] += 1.0;
    }
    let rows: Vec<f64> = (0..K).map(|i| obs[i].iter().sum::<f64>() / n).collect();
    let cols: Vec<f64> = (0..K).map(|j| (0..K).map(|i| obs[i][j]).sum::<f64>() / n).collect();
    let weight = |i: usize, j: usize| {
        let d = i.abs_diff(j) as f64 / (K - 1) as f64;
        match weighting {
            KappaWeighting::Linear => 1.0 - d,
            _ => 1.0 - d * d,
        }
    };
    let (mut po, mut pe) = (0.0, 0.0);
    for i in 0..K {
        for j in 0..K {
            po += weight(i, j) * obs[i][j] / n;
            pe += weight(i, j) * rows[i] * cols[j];
        }
    }
    if pe >= 1.0 {
        return Ok(1.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub item_id: String,
    /// AI score.
    pub score_a: f64,
    /// Human score.
    pub score_b: f64,
    pub category_a: Category,
    pub category_b: Category,
}

/// Rows indexed by human category, columns by AI category, both in
/// FAIL, AVERAGE, GOOD, EXCELLENT order.
pub type ConfusionMatrix = [[u64; 4]; 4];

pub fn confusion_matrix(pairs: &[ScorePair]) -> ConfusionMatrix {
    let mut m = [[0u64; 4]; 4];
    for p in pairs {
        m[p.category_b.index()][p.category_a.index()] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pearson: f64,
    pub spearman: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
    pub n: usize,
}

impl AgreementReport {
    pub fn from_pairs(pairs: &[ScorePair], weighting: KappaWeighting) -> Result<Self, MetricsError> {
        let ai: Vec<f64> = pairs.iter().map(|p| p.score_a).collect();
        let human: Vec<f64> = pairs.iter().map(|p| p.score_b).collect();
        let ca: Vec<Category> = pairs.iter().map(|p| p.category_a).collect();
        let cb: Vec<Category> = pairs.iter().map(|p| p.category_b).collect();
        Ok(Self {
            pearson: pearson(&ai, &human)?,
            spearman: spearman(&ai, &human)?,
            kappa: category_kappa(&ca, &cb, weighting)?,
            confusion: confusion_matrix(pairs),
            n: pairs.len(),
        })
    }

    /// CSV with a `human\ai` corner header and one row per human category.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("human\\ai");
        for c in Category::ALL {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (row, c) in self.confusion.iter().zip(Category::ALL) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}
