//! Textbook formulas, quadratic where that is simpler.

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Rank of each value = 1 + (#smaller) + (#equal − 1) / 2.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Unweighted kappa from integer counts over labels `0..k`.
pub fn kappa(a: &[usize], b: &[usize], k: usize) -> f64 {
    let n = a.len() as u64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u64;
    let mut chance = 0u64;
    for label in 0..k {
        let ca = a.iter().filter(|&&x| x == label).count() as u64;
        let cb = b.iter().filter(|&&y| y == label).count() as u64;
        chance += ca * cb;
    }
    if chance == n * n {
        return 1.0;
    }
    let (n2, chance, agree) = ((n * n) as f64, chance as f64, agree as f64);
    (agree * n as f64 - chance) / (n2 - chance)
}
