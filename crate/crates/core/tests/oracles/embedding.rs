//! Hash, count and normalize, one gram at a time.

const OFFSET: u64 = 0xcbf29ce484222325;
const PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = OFFSET;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

pub fn embed(text: &str, dimension: usize, n: usize, seed: u64) -> Vec<f64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let clean = words.join(" ").to_lowercase();
    let chars: Vec<char> = clean.chars().collect();
    let grams: Vec<String> = if chars.len() <= n {
        vec![clean.clone()]
    } else {
        (0..=chars.len() - n)
            .map(|i| chars[i..i + n].iter().collect())
            .collect()
    };
    let mut counts = vec![0.0; dimension];
    for g in grams {
        let mut bytes = seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(g.as_bytes());
        counts[(fnv1a(bytes) % dimension as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    counts.iter().map(|c| c / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
