//! Walker–Vose alias tables for O(1) draws from a fixed discrete law.

use rand::Rng;

/// Fills `prob`/`alias` (same length as `weights`) with a Vose table.
/// Alias entries are row-local indices. Weights must be non-negative with a
/// positive sum.
pub(crate) fn build_into(weights: &[f64], prob: &mut [f64], alias: &mut [u32]) {
    let k = weights.len();
    debug_assert!(k > 0 && prob.len() == k && alias.len() == k);
    let total: f64 = weights.iter().sum();
    let mut small = Vec::with_capacity(k);
    let mut large = Vec::with_capacity(k);
    for (j, &w) in weights.iter().enumerate() {
        prob[j] = w * k as f64 / total;
        alias[j] = j as u32;
        if prob[j] < 1.0 {
            small.push(j);
        } else {
            large.push(j);
        }
    }
    while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
        small.pop();
        alias[s] = l as u32;
        prob[l] = (prob[l] + prob[s]) - 1.0;
        if prob[l] < 1.0 {
            large.pop();
            small.push(l);
        }
    }
    // leftovers are numerically 1
    for j in small.into_iter().chain(large) {
        prob[j] = 1.0;
    }
}

#[inline]
pub(crate) fn draw<R: Rng + ?Sized>(prob: &[f64], alias: &[u32], rng: &mut R) -> usize {
    let j = rng.random_range(0..prob.len());
    if rng.random::<f64>() < prob[j] {
        j
    } else {
        alias[j] as usize
    }
}

#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// `None` when `weights` is empty or sums to zero.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return None;
        }
        let mut prob = vec![0.0; weights.len()];
        let mut alias = vec![0; weights.len()];
        build_into(weights, &mut prob, &mut alias);
        Some(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw(&self.prob, &self.alias, rng)
    }

    /// Probability the table assigns to outcome `j`.
    pub fn probability(&self, j: usize) -> f64 {
        let k = self.prob.len() as f64;
        let mut p = self.prob[j];
        for (s, &a) in self.alias.iter().enumerate() {
            if a as usize == j && s != j {
                p += 1.0 - self.prob[s];
            }
        }
        p / k
    }
}
