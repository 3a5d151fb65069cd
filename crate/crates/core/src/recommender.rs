//! Matrix-factorization recommender with a Bernoulli likelihood.
//!
//! `f_r(u, i) = sigmoid(<p_u, q_i>)`, clamped to `[EPS, 1 - EPS]`. Both
//! embedding tables live in one flat parameter vector (users first, then
//! items, row-major) so a single [`Adam`](crate::optim::Adam) state covers
//! the whole model.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::rng::{self, Purpose};
use crate::sampler::SampleBatch;

/// Probability clamp shared by prediction, rewards and the objective.
pub const EPS: f64 = 1e-7;

pub const DEFAULT_DIM: usize = 32;
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RecommenderModel {
    n: usize,
    m: usize,
    d: usize,
    params: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RecommenderModel {
    /// Embeddings drawn from `Normal(0, 0.1^2)`.
    pub fn init(n: usize, m: usize, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut r = rng::global(seed, Purpose::Init, 0);
        let params = (0..(n + m) * d).map(|_| normal.sample(&mut r)).collect();
        Ok(RecommenderModel { n, m, d, params })
    }

    pub fn from_parts(n: usize, m: usize, d: usize, params: Vec<f64>) -> Result<Self> {
        if d == 0 || params.len() != (n + m) * d {
            return Err(Error::InvalidParameter(format!(
                "parameter length {} does not match ({n} + {m}) x {d}",
                params.len()
            )));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite embedding entry".into()));
        }
        Ok(RecommenderModel { n, m, d, params })
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    fn user_row(&self, u: u32) -> &[f64] {
        let s = u as usize * self.d;
        &self.params[s..s + self.d]
    }

    #[inline]
    fn item_offset(&self, i: u32) -> usize {
        (self.n + i as usize) * self.d
    }

    #[inline]
    fn item_row(&self, i: u32) -> &[f64] {
        let s = self.item_offset(i);
        &self.params[s..s + self.d]
    }

    #[inline]
    fn raw(&self, u: u32, i: u32) -> f64 {
        sigmoid(self.user_row(u).iter().zip(self.item_row(i)).map(|(a, b)| a * b).sum())
    }

    #[inline]
    fn fr(&self, u: u32, i: u32) -> f64 {
        self.raw(u, i).clamp(EPS, 1.0 - EPS)
    }

    pub fn predict_fr(&self, u: u32, i: u32) -> Result<f64> {
        if u as usize >= self.n {
            return Err(Error::OutOfRange { kind: "user", id: u as usize, count: self.n });
        }
        if i as usize >= self.m {
            return Err(Error::OutOfRange { kind: "item", id: i as usize, count: self.m });
        }
        Ok(self.fr(u, i))
    }

    /// `f_r(u, ·)` for every item.
    pub fn predict_user(&self, u: u32) -> Vec<f64> {
        (0..self.m as u32).map(|i| self.fr(u, i)).collect()
    }

    /// `(1 - x_ui) * log(1 - f_r(u, i))`.
    pub fn reward(&self, graph: &InteractionGraph, u: u32, i: u32) -> f64 {
        if graph.contains(u, i) {
            0.0
        } else {
            (1.0 - self.fr(u, i)).ln()
        }
    }

    /// Rewards aligned with `batch.items`.
    pub fn batch_rewards(&self, batch: &SampleBatch) -> Vec<f64> {
        batch
            .items
            .iter()
            .zip(&batch.is_positive)
            .map(|(&i, &pos)| if pos { 0.0 } else { (1.0 - self.fr(batch.user, i)).ln() })
            .collect()
    }

    /// Rows touched by a set of batches: the users, their positives and
    /// every sampled item. Each row is listed once.
    fn touched(&self, graph: &InteractionGraph, batches: &[SampleBatch]) -> (Vec<u32>, Vec<u32>) {
        let mut users: Vec<u32> = batches.iter().map(|b| b.user).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<u32> = batches
            .iter()
            .flat_map(|b| graph.user_items(b.user).iter().chain(&b.items).copied())
            .collect();
        items.sort_unstable();
        items.dedup();
        (users, items)
    }

    fn sq_norm(row: &[f64]) -> f64 {
        row.iter().map(|x| x * x).sum()
    }

    /// Sampled objective over a mini-batch:
    /// `sum_u [ sum_{i in X_u} log f_r + sum_{a in G_u} (1 - x_ua) log(1 - f_r) ]`
    /// minus `l2 / 2` times the squared norm of every touched row.
    pub fn objective(&self, graph: &InteractionGraph, batches: &[SampleBatch], l2: f64) -> f64 {
        let mut total = 0.0;
        for b in batches {
            for &i in graph.user_items(b.user) {
                total += self.fr(b.user, i).ln();
            }
            for i in b.rest_part() {
                total += (1.0 - self.fr(b.user, i)).ln();
            }
        }
        if l2 != 0.0 {
            let (users, items) = self.touched(graph, batches);
            let reg: f64 = users.iter().map(|&u| Self::sq_norm(self.user_row(u))).sum::<f64>()
                + items.iter().map(|&i| Self::sq_norm(self.item_row(i))).sum::<f64>();
            total -= 0.5 * l2 * reg;
        }
        total
    }

    /// Dense gradient of [`Self::objective`]. Entries outside touched rows
    /// are exactly zero. Where the clamp is active the log term is flat, so
    /// its contribution vanishes.
    pub fn gradient(&self, graph: &InteractionGraph, batches: &[SampleBatch], l2: f64) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; self.params.len()];
        let pair = |g: &mut [f64], u: u32, i: u32, coef: f64| {
            if coef == 0.0 {
                return;
            }
            let us = u as usize * d;
            let is = self.item_offset(i);
            for k in 0..d {
                g[us + k] += coef * self.params[is + k];
                g[is + k] += coef * self.params[us + k];
            }
        };
        for b in batches {
            let u = b.user;
            for &i in graph.user_items(u) {
                let s = self.raw(u, i);
                let coef = if (EPS..=1.0 - EPS).contains(&s) { 1.0 - s } else { 0.0 };
                pair(&mut g, u, i, coef);
            }
            for i in b.rest_part() {
                let s = self.raw(u, i);
                let coef = if (EPS..=1.0 - EPS).contains(&s) { -s } else { 0.0 };
                pair(&mut g, u, i, coef);
            }
        }
        if l2 != 0.0 {
            let (users, items) = self.touched(graph, batches);
            let rows = users.iter().map(|&u| u as usize * d).chain(items.iter().map(|&i| self.item_offset(i)));
            for s in rows {
                for (gk, pk) in g[s..s + d].iter_mut().zip(&self.params[s..s + d]) {
                    *gk -= l2 * pk;
                }
            }
        }
        g
    }
}
