//! Full-list ranking with train-positive exclusion and top-K metrics.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::graph::InteractionGraph;

/// Items sorted by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Integrated prediction: sampling probability times recommender preference.
pub fn integrated_score(rho_ui: f64, fr: f64) -> f64 {
    rho_ui * fr
}

/// Ranks every item that is not a train positive of `u`.
pub fn rank_items(graph: &InteractionGraph, u: u32, scores: &[f64]) -> RankedList {
    let mut items: Vec<u32> = (0..scores.len() as u32).filter(|&i| !graph.contains(u, i)).collect();
    items.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    let scores = items.iter().map(|&i| scores[i as usize]).collect();
    RankedList { user: u, items, scores }
}

fn hits_in_top(ranked: &RankedList, con: &[u32], k: usize) -> usize {
    ranked.items.iter().take(k).filter(|i| con.contains(i)).count()
}

pub fn precision_at_k(ranked: &RankedList, con: &[u32], k: usize) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    hits_in_top(ranked, con, k) as f64 / k as f64
}

pub fn recall_at_k(ranked: &RankedList, con: &[u32], k: usize) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    if con.is_empty() {
        return 0.0;
    }
    hits_in_top(ranked, con, k) as f64 / con.len() as f64
}

/// NDCG over the whole ranked list; positions are 1-based.
pub fn ndcg(ranked: &RankedList, con: &[u32]) -> f64 {
    if con.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .items
        .iter()
        .enumerate()
        .filter(|(_, i)| con.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..con.len()).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: u32,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: f64,
    pub users_evaluated: usize,
    /// Users without test positives.
    pub users_skipped: usize,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_user: Vec<UserMetrics>,
}

impl EvalReport {
    /// `metric,k,value`; the NDCG row has an empty `k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        for (j, k) in self.ks.iter().enumerate() {
            out.push_str(&format!("precision,{k},{}\n", self.precision[j]));
        }
        for (j, k) in self.ks.iter().enumerate() {
            out.push_str(&format!("recall,{k},{}\n", self.recall[j]));
        }
        out.push_str(&format!("ndcg,,{}\n", self.ndcg));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.precision[j])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.recall[j])
    }
}

/// Scores users in parallel and averages metrics over users with at least
/// one test positive. `score(u)` returns one score per item.
/// `test_by_user[u]` lists `u`'s held-out items.
pub fn evaluate<F>(graph: &InteractionGraph, test_by_user: &[Vec<u32>], ks: &[usize], keep_per_user: bool, score: F) -> EvalReport
where
    F: Fn(u32) -> Vec<f64> + Sync,
{
    let start = Instant::now();
    let per_user: Vec<Option<UserMetrics>> = (0..test_by_user.len() as u32)
        .into_par_iter()
        .map(|u| {
            let con = &test_by_user[u as usize];
            if con.is_empty() {
                return None;
            }
            let ranked = rank_items(graph, u, &score(u));
            Some(UserMetrics {
                user: u,
                precision: ks.iter().map(|&k| precision_at_k(&ranked, con, k)).collect(),
                recall: ks.iter().map(|&k| recall_at_k(&ranked, con, k)).collect(),
                ndcg: ndcg(&ranked, con),
            })
        })
        .collect();
    let evaluated: Vec<UserMetrics> = per_user.into_iter().flatten().collect();
    let cnt = evaluated.len();
    let users_skipped = test_by_user.len() - cnt;
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| {
        if cnt == 0 {
            0.0
        } else {
            evaluated.iter().map(f).sum::<f64>() / cnt as f64
        }
    };
    let precision = (0..ks.len()).map(|j| mean(&|m| m.precision[j])).collect();
    let recall = (0..ks.len()).map(|j| mean(&|m| m.recall[j])).collect();
    let ndcg = mean(&|m| m.ndcg);
    EvalReport {
        ks: ks.to_vec(),
        precision,
        recall,
        ndcg,
        users_evaluated: cnt,
        users_skipped,
        seconds: start.elapsed().as_secs_f64(),
        per_user: if keep_per_user { evaluated } else { Vec::new() },
    }
}
