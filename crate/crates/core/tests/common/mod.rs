//! Reference computations for the integration tests. Nothing here calls the
//! sampler's own propagation or weight code: transition weights are
//! recomputed from the raw logits, walks are enumerated by brute force, and
//! fixed points come from a dense linear solve.

#![allow(dead_code)]

use cosam::alias::AliasTable;
use cosam::data::{ImplicitDataset, SplitDataset, Vocab, VocabKind};
use cosam::trainer::{train_observed, variance_probe, SamplerKind, TrainConfig};
use cosam::graph::{InteractionGraph, NodeId};
use cosam::recommender::RecommenderModel;
use cosam::sampler::{GradBuffer, PathEvidence, SamplerConfig, SamplerModel, Terminal, WalkPath};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Softmax of each node's logit row.
pub fn softmax_rows(g: &InteractionGraph, logits: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; logits.len()];
    for v in 0..g.node_count() as u32 {
        let r = g.edge_range(NodeId(v));
        let z: f64 = logits[r.clone()].iter().map(|x| x.exp()).sum();
        for e in r {
            w[e] = logits[e].exp() / z;
        }
    }
    w
}

/// Random bipartite graph where every user and item has at least one edge.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, m: usize, density: f64) -> InteractionGraph {
    let mut pairs = Vec::new();
    for u in 0..n as u32 {
        for i in 0..m as u32 {
            if rng.random::<f64>() < density {
                pairs.push((u, i));
            }
        }
    }
    for u in 0..n as u32 {
        pairs.push((u, rng.random_range(0..m as u32)));
    }
    for i in 0..m as u32 {
        pairs.push((rng.random_range(0..n as u32), i));
    }
    InteractionGraph::from_pairs(n, m, &pairs).unwrap()
}

pub fn random_logits<R: Rng>(rng: &mut R, g: &InteractionGraph, scale: f64) -> Vec<f64> {
    (0..g.directed_edge_count()).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

/// One emission event of the capped walk and its probability.
#[derive(Debug, Clone)]
pub struct Event {
    pub path: WalkPath,
    pub prob: f64,
}

/// Every (walk, emitted item) event of the walk capped at `l_max`
/// transitions. Walks that end on the user side are listed once per item.
pub fn enumerate_capped(g: &InteractionGraph, logits: &[f64], c1: f64, c2: f64, l_max: usize, u: u32) -> Vec<Event> {
    let w = softmax_rows(g, logits);
    let m = g.n_items();
    let mut out = Vec::new();
    if g.user_degree(u) == 0 {
        for i in 0..m as u32 {
            out.push(Event {
                path: WalkPath { nodes: vec![NodeId(u)], edges: vec![], emitted: i, terminal: Terminal::User },
                prob: 1.0 / m as f64,
            });
        }
        return out;
    }
    let n = g.n_users() as u32;
    let mut nodes = vec![NodeId(u)];
    let mut edges = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        g: &InteractionGraph,
        w: &[f64],
        c: (f64, f64),
        l_max: usize,
        n: u32,
        m: usize,
        nodes: &mut Vec<NodeId>,
        edges: &mut Vec<u32>,
        prob: f64,
        out: &mut Vec<Event>,
    ) {
        let v = *nodes.last().unwrap();
        let on_user = v.0 < n;
        let mk = |emitted: u32, terminal: Terminal, p: f64| Event {
            path: WalkPath { nodes: nodes.clone(), edges: edges.clone(), emitted, terminal },
            prob: p,
        };
        if edges.len() == l_max {
            if on_user {
                for i in 0..m as u32 {
                    out.push(mk(i, Terminal::Truncated, prob / m as f64));
                }
            } else {
                out.push(mk(v.0 - n, Terminal::Truncated, prob));
            }
            return;
        }
        let cont = if on_user { c.0 } else { c.1 };
        if on_user {
            for i in 0..m as u32 {
                out.push(mk(i, Terminal::User, prob * (1.0 - cont) / m as f64));
            }
        } else {
            out.push(mk(v.0 - n, Terminal::Item, prob * (1.0 - cont)));
        }
        if cont == 0.0 {
            return;
        }
        let r = g.edge_range(v);
        let nbrs = g.neighbors(v).unwrap();
        for (k, e) in r.enumerate() {
            let next = if on_user { NodeId(n + nbrs[k]) } else { NodeId(nbrs[k]) };
            nodes.push(next);
            edges.push(e as u32);
            rec(g, w, c, l_max, n, m, nodes, edges, prob * cont * w[e], out);
            nodes.pop();
            edges.pop();
        }
    }
    rec(g, &w, (c1, c2), l_max, n, m, &mut nodes, &mut edges, 1.0, &mut out);
    out
}

/// Emission law of the capped walk, summed from [`enumerate_capped`].
pub fn capped_distribution_by_paths(events: &[Event], m: usize) -> Vec<f64> {
    let mut p = vec![0.0; m];
    for e in events {
        p[e.path.emitted as usize] += e.prob;
    }
    p
}

/// Emission law of the capped walk by propagating a node-occupancy vector
/// with a dense transition matrix, one step at a time.
pub fn capped_distribution_dp(g: &InteractionGraph, logits: &[f64], c1: f64, c2: f64, l_max: usize, u: u32) -> Vec<f64> {
    let (n, m) = (g.n_users(), g.n_items());
    if g.user_degree(u) == 0 {
        return vec![1.0 / m as f64; m];
    }
    let w = softmax_rows(g, logits);
    let size = n + m;
    let mut t = DMatrix::<f64>::zeros(size, size);
    for v in 0..size {
        let vid = NodeId(v as u32);
        let nbrs = g.neighbors(vid).unwrap();
        for (k, e) in g.edge_range(vid).enumerate() {
            let target = if v < n { n + nbrs[k] as usize } else { nbrs[k] as usize };
            t[(target, v)] = w[e];
        }
    }
    let mut occ = DVector::<f64>::zeros(size);
    occ[u as usize] = 1.0;
    let mut out = vec![0.0; m];
    for step in 0..=l_max {
        let user_mass: f64 = occ.rows(0, n).sum();
        if step == l_max {
            for i in 0..m {
                out[i] += user_mass / m as f64 + occ[n + i];
            }
            break;
        }
        let mut cont = occ.clone();
        for v in 0..size {
            let c = if v < n { c1 } else { c2 };
            if v < n {
                for o in out.iter_mut() {
                    *o += (1.0 - c) * occ[v] / m as f64;
                }
            } else {
                out[v - n] += (1.0 - c) * occ[v];
            }
            cont[v] *= c;
        }
        occ = &t * cont;
    }
    out
}

/// Untruncated fixed point for every user (rows) over items (columns),
/// from the stacked linear system `(I - C W) x = (I - C) b`.
pub fn dense_fixed_point(g: &InteractionGraph, logits: &[f64], c1: f64, c2: f64) -> DMatrix<f64> {
    let (n, m) = (g.n_users(), g.n_items());
    let size = n + m;
    let w = softmax_rows(g, logits);
    let mut a = DMatrix::<f64>::identity(size, size);
    let mut b = DMatrix::<f64>::zeros(size, m);
    for v in 0..size {
        let vid = NodeId(v as u32);
        let nbrs = g.neighbors(vid).unwrap();
        let c = if v < n { c1 } else { c2 };
        if nbrs.is_empty() {
            // isolated node keeps its initial vector
            if v < n {
                b.row_mut(v).fill(1.0 / m as f64);
            } else {
                b[(v, v - n)] = 1.0;
            }
            continue;
        }
        for (k, e) in g.edge_range(vid).enumerate() {
            let col = if v < n { n + nbrs[k] as usize } else { nbrs[k] as usize };
            a[(v, col)] -= c * w[e];
        }
        if v < n {
            b.row_mut(v).fill((1.0 - c) / m as f64);
        } else {
            b[(v, v - n)] = 1.0 - c;
        }
    }
    let x = a.lu().solve(&b).expect("nonsingular system");
    x.rows(0, n).into_owned()
}

/// Sum of path strengths over item-terminated walks of the uncapped
/// process up to `max_len` transitions, per emitted item.
pub fn item_path_mass(g: &InteractionGraph, logits: &[f64], c1: f64, c2: f64, max_len: usize, u: u32) -> Vec<f64> {
    let w = softmax_rows(g, logits);
    let n = g.n_users() as u32;
    let mut out = vec![0.0; g.n_items()];
    #[allow(clippy::too_many_arguments)]
    fn rec(g: &InteractionGraph, w: &[f64], c: (f64, f64), n: u32, v: NodeId, depth: usize, max_len: usize, prob: f64, out: &mut [f64]) {
        let on_user = v.0 < n;
        if !on_user {
            out[(v.0 - n) as usize] += prob * (1.0 - c.1);
        }
        if depth == max_len {
            return;
        }
        let cont = if on_user { c.0 } else { c.1 };
        let nbrs = g.neighbors(v).unwrap();
        for (k, e) in g.edge_range(v).enumerate() {
            let next = if on_user { NodeId(n + nbrs[k]) } else { NodeId(nbrs[k]) };
            rec(g, w, c, n, next, depth + 1, max_len, prob * cont * w[e], out);
        }
    }
    rec(g, &w, (c1, c2), n, NodeId(u), 0, max_len, 1.0, &mut out);
    out
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Metrics of one user recomputed by definition: each candidate's 1-based
/// rank is one plus the number of candidates that beat it (higher score,
/// or equal score and lower id).
pub fn brute_user_metrics(scores: &[f64], train: &[u32], con: &[u32], ks: &[usize]) -> (Vec<f64>, Vec<f64>, f64) {
    let cand: Vec<usize> = (0..scores.len()).filter(|i| !train.contains(&(*i as u32))).collect();
    let rank_of = |i: usize| {
        1 + cand
            .iter()
            .filter(|&&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut hit_ranks: Vec<usize> = con.iter().map(|&i| rank_of(i as usize)).collect();
    hit_ranks.sort_unstable();
    let prec = ks.iter().map(|&k| hit_ranks.iter().filter(|&&r| r <= k).count() as f64 / k as f64).collect();
    let rec = ks
        .iter()
        .map(|&k| hit_ranks.iter().filter(|&&r| r <= k).count() as f64 / con.len() as f64)
        .collect();
    let mut dcg = 0.0;
    for &r in &hit_ranks {
        dcg += 1.0 / ((r + 1) as f64).log2();
    }
    let mut idcg = 0.0;
    for r in 1..=con.len() {
        idcg += 1.0 / ((r + 1) as f64).log2();
    }
    (prec, rec, dcg / idcg)
}

/// Dataset with tokens `u{k}` / `i{k}` over the given pairs.
pub fn dataset(n: usize, m: usize, pairs: &[(u32, u32)]) -> ImplicitDataset {
    let mut user_vocab = Vocab::new(VocabKind::User);
    let mut item_vocab = Vocab::new(VocabKind::Item);
    for u in 0..n {
        user_vocab.intern(&format!("u{u}"));
    }
    for i in 0..m {
        item_vocab.intern(&format!("i{i}"));
    }
    let mut pairs = pairs.to_vec();
    pairs.sort_unstable();
    pairs.dedup();
    ImplicitDataset { n, m, pairs, user_vocab, item_vocab }
}

/// Clustered implicit feedback: items belong to one of `topics` groups
/// and have Zipf-like popularity; each user favours one or two groups and
/// draws about `mean_degree` distinct items, mostly from them.
pub fn clustered(seed: u64, n: usize, m: usize, mean_degree: f64, topics: usize) -> ImplicitDataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let item_topic: Vec<usize> = (0..m).map(|_| r.random_range(0..topics)).collect();
    let pop: Vec<f64> = (0..m).map(|k| 1.0 / ((k % 997) as f64 + 5.0).powf(0.8) * r.random_range(0.5..1.5)).collect();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); topics];
    for (i, &t) in item_topic.iter().enumerate() {
        by_topic[t].push(i);
    }
    let tables: Vec<AliasTable> = by_topic
        .iter()
        .map(|items| AliasTable::new(&items.iter().map(|&i| pop[i]).collect::<Vec<_>>()).unwrap())
        .collect();
    let global = AliasTable::new(&pop).unwrap();
    let mut pairs = Vec::new();
    for u in 0..n as u32 {
        let favourite = [r.random_range(0..topics), r.random_range(0..topics)];
        let target = ((mean_degree * (-r.random::<f64>().ln())).round() as usize).clamp(2, m / 2);
        let mut mine = std::collections::BTreeSet::new();
        let mut tries = 0;
        while mine.len() < target && tries < 50 * target {
            tries += 1;
            let i = if r.random::<f64>() < 0.85 {
                let t = favourite[usize::from(r.random::<f64>() < 0.3)];
                by_topic[t][tables[t].sample(&mut r)]
            } else {
                global.sample(&mut r)
            };
            mine.insert(i as u32);
        }
        pairs.extend(mine.into_iter().map(|i| (u, i)));
    }
    let used: std::collections::BTreeSet<u32> = pairs.iter().map(|p| p.1).collect();
    let remap: std::collections::HashMap<u32, u32> = used.iter().enumerate().map(|(k, &i)| (i, k as u32)).collect();
    let pairs: Vec<(u32, u32)> = pairs.into_iter().map(|(u, i)| (u, remap[&i])).collect();
    dataset(n, used.len(), &pairs)
}

/// Sampler-dependent part of the lower bound,
/// `sum_u [ sum_{i in X_u} log p(i|u) + N_u sum_i p(i|u) E(u,i) ]`,
/// with the capped walk law recomputed from path enumeration.
pub fn sampler_bound(g: &InteractionGraph, logits: &[f64], rec: &RecommenderModel, c: &SamplerConfig) -> f64 {
    let mut total = 0.0;
    for u in 0..g.n_users() as u32 {
        let events = enumerate_capped(g, logits, c.c1, c.c2, c.max_walk_len, u);
        let p = capped_distribution_by_paths(&events, g.n_items());
        let n_u = c.draw_count(g.user_degree(u)) as f64;
        for &i in g.user_items(u) {
            total += p[i as usize].ln();
        }
        for i in 0..g.n_items() as u32 {
            total += n_u * p[i as usize] * rec.reward(g, u, i);
        }
    }
    total
}

/// Policy gradient with every enumerated path weighted by its exact
/// expected count instead of a sampled one.
pub fn exact_policy_gradient(g: &InteractionGraph, s: &SamplerModel, rec: &RecommenderModel) -> Vec<f64> {
    let c = s.config();
    let mut buf = GradBuffer::new(g);
    for u in 0..g.n_users() as u32 {
        let events = enumerate_capped(g, s.logits(), c.c1, c.c2, c.max_walk_len, u);
        let n_u = c.draw_count(g.user_degree(u)) as f64;
        let paths: Vec<_> = events.iter().map(|e| e.path.clone()).collect();
        let weights: Vec<f64> = events.iter().map(|e| n_u * e.prob).collect();
        let rewards: Vec<f64> = events.iter().map(|e| rec.reward(g, u, e.path.emitted)).collect();
        s.accumulate_policy_gradient(
            g,
            PathEvidence { user: u, draw_count: n_u, paths: &paths, weights: &weights, rewards: &rewards },
            &mut buf,
        );
    }
    buf.finish(s, g)
}

#[derive(Debug, Clone)]
pub struct SamplerComparison {
    pub uniform_pre5: f64,
    pub cosam_pre5: f64,
    /// `(epoch, cosam loss, uniform loss)`: mean sampled negative loss of
    /// each model under its own sampler.
    pub losses: Vec<(usize, f64, f64)>,
}

impl SamplerComparison {
    pub fn relative_gain(&self) -> f64 {
        self.cosam_pre5 / self.uniform_pre5 - 1.0
    }
}

/// Trains the uniform and the CoSam variant of `base` on `split`, probing
/// the sampled loss after each epoch in `probe_epochs`.
pub fn compare_samplers(split: &SplitDataset, base: &TrainConfig, probe_epochs: &[usize]) -> SamplerComparison {
    let test = split.test_by_user();
    let mut pre5 = Vec::new();
    let mut losses: Vec<Vec<f64>> = Vec::new();
    for kind in [SamplerKind::CoSam, SamplerKind::Uniform] {
        let cfg = TrainConfig { sampler: kind, ..base.clone() };
        let mut seen = Vec::new();
        let model = train_observed(split, &cfg, |m, g| {
            if probe_epochs.contains(&m.log.len()) {
                let mult = m.config.sampler_config.candidate_multiplier;
                let r = variance_probe(m.drawer(), &m.recommender, g, mult, 20, m.config.batch_size, 1).unwrap();
                seen.push(r.mean_sampled_loss);
            }
        })
        .unwrap();
        let g = InteractionGraph::from_pairs(split.n, split.m, &split.train).unwrap();
        pre5.push(model.evaluate(&g, &test, &[5], false).precision[0]);
        losses.push(seen);
    }
    SamplerComparison {
        cosam_pre5: pre5[0],
        uniform_pre5: pre5[1],
        losses: probe_epochs.iter().enumerate().map(|(k, &e)| (e, losses[0][k], losses[1][k])).collect(),
    }
}

/// Recommender settings shared by both arms of the end-to-end comparison.
pub fn comparison_config() -> TrainConfig {
    TrainConfig { epochs: 30, dim: 32, lr: 0.01, sampler_lr: 0.01, batch_size: 128, eval_every: 0, timing: false, ..Default::default() }
}
