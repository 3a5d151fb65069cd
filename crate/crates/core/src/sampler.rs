//! The collaborative sampler.
//!
//! Each user's sampling distribution over items is the fixed point of a
//! two-sided propagation on the interaction graph: a user keeps `1 - c1` of
//! the uniform distribution and mixes in `c1` of its neighbours' item labels,
//! an item keeps `1 - c2` of its own indicator and mixes in `c2` of its
//! neighbours' user distributions. Mixing weights live on directed edges as
//! logits with a per-node softmax.
//!
//! Drawing from that distribution does not require materializing it. The
//! adaptive random walk (ARW) starts at the user; at a user node it stops
//! with probability `1 - c1` and emits a uniform item, at an item node it
//! stops with probability `1 - c2` and emits that item, and otherwise steps
//! to a neighbour chosen by the edge weights. Walks are cut at
//! `max_walk_len` transitions: a cut at an item emits the item, a cut at a
//! user emits a uniform item.

use std::collections::BTreeMap;

use rand::Rng;

use crate::alias;
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId};
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Continue probability at user nodes.
    pub c1: f64,
    /// Continue probability at item nodes.
    pub c2: f64,
    /// Transition cap per walk.
    pub max_walk_len: usize,
    /// `N_u = max(1, round(candidate_multiplier * |X_u|))`.
    pub candidate_multiplier: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            c1: 0.6,
            c2: 0.6,
            max_walk_len: 10,
            candidate_multiplier: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |c: f64| (0.0..=1.0).contains(&c);
        if !unit(self.c1) || !unit(self.c2) {
            return Err(Error::InvalidParameter(format!(
                "c1, c2 must lie in [0, 1], got {}, {}",
                self.c1, self.c2
            )));
        }
        if self.c1.min(self.c2) >= 1.0 {
            return Err(Error::InvalidParameter(
                "c1 and c2 cannot both be 1 (walks would never stop)".into(),
            ));
        }
        if self.max_walk_len < 1 {
            return Err(Error::InvalidParameter("max_walk_len must be >= 1".into()));
        }
        if !(self.candidate_multiplier > 0.0) {
            return Err(Error::InvalidParameter("candidate_multiplier must be > 0".into()));
        }
        Ok(())
    }

    /// Weight-independent mass every item receives from walks that stop at
    /// a user node: `(1 - c1) / (1 - c1 c2) / m`.
    pub fn uniform_component_p0(&self, m: usize) -> f64 {
        (1.0 - self.c1) / (1.0 - self.c1 * self.c2) / m as f64
    }

    /// Probability that a capped walk from a non-isolated user ends on the
    /// user side (stopped or cut there). Independent of the edge weights.
    pub fn user_side_mass(&self) -> f64 {
        let (c1, c2) = (self.c1, self.c2);
        let pairs = self.max_walk_len / 2;
        let stopped: f64 = (0..pairs + self.max_walk_len % 2)
            .map(|k| (1.0 - c1) * (c1 * c2).powi(k as i32))
            .sum();
        if self.max_walk_len.is_multiple_of(2) {
            stopped + (c1 * c2).powi(pairs as i32)
        } else {
            stopped
        }
    }

    /// Uniform component of the capped walk's emission law.
    pub fn truncated_p0(&self, m: usize) -> f64 {
        self.user_side_mass() / m as f64
    }

    /// Probability that a walk is cut at `max_walk_len`.
    pub fn tail_mass(&self) -> f64 {
        let l = self.max_walk_len as i32;
        self.c1.powi((l + 1) / 2) * self.c2.powi(l / 2)
    }

    /// Upper bound on the expected walk length, `2 / (1 - min(c1, c2))`.
    pub fn expected_length_bound(&self) -> f64 {
        2.0 / (1.0 - self.c1.min(self.c2))
    }

    pub fn draw_count(&self, positives: usize) -> usize {
        ((self.candidate_multiplier * positives as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// Stopped at a user node; the item is uniform.
    User,
    /// Stopped at an item node, which is emitted.
    Item,
    /// Cut at `max_walk_len`.
    Truncated,
}

/// One ARW draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    /// Visited nodes, starting at the query user.
    pub nodes: Vec<NodeId>,
    /// Global directed-edge index of each transition.
    pub edges: Vec<u32>,
    pub emitted: u32,
    pub terminal: Terminal,
}

impl WalkPath {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Odd-length walks end at an item node.
    pub fn ends_on_item(&self) -> bool {
        self.edges.len() % 2 == 1
    }
}

/// Candidate items drawn for one user, with the walks that produced them
/// (empty for the path-free baseline samplers).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub user: u32,
    pub items: Vec<u32>,
    pub paths: Vec<WalkPath>,
    /// Whether `items[k]` is a train positive of `user`.
    pub is_positive: Vec<bool>,
}

impl SampleBatch {
    pub fn new(graph: &InteractionGraph, user: u32, items: Vec<u32>, paths: Vec<WalkPath>) -> Self {
        let is_positive = items.iter().map(|&i| graph.contains(user, i)).collect();
        SampleBatch {
            user,
            items,
            paths,
            is_positive,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Sampled entries that are train positives.
    pub fn positive_part(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().zip(&self.is_positive).filter(|(_, &p)| p).map(|(&i, _)| i)
    }

    /// Remaining sampled entries.
    pub fn rest_part(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().zip(&self.is_positive).filter(|(_, &p)| !p).map(|(&i, _)| i)
    }
}

/// A user's item distribution from [`SamplerModel::exact_rho`] or
/// [`SamplerModel::walk_distribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    pub user: u32,
    pub rho: Vec<f64>,
    pub sweeps: usize,
    /// Walk mass still in flight when iteration stopped; bounds the
    /// max-abs distance to the fixed point.
    pub residual: f64,
    pub converged: bool,
}

/// Sparse gradient over edge logits.
pub type SparseGradient = BTreeMap<usize, f64>;

/// Accumulator for sums of softmax log-gradients. A transition through edge
/// `e` of node `v` with scale `s` adds `s` to `e` and `-s * w` to the whole
/// row of `v`; the row part is deferred and applied once per node.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    direct: Vec<f64>,
    row_scale: Vec<f64>,
}

impl GradBuffer {
    pub fn new(graph: &InteractionGraph) -> Self {
        GradBuffer {
            direct: vec![0.0; graph.directed_edge_count()],
            row_scale: vec![0.0; graph.node_count()],
        }
    }

    #[inline]
    fn add_path(&mut self, path: &WalkPath, scale: f64) {
        for (&v, &e) in path.nodes.iter().zip(&path.edges) {
            self.direct[e as usize] += scale;
            self.row_scale[v.0 as usize] += scale;
        }
    }

    /// Dense gradient over all edge logits.
    pub fn finish(mut self, model: &SamplerModel, graph: &InteractionGraph) -> Vec<f64> {
        for (v, &s) in self.row_scale.iter().enumerate() {
            if s != 0.0 {
                for e in graph.edge_range(NodeId(v as u32)) {
                    self.direct[e] -= s * model.weights[e];
                }
            }
        }
        self.direct
    }
}

/// One user's contribution to the sampler gradient: the walks, how much each
/// counts, and the recommender's reward for each emission.
#[derive(Debug, Clone, Copy)]
pub struct PathEvidence<'a> {
    pub user: u32,
    /// `N_u`.
    pub draw_count: f64,
    pub paths: &'a [WalkPath],
    /// Multiplicity of each path (1 for sampled walks).
    pub weights: &'a [f64],
    pub rewards: &'a [f64],
}

/// Edge logits plus their derived softmax weights and per-node alias tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerModel {
    config: SamplerConfig,
    logits: Vec<f64>,
    weights: Vec<f64>,
    alias_prob: Vec<f64>,
    alias_idx: Vec<u32>,
    n_users: usize,
    n_items: usize,
}

impl SamplerModel {
    /// All logits zero: every node starts with uniform transitions.
    pub fn new(graph: &InteractionGraph, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let e = graph.directed_edge_count();
        let mut model = SamplerModel {
            config,
            logits: vec![0.0; e],
            weights: vec![0.0; e],
            alias_prob: vec![0.0; e],
            alias_idx: vec![0; e],
            n_users: graph.n_users(),
            n_items: graph.n_items(),
        };
        model.refresh(graph);
        Ok(model)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_logits(&mut self, graph: &InteractionGraph, logits: Vec<f64>) -> Result<()> {
        if logits.len() != graph.directed_edge_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} logits, got {}",
                graph.directed_edge_count(),
                logits.len()
            )));
        }
        self.logits = logits;
        self.refresh(graph);
        Ok(())
    }

    fn refresh(&mut self, graph: &InteractionGraph) {
        debug_assert_eq!((self.n_users, self.n_items), (graph.n_users(), graph.n_items()));
        for v in 0..graph.node_count() as u32 {
            let r = graph.edge_range(NodeId(v));
            if r.is_empty() {
                continue;
            }
            let row = &self.logits[r.clone()];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = &mut self.weights[r.clone()];
            let mut z = 0.0;
            for (wj, &l) in w.iter_mut().zip(row) {
                *wj = (l - max).exp();
                z += *wj;
            }
            w.iter_mut().for_each(|wj| *wj /= z);
            alias::build_into(&self.weights[r.clone()], &mut self.alias_prob[r.clone()], &mut self.alias_idx[r]);
        }
    }

    /// Softmax of `node`'s logit row, aligned with its neighbour list.
    pub fn transition_weights<'a>(&'a self, graph: &InteractionGraph, node: NodeId) -> Result<&'a [f64]> {
        graph.degree(node)?;
        let r = graph.edge_range(node);
        if r.is_empty() {
            return Err(Error::IsolatedNode(node.0 as usize));
        }
        Ok(&self.weights[r])
    }

    pub fn uniform_component_p0(&self, m: usize) -> f64 {
        self.config.uniform_component_p0(m)
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, graph: &InteractionGraph, v: NodeId, rng: &mut R) -> usize {
        let r = graph.edge_range(v);
        let k = alias::draw(&self.alias_prob[r.clone()], &self.alias_idx[r.clone()], rng);
        r.start + k
    }

    /// One adaptive random walk from user `u`.
    pub fn arw_sample<R: Rng + ?Sized>(&self, graph: &InteractionGraph, u: u32, rng: &mut R) -> WalkPath {
        let m = graph.n_items() as u32;
        let start = graph.user_node(u);
        let mut nodes = vec![start];
        let mut edges = Vec::new();
        if graph.user_degree(u) == 0 {
            return WalkPath {
                nodes,
                edges,
                emitted: rng.random_range(0..m),
                terminal: Terminal::User,
            };
        }
        let SamplerConfig { c1, c2, max_walk_len, .. } = self.config;
        let mut v = start;
        loop {
            let on_user = graph.is_user(v);
            if edges.len() == max_walk_len {
                let emitted = if on_user { rng.random_range(0..m) } else { graph.item_of(v) };
                return WalkPath { nodes, edges, emitted, terminal: Terminal::Truncated };
            }
            let cont = if on_user { c1 } else { c2 };
            if rng.random::<f64>() >= cont {
                return if on_user {
                    WalkPath { nodes, edges, emitted: rng.random_range(0..m), terminal: Terminal::User }
                } else {
                    let emitted = graph.item_of(v);
                    WalkPath { nodes, edges, emitted, terminal: Terminal::Item }
                };
            }
            let e = self.step(graph, v, rng);
            v = graph.edge_target(v, e);
            edges.push(e as u32);
            nodes.push(v);
        }
    }

    /// `N_u` independent walks for user `u`.
    pub fn draw_candidate_set<R: Rng + ?Sized>(&self, graph: &InteractionGraph, u: u32, rng: &mut R) -> SampleBatch {
        let count = self.config.draw_count(graph.user_degree(u));
        let paths: Vec<WalkPath> = (0..count).map(|_| self.arw_sample(graph, u, rng)).collect();
        let items = paths.iter().map(|p| p.emitted).collect();
        SampleBatch::new(graph, u, items, paths)
    }

    /// Probability of the exact (walk, emitted item) event under the capped ARW.
    pub fn path_strength(&self, graph: &InteractionGraph, path: &WalkPath) -> f64 {
        let SamplerConfig { c1, c2, .. } = self.config;
        let m = graph.n_items() as f64;
        let mut p = 1.0;
        for (&v, &e) in path.nodes.iter().zip(&path.edges) {
            p *= if graph.is_user(v) { c1 } else { c2 };
            p *= self.weights[e as usize];
        }
        let last = *path.nodes.last().expect("walk has a start node");
        match path.terminal {
            Terminal::User if path.edges.is_empty() && graph.user_degree(last.0) == 0 => p / m,
            Terminal::User => p * (1.0 - c1) / m,
            Terminal::Item => p * (1.0 - c2),
            Terminal::Truncated if graph.is_user(last) => p / m,
            Terminal::Truncated => p,
        }
    }

    /// Gradient of `log path_strength` with respect to the edge logits.
    /// Stop and emission factors do not depend on the logits.
    pub fn log_path_grad(&self, graph: &InteractionGraph, path: &WalkPath) -> SparseGradient {
        let mut g = SparseGradient::new();
        for (&v, &e) in path.nodes.iter().zip(&path.edges) {
            for k in graph.edge_range(v) {
                *g.entry(k).or_insert(0.0) -= self.weights[k];
            }
            *g.entry(e as usize).or_insert(0.0) += 1.0;
        }
        g
    }

    /// Adds one user's policy-gradient terms to `buf`.
    ///
    /// For every train positive `i`, item-side walks emitting `i` contribute
    /// `weight / (N_u * p0 + total weight of such walks)`; walks that stop on
    /// the user side are already covered by `p0`. Every walk also contributes
    /// `weight * reward`.
    pub fn accumulate_policy_gradient(&self, graph: &InteractionGraph, ev: PathEvidence<'_>, buf: &mut GradBuffer) {
        debug_assert_eq!(ev.paths.len(), ev.weights.len());
        debug_assert_eq!(ev.paths.len(), ev.rewards.len());
        let base = ev.draw_count * self.config.truncated_p0(graph.n_items());
        let positives = graph.user_items(ev.user);
        let mut hit_mass = vec![0.0; positives.len()];
        let slot = |p: &WalkPath| {
            if p.ends_on_item() {
                positives.binary_search(&p.emitted).ok()
            } else {
                None
            }
        };
        for (p, &w) in ev.paths.iter().zip(ev.weights) {
            if let Some(k) = slot(p) {
                hit_mass[k] += w;
            }
        }
        for ((p, &w), &r) in ev.paths.iter().zip(ev.weights).zip(ev.rewards) {
            let mut scale = w * r;
            if let Some(k) = slot(p) {
                scale += w / (base + hit_mass[k]);
            }
            if scale != 0.0 {
                buf.add_path(p, scale);
            }
        }
    }

    /// Sampled estimate of the sampler gradient over a mini-batch.
    /// `rewards[b][k]` is the reward of `batches[b].items[k]`.
    pub fn policy_gradient(&self, graph: &InteractionGraph, batches: &[SampleBatch], rewards: &[Vec<f64>]) -> Vec<f64> {
        let mut buf = GradBuffer::new(graph);
        for (b, r) in batches.iter().zip(rewards) {
            let ones = vec![1.0; b.paths.len()];
            self.accumulate_policy_gradient(
                graph,
                PathEvidence {
                    user: b.user,
                    draw_count: b.paths.len() as f64,
                    paths: &b.paths,
                    weights: &ones,
                    rewards: r,
                },
                &mut buf,
            );
        }
        buf.finish(self, graph)
    }

    /// Adam ascent on the logits, then re-derive weights and alias tables.
    pub fn apply_gradient(&mut self, graph: &InteractionGraph, grad: &[f64], adam: &mut Adam) {
        adam.ascend(&mut self.logits, grad);
        self.refresh(graph);
    }

    /// Propagates walk mass from user `u`. After `t` sweeps the emission law
    /// accumulated so far, with in-flight mass parked on its current node's
    /// initial vector (uniform for users, indicator for items), equals the
    /// `t`-th simultaneous iterate of the propagation equations.
    fn propagate(&self, graph: &InteractionGraph, u: u32, max_sweeps: usize, tol: Option<f64>) -> SamplingDistribution {
        let m = graph.n_items();
        let mf = m as f64;
        if graph.user_degree(u) == 0 {
            return SamplingDistribution {
                user: u,
                rho: vec![1.0 / mf; m],
                sweeps: 0,
                residual: 0.0,
                converged: true,
            };
        }
        let SamplerConfig { c1, c2, .. } = self.config;
        let n = graph.n_users();
        let mut user_mass = vec![0.0; n];
        let mut item_mass = vec![0.0; m];
        let mut item_acc = vec![0.0; m];
        let mut uniform_acc = 0.0;
        user_mass[u as usize] = 1.0;
        let mut in_flight = 1.0;
        let mut on_users = true;
        let mut sweeps = 0;
        let done = |in_flight: f64| tol.is_some_and(|t| in_flight < t);
        while sweeps < max_sweeps && !done(in_flight) {
            if on_users {
                uniform_acc += (1.0 - c1) * in_flight;
                for (v, a) in user_mass.iter_mut().enumerate() {
                    if *a == 0.0 {
                        continue;
                    }
                    let push = c1 * *a;
                    *a = 0.0;
                    let r = graph.edge_range(NodeId(v as u32));
                    for (e, &i) in r.clone().zip(graph.user_items(v as u32)) {
                        item_mass[i as usize] += push * self.weights[e];
                    }
                }
                in_flight *= c1;
            } else {
                for (i, b) in item_mass.iter_mut().enumerate() {
                    if *b == 0.0 {
                        continue;
                    }
                    item_acc[i] += (1.0 - c2) * *b;
                    let push = c2 * *b;
                    *b = 0.0;
                    let r = graph.edge_range(graph.item_node(i as u32));
                    for (e, &v) in r.zip(graph.item_users(i as u32)) {
                        user_mass[v as usize] += push * self.weights[e];
                    }
                }
                in_flight *= c2;
            }
            on_users = !on_users;
            sweeps += 1;
        }
        let parked_uniform = if on_users { in_flight } else { 0.0 };
        let flat = (uniform_acc + parked_uniform) / mf;
        let mut rho: Vec<f64> = item_acc.iter().map(|a| a + flat).collect();
        if !on_users {
            for (r, b) in rho.iter_mut().zip(&item_mass) {
                *r += b;
            }
        }
        SamplingDistribution {
            user: u,
            rho,
            sweeps,
            residual: in_flight,
            converged: tol.is_none_or(|t| in_flight < t),
        }
    }

    /// Fixed-point sampling distribution of user `u`, iterated until the
    /// in-flight walk mass drops below `tol` or `max_sweeps` is hit (then
    /// `converged` is false).
    pub fn exact_rho(&self, graph: &InteractionGraph, u: u32, tol: f64, max_sweeps: usize) -> Result<SamplingDistribution> {
        if u as usize >= graph.n_users() {
            return Err(Error::OutOfRange { kind: "user", id: u as usize, count: graph.n_users() });
        }
        let d = self.propagate(graph, u, max_sweeps, Some(tol));
        if !d.converged {
            log::warn!("exact_rho(user {u}) stopped after {} sweeps, residual {:.3e}", d.sweeps, d.residual);
        }
        Ok(d)
    }

    /// Emission law of the capped walk that [`Self::arw_sample`] draws from.
    pub fn walk_distribution(&self, graph: &InteractionGraph, u: u32) -> SamplingDistribution {
        let mut d = self.propagate(graph, u, self.config.max_walk_len, None);
        d.converged = true;
        d
    }
}

pub const DEFAULT_RHO_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 200;
