//! Bipartite user–item interaction graph in CSR form.
//!
//! Nodes share one id space: users are `0..n`, item `i` is node `n + i`.
//! Directed edges are numbered user rows first, then item rows, so edge
//! `k` of node `v` has global index `edge_range(v).start + k`. Per-edge
//! sampler parameters are stored in that order.

use std::ops::Range;

use crate::data::ImplicitDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    n: usize,
    m: usize,
    user_offsets: Vec<usize>,
    /// Item indices (0-based within items), sorted per row.
    user_items: Vec<u32>,
    item_offsets: Vec<usize>,
    /// User indices, sorted per row.
    item_users: Vec<u32>,
}

fn csr(rows: usize, pairs: impl Iterator<Item = (u32, u32)> + Clone) -> (Vec<usize>, Vec<u32>) {
    let mut offsets = vec![0usize; rows + 1];
    for (r, _) in pairs.clone() {
        offsets[r as usize + 1] += 1;
    }
    for r in 0..rows {
        offsets[r + 1] += offsets[r];
    }
    let mut cursor = offsets.clone();
    let mut targets = vec![0u32; offsets[rows]];
    for (r, c) in pairs {
        targets[cursor[r as usize]] = c;
        cursor[r as usize] += 1;
    }
    for r in 0..rows {
        targets[offsets[r]..offsets[r + 1]].sort_unstable();
    }
    (offsets, targets)
}

impl InteractionGraph {
    /// Builds both adjacency directions from `(user, item)` pairs.
    /// Duplicate pairs are collapsed.
    pub fn from_pairs(n: usize, m: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("cannot build a graph with no edges".into()));
        }
        let mut uniq = pairs.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        for &(u, i) in &uniq {
            if u as usize >= n {
                return Err(Error::OutOfRange { kind: "user", id: u as usize, count: n });
            }
            if i as usize >= m {
                return Err(Error::OutOfRange { kind: "item", id: i as usize, count: m });
            }
        }
        let (user_offsets, user_items) = csr(n, uniq.iter().copied());
        let (item_offsets, item_users) = csr(m, uniq.iter().map(|&(u, i)| (i, u)));
        Ok(InteractionGraph {
            n,
            m,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
        })
    }

    pub fn build(train: &ImplicitDataset) -> Result<Self> {
        Self::from_pairs(train.n, train.m, &train.pairs)
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.m
    }

    pub fn node_count(&self) -> usize {
        self.n + self.m
    }

    /// Undirected edge count (each stored twice).
    pub fn edge_count(&self) -> usize {
        self.user_items.len()
    }

    /// Directed edge count, the length of a per-edge parameter array.
    pub fn directed_edge_count(&self) -> usize {
        2 * self.user_items.len()
    }

    pub fn user_node(&self, u: u32) -> NodeId {
        NodeId(u)
    }

    pub fn item_node(&self, i: u32) -> NodeId {
        NodeId(self.n as u32 + i)
    }

    pub fn is_user(&self, v: NodeId) -> bool {
        (v.0 as usize) < self.n
    }

    /// Item index of an item node.
    pub fn item_of(&self, v: NodeId) -> u32 {
        debug_assert!(!self.is_user(v));
        v.0 - self.n as u32
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if (v.0 as usize) < self.node_count() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                kind: "node",
                id: v.0 as usize,
                count: self.node_count(),
            })
        }
    }

    /// Global directed-edge indices of `v`'s row.
    pub fn edge_range(&self, v: NodeId) -> Range<usize> {
        let id = v.0 as usize;
        if id < self.n {
            self.user_offsets[id]..self.user_offsets[id + 1]
        } else {
            let i = id - self.n;
            let base = self.user_items.len();
            base + self.item_offsets[i]..base + self.item_offsets[i + 1]
        }
    }

    /// Neighbor indices on the opposite side (item indices for a user,
    /// user indices for an item), ascending.
    pub fn neighbors(&self, v: NodeId) -> Result<&[u32]> {
        self.check(v)?;
        Ok(self.neighbors_unchecked(v))
    }

    pub fn degree(&self, v: NodeId) -> Result<usize> {
        self.check(v)?;
        Ok(self.edge_range(v).len())
    }

    #[inline]
    pub(crate) fn neighbors_unchecked(&self, v: NodeId) -> &[u32] {
        let id = v.0 as usize;
        if id < self.n {
            &self.user_items[self.user_offsets[id]..self.user_offsets[id + 1]]
        } else {
            let i = id - self.n;
            &self.item_users[self.item_offsets[i]..self.item_offsets[i + 1]]
        }
    }

    /// Node reached by directed edge `k` (a global edge index) leaving `from`.
    #[inline]
    pub fn edge_target(&self, from: NodeId, edge: usize) -> NodeId {
        if self.is_user(from) {
            NodeId(self.n as u32 + self.user_items[edge])
        } else {
            NodeId(self.item_users[edge - self.user_items.len()])
        }
    }

    /// Train items of user `u` (sorted).
    pub fn user_items(&self, u: u32) -> &[u32] {
        &self.user_items[self.user_offsets[u as usize]..self.user_offsets[u as usize + 1]]
    }

    /// Train users of item `i` (sorted).
    pub fn item_users(&self, i: u32) -> &[u32] {
        &self.item_users[self.item_offsets[i as usize]..self.item_offsets[i as usize + 1]]
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.user_offsets[u as usize + 1] - self.user_offsets[u as usize]
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.item_offsets[i as usize + 1] - self.item_offsets[i as usize]
    }

    /// Whether `(u, i)` is a train positive.
    #[inline]
    pub fn contains(&self, u: u32, i: u32) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }
}
