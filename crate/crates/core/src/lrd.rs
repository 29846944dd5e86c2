//! Low-resistance-diameter decomposition.
//!
//! Clusters are grown agglomeratively. On every level the inter-cluster
//! edges are visited in ascending `(resistance, p, q)` order and the two end
//! clusters merge when the sum of their diameter estimates plus the edge
//! resistance stays within the budget. A cluster takes part in at most one
//! merge per level, so `levels` also caps cluster size at `2^levels`.
//!
//! Because effective resistance is a metric, the accumulated sum upper-bounds
//! every intra-cluster resistance whenever the edge values are exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::graph::{Laplacian, SparseGraph};
use crate::resistance::{EdgeResistances, ExactResistance};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    diam_est: Vec<f64>,
    levels_used: usize,
}

impl Clustering {
    /// Builds a clustering from a node -> cluster map with dense ids.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        let n_c = assignment.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); n_c];
        for (v, &c) in assignment.iter().enumerate() {
            members[c].push(v);
        }
        if let Some(c) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::InvalidArgument(format!("cluster id {c} has no members")));
        }
        Ok(Self { assignment, members, diam_est: vec![0.0; n_c], levels_used: 0 })
    }

    /// Every node in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self::from_assignment((0..n).collect()).expect("dense ids")
    }

    pub fn n_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn diam_est(&self) -> &[f64] {
        &self.diam_est
    }

    pub fn levels_used(&self) -> usize {
        self.levels_used
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "node_id,cluster_id")?;
        for (v, c) in self.assignment.iter().enumerate() {
            writeln!(w, "{v},{c}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with("node_id") {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: lineno + 1, msg };
            let (a, b) = line.split_once(',').ok_or_else(|| perr("expected `node_id,cluster_id`".into()))?;
            let v: usize = a.trim().parse().map_err(|_| perr(format!("invalid node `{a}`")))?;
            let c: usize = b.trim().parse().map_err(|_| perr(format!("invalid cluster `{b}`")))?;
            pairs.push((v, c));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, &(v, _))| i != v) {
            return Err(Error::Parse { line: 0, msg: "node ids must cover 0..n exactly once".into() });
        }
        Self::from_assignment(pairs.into_iter().map(|(_, c)| c).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

#[derive(Clone, Copy)]
struct Slot {
    parent: u32,
    /// Level of the last merge into this root, `u32::MAX` if none.
    stamp: u32,
    diam: f64,
}

/// Union-find with the per-root merge state packed next to the parent link.
struct Forest {
    nodes: Vec<Slot>,
    rank: Vec<u8>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self { nodes: (0..n as u32).map(|parent| Slot { parent, stamp: u32::MAX, diam: 0.0 }).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut v: u32) -> u32 {
        let mut root = v;
        while self.nodes[root as usize].parent != root {
            root = self.nodes[root as usize].parent;
        }
        while self.nodes[v as usize].parent != root {
            let next = self.nodes[v as usize].parent;
            self.nodes[v as usize].parent = root;
            v = next;
        }
        root
    }

    /// Links two roots; returns the surviving one.
    fn union(&mut self, mut a: u32, mut b: u32) -> u32 {
        if self.rank[a as usize] < self.rank[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.nodes[b as usize].parent = a;
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] = self.rank[a as usize].saturating_add(1);
        }
        a
    }
}

/// Relative slack on the budget test, absorbing rounding in the resistances.
const BUDGET_RTOL: f64 = 1e-12;

/// Resistance rounded on a log scale to about 1e-10 relative precision, so
/// values equal up to rounding tie and fall back to the `(p, q)` order.
fn sort_key(r: f64) -> i64 {
    if r > 0.0 {
        (r.ln() * (1u64 << 33) as f64).round() as i64
    } else {
        i64::MIN
    }
}

/// Diameter budget `1 / average degree`.
pub fn default_budget(g: &SparseGraph) -> f64 {
    let d = g.average_degree();
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

pub fn decompose(g: &SparseGraph, er: &EdgeResistances, levels: usize, diam_budget: f64) -> Result<Clustering> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    if diam_budget.is_nan() || diam_budget < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid diameter budget {diam_budget}")));
    }
    let edges = g.edges();
    if er.values.len() < edges.len() {
        let e = edges[er.values.len()];
        return Err(Error::MissingResistance { p: e.p, q: e.q });
    }
    if let Some(k) = er.values[..edges.len()].iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::MissingResistance { p: edges[k].p, q: edges[k].q });
    }

    let n = g.n();
    if n >= u32::MAX as usize {
        return Err(Error::InvalidArgument(format!("graph with {n} nodes is too large")));
    }

    // Filtering one global ascending order per level is equivalent to
    // re-sorting the surviving inter-cluster edges every level. Edges are
    // stored inline so each level streams through memory.
    let mut order: Vec<(i64, u32, u32, f64)> =
        edges.iter().zip(&er.values).map(|(e, &r)| (sort_key(r), e.p as u32, e.q as u32, r)).collect();
    order.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut forest = Forest::new(n);
    let mut levels_used = 0;
    for level in 0..levels {
        let stamp = level as u32;
        let mut merges = 0usize;
        let mut kept = 0;
        for i in 0..order.len() {
            let (key, p, q, r) = order[i];
            let (a, b) = (forest.find(p), forest.find(q));
            if a == b {
                continue;
            }
            // Surviving edges are rewritten onto their current roots.
            order[kept] = (key, a, b, r);
            kept += 1;
            let (na, nb) = (forest.nodes[a as usize], forest.nodes[b as usize]);
            if na.stamp == stamp || nb.stamp == stamp {
                continue;
            }
            let d = na.diam + nb.diam + r;
            if d <= diam_budget * (1.0 + BUDGET_RTOL) {
                let root = forest.union(a, b) as usize;
                forest.nodes[root].diam = d;
                forest.nodes[root].stamp = stamp;
                merges += 1;
            }
        }
        order.truncate(kept);
        if merges == 0 || level + 1 >= u32::MAX as usize {
            break;
        }
        levels_used = level + 1;
    }

    let mut root_label = vec![usize::MAX; n];
    let mut assignment = vec![0; n];
    let mut diam_est = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let r = forest.find(v as u32) as usize;
        if root_label[r] == usize::MAX {
            root_label[r] = members.len();
            members.push(Vec::new());
            diam_est.push(forest.nodes[r].diam);
        }
        assignment[v] = root_label[r];
        members[root_label[r]].push(v);
    }
    Ok(Clustering { assignment, members, diam_est, levels_used })
}

/// Exact resistance diameter of every cluster (maximum over member pairs).
pub fn verify_diameter(c: &Clustering, lap: &Laplacian) -> Result<Vec<f64>> {
    let exact = ExactResistance::new(lap)?;
    Ok(c.members()
        .iter()
        .map(|m| {
            let mut best = 0.0f64;
            for (i, &p) in m.iter().enumerate() {
                for &q in &m[i + 1..] {
                    best = best.max(exact.pair(p, q).unwrap_or(f64::INFINITY));
                }
            }
            best
        })
        .collect())
}
