//! The kNN graph over collocation points and its Laplacian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::kdtree::KdTree;
use crate::pointcloud::PointCloud;
use crate::union_find::DisjointSet;
use crate::{Error, Result};

/// Distance regulariser in the edge weights.
pub const WEIGHT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub w: f64,
}

/// Weighted undirected simple graph; edges are stored once with `p < q`,
/// sorted, plus a symmetric CSR adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    adj: Vec<usize>,
    adj_w: Vec<f64>,
    adj_edge: Vec<usize>,
}

impl SparseGraph {
    /// Builds a graph from `(p, q, w)` triples. Orientation is normalised;
    /// self-loops, duplicates and non-positive weights are rejected.
    pub fn from_edges(n: usize, triples: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut edges: Vec<Edge> = Vec::new();
        for (p, q, w) in triples {
            if p >= n || q >= n {
                return Err(Error::InvalidArgument(format!("edge ({p}, {q}) out of range for {n} nodes")));
            }
            if p == q {
                return Err(Error::InvalidArgument(format!("self-loop at node {p}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!("edge ({p}, {q}) has invalid weight {w}")));
            }
            edges.push(Edge { p: p.min(q), q: p.max(q), w });
        }
        edges.sort_by_key(|a| (a.p, a.q));
        if let Some(d) = edges.windows(2).find(|e| (e[0].p, e[0].q) == (e[1].p, e[1].q)) {
            return Err(Error::InvalidArgument(format!("duplicate edge ({}, {})", d[0].p, d[0].q)));
        }
        Ok(Self::from_sorted(n, edges))
    }

    fn from_sorted(n: usize, edges: Vec<Edge>) -> Self {
        let mut deg = vec![0usize; n];
        for e in &edges {
            deg[e.p] += 1;
            deg[e.q] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let m2 = offsets[n];
        let mut adj = vec![0; m2];
        let mut adj_w = vec![0.0; m2];
        let mut adj_edge = vec![0; m2];
        let mut fill = offsets[..n].to_vec();
        for (id, e) in edges.iter().enumerate() {
            for (a, b) in [(e.p, e.q), (e.q, e.p)] {
                let slot = fill[a];
                adj[slot] = b;
                adj_w[slot] = e.w;
                adj_edge[slot] = id;
                fill[a] += 1;
            }
        }
        // Neighbour lists come out sorted because edges are sorted by (p, q)
        // and each node sees its lower neighbours before its higher ones.
        Self { n, edges, offsets, adj, adj_w, adj_edge }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn weighted_degree(&self, p: usize) -> f64 {
        self.adj_w[self.offsets[p]..self.offsets[p + 1]].iter().sum()
    }

    /// `(neighbour, weight, edge id)` triples of node `p`.
    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        let r = self.offsets[p]..self.offsets[p + 1];
        self.adj[r.clone()]
            .iter()
            .zip(&self.adj_w[r.clone()])
            .zip(&self.adj_edge[r])
            .map(|((&q, &w), &e)| (q, w, e))
    }

    pub fn edge_index(&self, p: usize, q: usize) -> Option<usize> {
        let (p, q) = (p.min(q), p.max(q));
        self.edges.binary_search_by(|e| (e.p, e.q).cmp(&(p, q))).ok()
    }

    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.n as f64
        }
    }

    /// Connected-component labels (dense, ordered by smallest member) and count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut ds = DisjointSet::new(self.n);
        for e in &self.edges {
            ds.union(e.p, e.q);
        }
        ds.labels()
    }

    /// Subgraph induced by `nodes`; node `i` of the result is `nodes[i]`.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| local[e.p] != usize::MAX && local[e.q] != usize::MAX)
            .map(|e| {
                let (a, b) = (local[e.p], local[e.q]);
                Edge { p: a.min(b), q: a.max(b), w: e.w }
            })
            .collect();
        edges.sort_by_key(|a| (a.p, a.q));
        Self::from_sorted(nodes.len(), edges)
    }

    /// Same node set with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let edges = self.edges.iter().map(|e| Edge { w: e.w * factor, ..*e }).collect();
        Self::from_sorted(self.n, edges)
    }

    pub fn write_edge_list<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# nodes: {}", self.n)?;
        for e in &self.edges {
            writeln!(w, "{} {} {}", e.p, e.q, e.w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_edge_list(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses the `p q w` edge-list format. Without a `# nodes:` header the
    /// node count is one past the largest endpoint.
    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut triples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: lineno, msg };
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("nodes:") {
                    n = Some(v.trim().parse().map_err(|_| perr(format!("invalid node count `{v}`")))?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(perr(format!("expected `p q w`, got {} fields", fields.len())));
            }
            let p: usize = fields[0].parse().map_err(|_| perr(format!("invalid node `{}`", fields[0])))?;
            let q: usize = fields[1].parse().map_err(|_| perr(format!("invalid node `{}`", fields[1])))?;
            let w: f64 = fields[2].parse().map_err(|_| perr(format!("invalid weight `{}`", fields[2])))?;
            triples.push((p, q, w));
        }
        let n = n.unwrap_or_else(|| triples.iter().map(|&(p, q, _)| p.max(q) + 1).max().unwrap_or(0));
        Self::from_edges(n, triples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_edge_list(BufReader::new(File::open(path)?))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `1 / (d + eps)`
    #[default]
    InverseDistance,
    /// `1 / (d^2 + eps)`
    InverseSquare,
}

impl WeightScheme {
    pub fn weight(self, d: f64, eps: f64) -> f64 {
        match self {
            Self::InverseDistance => 1.0 / (d + eps),
            Self::InverseSquare => 1.0 / (d * d + eps),
        }
    }
}

/// kNN graph over the rows of a row-major `n x dim` matrix: the union of
/// every node's `k` nearest neighbours, deduplicated.
pub fn knn_graph(points: &[f64], dim: usize, k: usize, scheme: WeightScheme, eps: f64) -> Result<SparseGraph> {
    if dim == 0 {
        return Err(Error::InvalidArgument("kNN graph needs at least one feature".into()));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!("k = {k} requires more than {k} points, got {n}")));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("row {}", i / dim)));
    }
    let tree = KdTree::new(points.to_vec(), dim);
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        for (j, d) in tree.knn(tree.point(i), k, Some(i)) {
            let w = scheme.weight(d, eps);
            edges.push(Edge { p: i.min(j), q: i.max(j), w });
        }
    }
    edges.sort_by_key(|a| (a.p, a.q));
    // Both directions compute the same distance bit-for-bit.
    edges.dedup_by(|a, b| a.p == b.p && a.q == b.q);
    if let Some(e) = edges.iter().find(|e| !(e.w.is_finite() && e.w > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "edge ({}, {}) has weight {}; use a positive eps for duplicate points",
            e.p, e.q, e.w
        )));
    }
    Ok(SparseGraph::from_sorted(n, edges))
}

/// kNN graph over the selected feature columns of every row of `pc`.
pub fn build_knn(pc: &PointCloud, features: &[usize], k: usize, scheme: WeightScheme) -> Result<SparseGraph> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("feature set must not be empty".into()));
    }
    if let Some(&f) = features.iter().find(|&&f| f >= pc.dim()) {
        return Err(Error::InvalidArgument(format!("feature {f} out of range")));
    }
    let rows: Vec<usize> = (0..pc.len()).collect();
    knn_graph(&pc.select(&rows, features), features.len(), k, scheme, WEIGHT_EPS)
}

/// Z-scores each column of a row-major `n x d` matrix in place; constant
/// columns become zero.
pub fn standardize_columns(values: &mut [f64], d: usize) {
    let n = values.len() / d;
    for c in 0..d {
        let mean = (0..n).map(|i| values[i * d + c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (values[i * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let v = &mut values[i * d + c];
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// kNN graph over `features` of the rows plus standardized output columns
/// (scaled by `output_scale`).
pub fn rebuild_with_outputs(
    features: &[f64],
    dim: usize,
    outputs: &[f64],
    d_out: usize,
    output_scale: f64,
    k: usize,
    scheme: WeightScheme,
) -> Result<SparseGraph> {
    let n = features.len() / dim.max(1);
    if d_out == 0 || outputs.len() != n * d_out {
        return Err(Error::DimensionMismatch { expected: n * d_out.max(1), got: outputs.len() });
    }
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("output row {} is not finite", i / d_out)));
    }
    let mut out = outputs.to_vec();
    standardize_columns(&mut out, d_out);
    let width = dim + d_out;
    let mut joined = Vec::with_capacity(n * width);
    for i in 0..n {
        joined.extend_from_slice(&features[i * dim..(i + 1) * dim]);
        joined.extend(out[i * d_out..(i + 1) * d_out].iter().map(|v| v * output_scale));
    }
    knn_graph(&joined, width, k, scheme, WEIGHT_EPS)
}

/// `L = D - W` of a [`SparseGraph`].
#[derive(Clone, Debug)]
pub struct Laplacian {
    graph: SparseGraph,
    diag: Vec<f64>,
}

impl Laplacian {
    pub fn new(graph: SparseGraph) -> Self {
        let diag = (0..graph.n()).map(|p| graph.weighted_degree(p)).collect();
        Self { graph, diag }
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `y = L x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.n() {
            let mut acc = self.diag[p] * x[p];
            for (q, w, _) in self.graph.neighbors(p) {
                acc -= w * x[q];
            }
            y[p] = acc;
        }
    }

    /// `x^T L x` as a sum over edges.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.graph.edges().iter().map(|e| e.w * (x[e.p] - x[e.q]).powi(2)).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for e in self.graph.edges() {
            m[(e.p, e.q)] -= e.w;
            m[(e.q, e.p)] -= e.w;
        }
        for p in 0..n {
            m[(p, p)] = self.diag[p];
        }
        m
    }
}
