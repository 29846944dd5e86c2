//! Inverse stability rating: spectral comparison of an input-space graph
//! `L_X` with an output-space graph `L_Y` over the same nodes.
//!
//! The largest generalized eigenvalues of `L_Y^+ L_X` measure how strongly
//! the map stretches input neighbourhoods. With the top `r` eigenpairs
//! (eigenvectors `L_Y`-orthonormal) collected as `V_r = [v_i sqrt(lambda_i)]`,
//! an input edge scores `||V_r^T e_pq||^2` and a node scores the mean of its
//! incident edge scores.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::graph::{knn_graph, Laplacian, WeightScheme, WEIGHT_EPS};
use crate::linalg::{generalized_top_dense, generalized_top_lanczos, GeneralizedEigs};
use crate::stats::min_max;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct SpectralBasis {
    /// Descending eigenvalues.
    pub eigvals: Vec<f64>,
    /// `L_Y`-orthonormal eigenvectors over the full node set (zero on nodes
    /// outside the analysed component).
    pub eigvecs: Vec<Vec<f64>>,
}

impl SpectralBasis {
    /// Row `p` of `V_r`.
    pub fn embedding(&self, p: usize) -> Vec<f64> {
        self.eigvals.iter().zip(&self.eigvecs).map(|(l, v)| v[p] * l.sqrt()).collect()
    }

    /// `||V_r^T (e_p - e_q)||^2`.
    pub fn edge_score(&self, p: usize, q: usize) -> f64 {
        self.eigvals.iter().zip(&self.eigvecs).map(|(l, v)| l * (v[p] - v[q]).powi(2)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct IsrScores {
    pub isr_max: f64,
    /// Aligned with the edges of the input graph.
    pub edge_scores: Vec<f64>,
    pub node_scores: Vec<f64>,
    /// Nodes left out because they sit outside the largest component of `L_Y`.
    pub excluded: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsrOptions {
    /// Number of eigenpairs kept.
    pub r: usize,
    /// Largest problem solved densely; bigger ones use Lanczos.
    pub dense_limit: usize,
    pub lanczos_steps: usize,
    pub seed: u64,
}

impl Default for IsrOptions {
    fn default() -> Self {
        Self { r: 3, dense_limit: 2000, lanczos_steps: 60, seed: 0 }
    }
}

pub fn isr_compute(lx: &Laplacian, ly: &Laplacian, r: usize) -> Result<(SpectralBasis, IsrScores)> {
    isr_compute_with(lx, ly, &IsrOptions { r, ..IsrOptions::default() })
}

pub fn isr_compute_with(lx: &Laplacian, ly: &Laplacian, opts: &IsrOptions) -> Result<(SpectralBasis, IsrScores)> {
    let n = lx.n();
    if ly.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ly.n() });
    }
    if opts.r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let isolated: Vec<usize> = (0..n).filter(|&p| ly.graph().degree(p) == 0).collect();
    if !isolated.is_empty() {
        return Err(Error::IsolatedNodes(isolated));
    }

    // L_Y must be nonsingular on the complement of the constants, so work on
    // its largest connected component.
    let (labels, count) = ly.graph().components();
    let (keep, excluded): (Vec<usize>, Vec<usize>) = if count == 1 {
        ((0..n).collect(), Vec::new())
    } else {
        let mut sizes = vec![0usize; count];
        labels.iter().for_each(|&c| sizes[c] += 1);
        let big = (0..count).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        (0..n).partition(|&p| labels[p] == big)
    };
    if keep.len() < 2 {
        return Err(Error::InvalidArgument("output graph has no component with two or more nodes".into()));
    }

    let eigs = if excluded.is_empty() {
        solve(lx, ly, opts)
    } else {
        let sub_x = Laplacian::new(lx.graph().induced(&keep));
        let sub_y = Laplacian::new(ly.graph().induced(&keep));
        let local = solve(&sub_x, &sub_y, opts);
        let lift = |v: &Vec<f64>| {
            let mut full = vec![0.0; n];
            for (i, &p) in keep.iter().enumerate() {
                full[p] = v[i];
            }
            full
        };
        GeneralizedEigs { values: local.values.clone(), vectors: local.vectors.iter().map(lift).collect() }
    };

    let basis = SpectralBasis { eigvals: eigs.values, eigvecs: eigs.vectors };
    let mut inside = vec![excluded.is_empty(); n];
    for &p in &keep {
        inside[p] = true;
    }
    let gx = lx.graph();
    let edge_scores: Vec<f64> = gx
        .edges()
        .iter()
        .map(|e| if inside[e.p] && inside[e.q] { basis.edge_score(e.p, e.q) } else { 0.0 })
        .collect();
    let node_scores = node_means(lx, &edge_scores);
    let isr_max = basis.eigvals.first().copied().unwrap_or(0.0);
    Ok((basis, IsrScores { isr_max, edge_scores, node_scores, excluded }))
}

fn solve(lx: &Laplacian, ly: &Laplacian, opts: &IsrOptions) -> GeneralizedEigs {
    if lx.n() <= opts.dense_limit {
        generalized_top_dense(lx, ly, opts.r)
    } else {
        generalized_top_lanczos(lx, ly, opts.r, opts.lanczos_steps.max(2 * opts.r + 10), opts.seed)
    }
}

/// Mean incident edge score of every node.
pub fn node_means(lap: &Laplacian, edge_scores: &[f64]) -> Vec<f64> {
    let g = lap.graph();
    (0..g.n())
        .map(|p| {
            let d = g.degree(p);
            if d == 0 {
                0.0
            } else {
                g.neighbors(p).map(|(_, _, e)| edge_scores[e]).sum::<f64>() / d as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SubsetScores {
    /// Node scores min-max normalised to `[0, 1]`.
    pub scores: Vec<f64>,
    /// Set when the losses carry no signal (constant) and scores are zero.
    pub degenerate: bool,
    pub isr_max: f64,
}

/// ISR node scores of a probe subset: `L_X` from the input features, `L_Y`
/// from the scalar losses, both kNN graphs with the same `k` and scheme.
pub fn isr_node_scores_subset(
    features: &[f64],
    dim: usize,
    losses: &[f64],
    k: usize,
    scheme: WeightScheme,
    opts: &IsrOptions,
) -> Result<SubsetScores> {
    let n = losses.len();
    if features.len() != n * dim {
        return Err(Error::DimensionMismatch { expected: n * dim, got: features.len() });
    }
    if n < k + 2 {
        return Err(Error::InvalidArgument(format!("subset of {n} points is too small for k = {k}")));
    }
    if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss of subset point {i}")));
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        warn!("constant losses over {n} probe points; ISR scores set to zero");
        return Ok(SubsetScores { scores: vec![0.0; n], degenerate: true, isr_max: 0.0 });
    }
    let lx = Laplacian::new(knn_graph(features, dim, k, scheme, WEIGHT_EPS)?);
    let ly = Laplacian::new(knn_graph(losses, 1, k, scheme, WEIGHT_EPS)?);
    let (_, scores) = isr_compute_with(&lx, &ly, opts)?;
    Ok(SubsetScores { scores: min_max(&scores.node_scores), degenerate: false, isr_max: scores.isr_max })
}
