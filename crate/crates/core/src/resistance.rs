//! Effective resistances of graph edges.
//!
//! [`er_krylov`] is the scalable estimator used by the sampler. It pushes a
//! handful of random vectors through a low-pass Jacobi smoother, so they
//! concentrate on the low-frequency part of the Laplacian spectrum that
//! dominates `e_pq^T L^+ e_pq`, and sums their normalised edge differences.
//! [`er_exact`] computes the same quantity from a dense pseudo-inverse and
//! serves as the validation oracle on small graphs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Laplacian;
use crate::linalg::connected_laplacian_pinv;
use crate::{Error, Result};

/// Largest node count accepted by the dense oracle.
pub const DENSE_ORACLE_LIMIT: usize = 2000;

/// Relaxation factor of the Jacobi smoother.
const JACOBI_OMEGA: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResistanceMethod {
    #[default]
    Krylov,
    Exact,
}

/// One resistance per edge of the graph, aligned with `SparseGraph::edges`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeResistances {
    pub values: Vec<f64>,
    pub method: ResistanceMethod,
}

impl EdgeResistances {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovOptions {
    pub n_vectors: usize,
    pub smoothing_steps: usize,
    pub seed: u64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { n_vectors: 16, smoothing_steps: 10, seed: 0 }
    }
}

/// Dense pseudo-inverses of every connected component.
#[derive(Clone, Debug)]
pub struct ExactResistance {
    labels: Vec<usize>,
    local: Vec<usize>,
    pinvs: Vec<DMatrix<f64>>,
}

impl ExactResistance {
    pub fn new(lap: &Laplacian) -> Result<Self> {
        let n = lap.n();
        if n > DENSE_ORACLE_LIMIT {
            return Err(Error::OracleTooLarge { n, limit: DENSE_ORACLE_LIMIT });
        }
        let g = lap.graph();
        let (labels, count) = g.components();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
        let mut local = vec![0; n];
        for (v, &c) in labels.iter().enumerate() {
            local[v] = members[c].len();
            members[c].push(v);
        }
        let mut dense: Vec<DMatrix<f64>> = members.iter().map(|m| DMatrix::zeros(m.len(), m.len())).collect();
        for e in g.edges() {
            let c = labels[e.p];
            let (a, b) = (local[e.p], local[e.q]);
            let d = &mut dense[c];
            d[(a, b)] -= e.w;
            d[(b, a)] -= e.w;
            d[(a, a)] += e.w;
            d[(b, b)] += e.w;
        }
        let pinvs = dense.iter().map(connected_laplacian_pinv).collect();
        Ok(Self { labels, local, pinvs })
    }

    /// Resistance between any two nodes, `None` across components.
    pub fn pair(&self, p: usize, q: usize) -> Option<f64> {
        if p == q {
            return Some(0.0);
        }
        let c = self.labels[p];
        if self.labels[q] != c {
            return None;
        }
        let m = &self.pinvs[c];
        let (a, b) = (self.local[p], self.local[q]);
        Some((m[(a, a)] + m[(b, b)] - 2.0 * m[(a, b)]).max(0.0))
    }
}

/// Exact edge resistances `(e_p - e_q)^T L^+ (e_p - e_q)`, per component.
pub fn er_exact(lap: &Laplacian) -> Result<EdgeResistances> {
    let exact = ExactResistance::new(lap)?;
    let values = lap
        .graph()
        .edges()
        .iter()
        .map(|e| exact.pair(e.p, e.q).expect("edge endpoints share a component"))
        .collect();
    Ok(EdgeResistances { values, method: ResistanceMethod::Exact })
}

/// Smoothed-random-vector estimate of every edge resistance.
///
/// Each random sign vector, with its component means removed, receives
/// `smoothing_steps` passes of the weighted Jacobi smoother
/// `x <- x - omega D^{-1} L x`; the iterates span a block Krylov subspace
/// concentrated on the low end of the spectrum. Rayleigh-Ritz in the `D`
/// inner product gives approximate pairs `L u = mu D u` with `u^T D u = 1`,
/// and the estimate is
///
/// `r(p, q) = 1/d_p + 1/d_q + sum_j (1/mu_j - 1) (u_j(p) - u_j(q))^2`,
///
/// i.e. the spectral expansion of `L^+` with every mode outside the subspace
/// replaced by its diagonal (high-frequency) limit. Values are clamped to
/// the bounds `max(1/d_p, 1/d_q) <= r <= 1/w_pq` and rescaled per component
/// so that `sum_e w_e r_e = n_c - 1` (Foster).
pub fn er_krylov(lap: &Laplacian, n_vectors: usize, smoothing_steps: usize, seed: u64) -> Result<EdgeResistances> {
    if n_vectors == 0 || smoothing_steps == 0 {
        return Err(Error::InvalidArgument("n_vectors and smoothing_steps must be at least 1".into()));
    }
    let g = lap.graph();
    let n = g.n();
    let edges = g.edges();
    let (labels, count) = g.components();
    let mut comp_size = vec![0usize; count];
    for &c in &labels {
        comp_size[c] += 1;
    }
    let deg = lap.diag();
    let mut comp_mass = vec![0.0; count];
    for (v, &c) in labels.iter().enumerate() {
        comp_mass[c] += deg[v];
    }
    let inv_diag: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();

    // D-orthonormal basis of the smoothed iterates.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vectors * smoothing_steps);
    let mut x = vec![0.0; n];
    let mut lx = vec![0.0; n];
    let mut sums = vec![0.0; count];
    for _ in 0..n_vectors {
        for v in x.iter_mut() {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for _ in 0..smoothing_steps {
            lap.apply(&x, &mut lx);
            for i in 0..n {
                x[i] -= JACOBI_OMEGA * inv_diag[i] * lx[i];
            }
            let mut y = x.clone();
            remove_weighted_means(&mut y, deg, &labels, &comp_mass, &mut sums);
            push_d_orthonormal(&mut basis, y, deg);
        }
    }

    let m = basis.len();
    if m == 0 {
        return Ok(EdgeResistances { values: edges.iter().map(|e| 1.0 / e.w).collect(), method: ResistanceMethod::Krylov });
    }
    let lbasis: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| {
            let mut t = vec![0.0; n];
            lap.apply(b, &mut t);
            t
        })
        .collect();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = basis[i].iter().zip(&lbasis[j]).map(|(p, q)| p * q).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(a);

    let mut acc: Vec<f64> = edges.iter().map(|e| inv_diag[e.p] + inv_diag[e.q]).collect();
    let mut u = vec![0.0; n];
    for j in 0..m {
        let mu = eig.eigenvalues[j];
        if mu <= 1e-12 {
            continue;
        }
        u.iter_mut().for_each(|v| *v = 0.0);
        for (k, b) in basis.iter().enumerate() {
            let c = eig.eigenvectors[(k, j)];
            u.iter_mut().zip(b).for_each(|(ui, bi)| *ui += c * bi);
        }
        let coef = 1.0 / mu - 1.0;
        for (r, e) in acc.iter_mut().zip(edges) {
            *r += coef * (u[e.p] - u[e.q]).powi(2);
        }
    }
    for (r, e) in acc.iter_mut().zip(edges) {
        let lower = inv_diag[e.p].max(inv_diag[e.q]);
        *r = r.clamp(lower, 1.0 / e.w);
    }

    // Foster calibration.
    let mut total = vec![0.0; count];
    for (k, e) in edges.iter().enumerate() {
        total[labels[e.p]] += e.w * acc[k];
    }
    let values = edges
        .iter()
        .zip(&acc)
        .map(|(e, &r)| {
            let c = labels[e.p];
            r * (comp_size[c] - 1) as f64 / total[c]
        })
        .collect();
    Ok(EdgeResistances { values, method: ResistanceMethod::Krylov })
}

/// Removes the degree-weighted mean of every component, making `x`
/// `D`-orthogonal to the Laplacian null space.
fn remove_weighted_means(x: &mut [f64], deg: &[f64], labels: &[usize], mass: &[f64], sums: &mut [f64]) {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for ((v, d), &c) in x.iter().zip(deg).zip(labels) {
        sums[c] += v * d;
    }
    for (v, &c) in x.iter_mut().zip(labels) {
        if mass[c] > 0.0 {
            *v -= sums[c] / mass[c];
        }
    }
}

/// Gram-Schmidt (two passes) in the `D` inner product; nearly dependent
/// vectors are dropped.
fn push_d_orthonormal(basis: &mut Vec<Vec<f64>>, mut y: Vec<f64>, deg: &[f64]) {
    let d_norm = |v: &[f64]| v.iter().zip(deg).map(|(a, d)| a * a * d).sum::<f64>().sqrt();
    let start = d_norm(&y);
    if start == 0.0 {
        return;
    }
    for _ in 0..2 {
        for b in basis.iter() {
            let c: f64 = y.iter().zip(b).zip(deg).map(|((a, bb), d)| a * bb * d).sum();
            y.iter_mut().zip(b).for_each(|(a, bb)| *a -= c * bb);
        }
    }
    let norm = d_norm(&y);
    if norm > 1e-8 * start {
        y.iter_mut().for_each(|v| *v /= norm);
        basis.push(y);
    }
}

/// Computes resistances with the requested method.
pub fn estimate(lap: &Laplacian, method: ResistanceMethod, opts: &KrylovOptions) -> Result<EdgeResistances> {
    match method {
        ResistanceMethod::Exact => er_exact(lap),
        ResistanceMethod::Krylov => er_krylov(lap, opts.n_vectors, opts.smoothing_steps, opts.seed),
    }
}
