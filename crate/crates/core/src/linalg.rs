//! Dense and iterative kernels for graph Laplacians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Laplacian;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

/// Pseudo-inverse of the Laplacian of a connected graph, via
/// `(L + J/n)^{-1} - J/n`.
pub fn connected_laplacian_pinv(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let shift = 1.0 / n as f64;
    let shifted = l.map(|v| v + shift);
    let inv = match shifted.clone().cholesky() {
        Some(c) => c.inverse(),
        None => return eigen_pinv(l),
    };
    inv.map(|v| v - shift)
}

/// Pseudo-inverse through a full symmetric eigendecomposition, dropping
/// eigenvalues below `1e-10 * max`.
pub fn eigen_pinv(l: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(l.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-10 * max.max(f64::MIN_POSITIVE);
    let inv: DVector<f64> = eig.eigenvalues.map(|v| if v.abs() > tol { 1.0 / v } else { 0.0 });
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Jacobi-preconditioned conjugate gradients for `L x = b` on a connected
/// graph. `b` must sum to zero; the returned `x` has zero mean.
pub fn solve_laplacian(lap: &Laplacian, b: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
    let n = lap.n();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return x;
    }
    let inv_diag: Vec<f64> = lap.diag().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    remove_mean(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        lap.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        remove_mean(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    remove_mean(&mut x);
    x
}

/// Largest half-bandwidth for which [`BandedFactor`] is attempted.
pub const MAX_BANDWIDTH: usize = 128;

/// Reverse Cuthill-McKee ordering of a connected graph: `order[k]` is the
/// node placed at position `k`.
pub fn rcm_order(lap: &Laplacian) -> Vec<usize> {
    let g = lap.graph();
    let n = g.n();
    let degree = |p: usize| g.neighbors(p).count();
    let bfs = |start: usize| -> Vec<usize> {
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        seen[start] = true;
        order.push(start);
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            let mut next: Vec<usize> = g.neighbors(p).map(|(q, _, _)| q).filter(|&q| !seen[q]).collect();
            next.sort_by_key(|&q| (degree(q), q));
            next.dedup();
            for q in next {
                if !seen[q] {
                    seen[q] = true;
                    order.push(q);
                }
            }
        }
        order
    };
    // Start from a pseudo-peripheral node: the last node of a BFS from the
    // minimum-degree node.
    let start = (0..n).min_by_key(|&p| (degree(p), p)).unwrap_or(0);
    let far = *bfs(start).last().unwrap_or(&start);
    let mut order = bfs(far);
    order.reverse();
    order
}

/// Banded Cholesky factor of a grounded connected Laplacian.
#[derive(Clone, Debug)]
pub struct BandedFactor {
    order: Vec<usize>,
    bw: usize,
    /// Row `i` holds `L[i][i - bw ..= i]` of the factor (reduced system).
    rows: Vec<Vec<f64>>,
}

impl BandedFactor {
    /// `None` when the graph is disconnected, the bandwidth exceeds
    /// `max_bw`, or the factorisation breaks down.
    pub fn new(lap: &Laplacian, max_bw: usize) -> Option<Self> {
        let n = lap.n();
        if n < 2 {
            return None;
        }
        let order = rcm_order(lap);
        if order.len() != n {
            return None;
        }
        let mut pos = vec![0; n];
        for (k, &p) in order.iter().enumerate() {
            pos[p] = k;
        }
        let g = lap.graph();
        let bw = g.edges().iter().map(|e| pos[e.p].abs_diff(pos[e.q])).max().unwrap_or(0);
        if bw > max_bw {
            return None;
        }
        // Ground the first node in the ordering; the reduced matrix is SPD.
        let m = n - 1;
        let mut rows = vec![vec![0.0; bw + 1]; m];
        let diag = lap.diag();
        for k in 1..n {
            rows[k - 1][bw] = diag[order[k]];
        }
        for e in g.edges() {
            let (a, b) = (pos[e.p], pos[e.q]);
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            if lo == 0 {
                continue;
            }
            rows[hi - 1][bw - (hi - lo)] -= e.w;
        }
        for i in 0..m {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = rows[i][bw - (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= rows[i][bw - (i - k)] * rows[j][bw - (j - k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return None;
                    }
                    rows[i][bw] = s.sqrt();
                } else {
                    rows[i][bw - (i - j)] = s / rows[j][bw];
                }
            }
        }
        Some(Self { order, bw, rows })
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Solves `L x = b` for mean-zero `b`; returns the mean-zero solution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order.len();
        let m = n - 1;
        let bw = self.bw;
        let mut y: Vec<f64> = self.order[1..].iter().map(|&p| b[p]).collect();
        for i in 0..m {
            let j0 = i.saturating_sub(bw);
            let mut s = y[i];
            for j in j0..i {
                s -= self.rows[i][bw - (i - j)] * y[j];
            }
            y[i] = s / self.rows[i][bw];
        }
        for i in (0..m).rev() {
            let mut s = y[i];
            for j in i + 1..(i + bw + 1).min(m) {
                s -= self.rows[j][bw - (j - i)] * y[j];
            }
            y[i] = s / self.rows[i][bw];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.order.iter().enumerate().skip(1) {
            x[p] = y[k - 1];
        }
        remove_mean(&mut x);
        x
    }
}

/// Top eigenpairs of the pencil `L_X u = lambda L_Y u` restricted to the
/// complement of the constant vector.
#[derive(Clone, Debug)]
pub struct GeneralizedEigs {
    /// Descending eigenvalues.
    pub values: Vec<f64>,
    /// Eigenvectors, normalised so that `v^T L_Y v = 1`.
    pub vectors: Vec<Vec<f64>>,
}

/// Dense solve; `ly` must be the Laplacian of a connected graph.
pub fn generalized_top_dense(lx: &Laplacian, ly: &Laplacian, r: usize) -> GeneralizedEigs {
    let n = lx.n();
    let eig_y = SymmetricEigen::new(ly.to_dense());
    let max = eig_y.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = 1e-12 * max.max(f64::MIN_POSITIVE);
    // B = U_+ diag(lambda_+^{-1/2}); columns span the complement of the null space.
    let keep: Vec<usize> = (0..n).filter(|&i| eig_y.eigenvalues[i] > tol).collect();
    let mut b = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = 1.0 / eig_y.eigenvalues[i].sqrt();
        b.set_column(c, &(eig_y.eigenvectors.column(i) * s));
    }
    let m = b.transpose() * lx.to_dense() * &b;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let take = r.min(order.len());
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    for &i in &order[..take] {
        values.push(eig.eigenvalues[i].max(0.0));
        let v = &b * eig.eigenvectors.column(i);
        vectors.push(v.iter().copied().collect());
    }
    GeneralizedEigs { values, vectors }
}

/// Lanczos iteration on `L_Y^+ L_X`, which is self-adjoint in the `L_Y`
/// inner product. Uses full reorthogonalisation and CG solves with `L_Y`.
pub fn generalized_top_lanczos(
    lx: &Laplacian,
    ly: &Laplacian,
    r: usize,
    steps: usize,
    seed: u64,
) -> GeneralizedEigs {
    let n = lx.n();
    let steps = steps.clamp(r.min(n - 1), n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_inner = |a: &[f64], b: &[f64]| -> f64 {
        let mut tmp = vec![0.0; n];
        ly.apply(b, &mut tmp);
        dot(a, &tmp)
    };

    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    remove_mean(&mut q);
    let norm = y_inner(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= norm);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut ly_basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let factor = BandedFactor::new(ly, MAX_BANDWIDTH);
    let mut lxq = vec![0.0; n];
    for _ in 0..steps {
        let mut lyq = vec![0.0; n];
        ly.apply(&q, &mut lyq);
        basis.push(q.clone());
        ly_basis.push(lyq);
        lx.apply(&q, &mut lxq);
        let mut rhs = lxq.clone();
        remove_mean(&mut rhs);
        let mut w = match &factor {
            Some(f) => f.solve(&rhs),
            None => solve_laplacian(ly, &rhs, 1e-10, 4 * n + 100),
        };
        // Full reorthogonalisation, twice for stability.
        for _ in 0..2 {
            for (b, lyb) in basis.iter().zip(&ly_basis) {
                let c = dot(&w, lyb);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let beta = y_inner(&w, &w).max(0.0).sqrt();
        if beta <= 1e-12 || basis.len() == steps {
            break;
        }
        q = w.into_iter().map(|v| v / beta).collect();
    }

    // Rayleigh-Ritz on the L_Y-orthonormal basis: T = Q^T L_X Q.
    let m = basis.len();
    let mut lx_basis = Vec::with_capacity(m);
    for b in &basis {
        let mut t = vec![0.0; n];
        lx.apply(b, &mut t);
        lx_basis.push(t);
    }
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = dot(&basis[i], &lx_basis[j]);
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let take = r.min(m);
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    for &i in &order[..take] {
        values.push(eig.eigenvalues[i].max(0.0));
        let mut v = vec![0.0; n];
        for (k, b) in basis.iter().enumerate() {
            let c = eig.eigenvectors[(k, i)];
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi += c * bi);
        }
        vectors.push(v);
    }
    GeneralizedEigs { values, vectors }
}
