//! Steady lid-driven cavity on the unit square by the stream-function /
//! vorticity finite-difference method.
//!
//! `u = psi_y`, `v = -psi_x`, `omega = v_x - u_y`, so `lap(psi) = -omega` and
//! `u . grad(omega) = nu lap(omega)`. Wall vorticity uses the second-order one-sided formula.
//! Pressure is recovered afterwards from `lap(p) = 2 (psi_xx psi_yy - psi_xy^2)`
//! with Neumann data taken from the wall-tangential vorticity gradient.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CavityOptions {
    /// Nodes per side, including walls.
    pub n: usize,
    pub reynolds: f64,
    pub lid_velocity: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CavityOptions {
    fn default() -> Self {
        Self { n: 129, reynolds: 100.0, lid_velocity: 1.0, tolerance: 1e-8, max_iter: 200_000 }
    }
}

#[derive(Clone, Debug)]
pub struct CavitySolution {
    n: usize,
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Pressure with zero mean over the grid nodes.
    pub p: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl CavitySolution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    /// Bilinear interpolation of `(u, v, p)` at `(x, y)`, clamped to the box.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let n = self.n;
        let s = (n - 1) as f64;
        let fx = x.clamp(0.0, 1.0) * s;
        let fy = y.clamp(0.0, 1.0) * s;
        let (i, j) = ((fx.floor() as usize).min(n - 2), (fy.floor() as usize).min(n - 2));
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let lerp = |f: &[f64]| {
            let a = f[j * n + i] * (1.0 - tx) + f[j * n + i + 1] * tx;
            let b = f[(j + 1) * n + i] * (1.0 - tx) + f[(j + 1) * n + i + 1] * tx;
            a * (1.0 - ty) + b * ty
        };
        [lerp(&self.u), lerp(&self.v), lerp(&self.p)]
    }
}

pub fn solve_cavity(opts: &CavityOptions) -> Result<CavitySolution> {
    let n = opts.n;
    if n < 5 {
        return Err(Error::InvalidArgument(format!("cavity grid needs at least 5 nodes per side, got {n}")));
    }
    if !(opts.reynolds > 0.0) {
        return Err(Error::InvalidArgument("reynolds number must be positive".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let nu = opts.lid_velocity.abs().max(1e-300) / opts.reynolds;
    let ulid = opts.lid_velocity;
    let idx = |i: usize, j: usize| j * n + i;
    let mut psi = vec![0.0; n * n];
    let mut om = vec![0.0; n * n];
    let sor_psi = 2.0 / (1.0 + (std::f64::consts::PI * h).sin());
    let relax_om = 0.9;

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let k = idx(i, j);
                let gs = 0.25 * (psi[k + 1] + psi[k - 1] + psi[k + n] + psi[k - n] + h * h * om[k]);
                psi[k] += sor_psi * (gs - psi[k]);
            }
        }
        wall_vorticity(&psi, &mut om, n, h, ulid);
        let c = h / (2.0 * nu);
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let k = idx(i, j);
                let u = (psi[k + n] - psi[k - n]) / (2.0 * h);
                let v = -(psi[k + 1] - psi[k - 1]) / (2.0 * h);
                let gs = 0.25
                    * (om[k + 1] + om[k - 1] + om[k + n] + om[k - n]
                        - c * (u * (om[k + 1] - om[k - 1]) + v * (om[k + n] - om[k - n])));
                om[k] += relax_om * (gs - om[k]);
            }
        }
        if iterations % 50 == 0 || iterations == opts.max_iter {
            residual = residual_norm(&psi, &om, n, h, nu);
            if !residual.is_finite() {
                return Err(Error::NonFinite(format!("cavity iteration {iterations}")));
            }
            if residual < opts.tolerance {
                break;
            }
        }
    }
    if residual >= opts.tolerance {
        return Err(Error::InvalidArgument(format!(
            "cavity solver stalled at residual {residual:e} after {iterations} iterations"
        )));
    }

    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = idx(i, j);
            u[k] = (psi[k + n] - psi[k - n]) / (2.0 * h);
            v[k] = -(psi[k + 1] - psi[k - 1]) / (2.0 * h);
        }
    }
    for i in 0..n {
        u[idx(i, n - 1)] = ulid;
    }
    let p = pressure(&psi, &om, n, h, nu, opts.tolerance)?;
    Ok(CavitySolution { n, psi, omega: om, u, v, p, iterations, residual })
}

fn wall_vorticity(psi: &[f64], om: &mut [f64], n: usize, h: f64, ulid: f64) {
    let h2 = h * h;
    let wall = |a: f64, b: f64| -(8.0 * a - b) / (2.0 * h2);
    for i in 0..n {
        om[i] = wall(psi[n + i], psi[2 * n + i]);
        om[(n - 1) * n + i] = wall(psi[(n - 2) * n + i], psi[(n - 3) * n + i]) - 3.0 * ulid / h;
    }
    for j in 1..n - 1 {
        om[j * n] = wall(psi[j * n + 1], psi[j * n + 2]);
        om[j * n + n - 1] = wall(psi[j * n + n - 2], psi[j * n + n - 3]);
    }
}

/// Largest Gauss-Seidel correction of either equation (update units).
fn residual_norm(psi: &[f64], om: &[f64], n: usize, h: f64, nu: f64) -> f64 {
    let mut worst = 0.0f64;
    let c = h / (2.0 * nu);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            let rp = 0.25 * (psi[k + 1] + psi[k - 1] + psi[k + n] + psi[k - n] + h * h * om[k]) - psi[k];
            let u = (psi[k + n] - psi[k - n]) / (2.0 * h);
            let v = -(psi[k + 1] - psi[k - 1]) / (2.0 * h);
            let ro = 0.25
                * (om[k + 1] + om[k - 1] + om[k + n] + om[k - n]
                    - c * (u * (om[k + 1] - om[k - 1]) + v * (om[k + n] - om[k - n])))
                - om[k];
            worst = worst.max(rp.abs()).max(ro.abs() * h * h);
        }
    }
    worst
}

fn pressure(psi: &[f64], om: &[f64], n: usize, h: f64, nu: f64, tol: f64) -> Result<Vec<f64>> {
    let idx = |i: usize, j: usize| j * n + i;
    let h2 = h * h;
    // Source 2 (psi_xx psi_yy - psi_xy^2) at interior nodes.
    let mut src = vec![0.0; n * n];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = idx(i, j);
            let pxx = (psi[k + 1] - 2.0 * psi[k] + psi[k - 1]) / h2;
            let pyy = (psi[k + n] - 2.0 * psi[k] + psi[k - n]) / h2;
            let pxy = (psi[k + n + 1] - psi[k + n - 1] - psi[k - n + 1] + psi[k - n - 1]) / (4.0 * h2);
            src[k] = 2.0 * (pxx * pyy - pxy * pxy);
        }
    }
    // Wall-tangential vorticity derivatives (one-sided at the corners).
    let d = |f: &dyn Fn(usize) -> f64, m: usize| -> Vec<f64> {
        (0..n)
            .map(|t| {
                if t == 0 {
                    (f(1) - f(0)) / h
                } else if t == m - 1 {
                    (f(m - 1) - f(m - 2)) / h
                } else {
                    (f(t + 1) - f(t - 1)) / (2.0 * h)
                }
            })
            .collect()
    };
    let left_dy = d(&|j| om[idx(0, j)], n);
    let right_dy = d(&|j| om[idx(n - 1, j)], n);
    let bottom_dx = d(&|i| om[idx(i, 0)], n);
    let top_dx = d(&|i| om[idx(i, n - 1)], n);

    let mut p = vec![0.0; n * n];
    let pin = idx(n / 2, 0);
    let sor = 2.0 / (1.0 + (std::f64::consts::PI * h).sin());
    for sweep in 0..400_000 {
        let mut change = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let k = idx(i, j);
                if k == pin {
                    continue;
                }
                // Ghost values from p_x = -nu omega_y (vertical walls) and
                // p_y = nu omega_x (horizontal walls).
                let west = if i == 0 { p[k + 1] + 2.0 * h * nu * left_dy[j] } else { p[k - 1] };
                let east = if i == n - 1 { p[k - 1] - 2.0 * h * nu * right_dy[j] } else { p[k + 1] };
                let south = if j == 0 { p[k + n] - 2.0 * h * nu * bottom_dx[i] } else { p[k - n] };
                let north = if j == n - 1 { p[k - n] + 2.0 * h * nu * top_dx[i] } else { p[k + n] };
                let gs = 0.25 * (west + east + south + north - h2 * src[k]);
                let delta = sor * (gs - p[k]);
                p[k] += delta;
                change = change.max(delta.abs());
            }
        }
        if change < tol {
            break;
        }
        if sweep == 399_999 || !change.is_finite() {
            return Err(Error::InvalidArgument(format!("pressure solve stalled at change {change:e}")));
        }
    }
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    Ok(p)
}
