//! PDE problems, physics-informed losses and the training loop.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cavity::{solve_cavity, CavityOptions, CavitySolution};
use crate::net::{Gradient, JetSpec, JetValue, Network, Optimizer};
use crate::pointcloud::{DomainSpec, PointCloud, Tag};
use crate::sampler::{BatchSampler, ModelProbe};
use crate::{Error, Result};

/// Reynolds number of the cavity problem.
pub const CAVITY_REYNOLDS: f64 = 100.0;

/// Parameter values at which parameterised problems are validated.
pub const PARAM_SLICES: [f64; 3] = [0.75, 0.875, 1.0];

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Poisson2d,
    Poisson2dParam,
    LdcLite,
}

impl ProblemKind {
    pub const NAMES: [&'static str; 3] = ["poisson2d", "poisson2d_param", "ldc_lite"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "poisson2d" => Ok(Self::Poisson2d),
            "poisson2d_param" => Ok(Self::Poisson2dParam),
            "ldc_lite" => Ok(Self::LdcLite),
            other => Err(Error::Config(format!("unknown problem `{other}`; expected one of {}", Self::NAMES.join(", ")))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Poisson2d => "poisson2d",
            Self::Poisson2dParam => "poisson2d_param",
            Self::LdcLite => "ldc_lite",
        }
    }

    pub fn default_domain(self) -> DomainSpec {
        match self {
            Self::Poisson2dParam => DomainSpec::UnitSquareParam { lo: 0.75, hi: 1.1 },
            _ => DomainSpec::UnitSquare,
        }
    }

    pub fn output_names(self) -> &'static [&'static str] {
        match self {
            Self::LdcLite => &["u", "v", "p"],
            _ => &["u"],
        }
    }

    pub fn out_dim(self) -> usize {
        self.output_names().len()
    }

    /// Number of interior residual operators.
    pub fn n_residuals(self) -> usize {
        match self {
            Self::LdcLite => 3,
            _ => 1,
        }
    }

    /// Outputs constrained on the boundary.
    pub fn constrained_outputs(self) -> &'static [usize] {
        match self {
            Self::LdcLite => &[0, 1],
            _ => &[0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub interior: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { interior: 1.0, boundary: 100.0 }
    }
}

/// Output values and spatial derivatives at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Derivs {
    pub v: [f64; 3],
    pub dx: [f64; 3],
    pub dy: [f64; 3],
    pub dxx: [f64; 3],
    pub dyy: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Problem {
    kind: ProblemKind,
    domain: DomainSpec,
    weights: LossWeights,
    reference: Arc<OnceLock<std::result::Result<CavitySolution, String>>>,
}

/// Per-term weighted losses of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// `w_F * mean(r_i^2)` per interior operator.
    pub interior: Vec<f64>,
    /// `w_C * mean((u_j - g_j)^2)` per constrained output.
    pub boundary: Vec<f64>,
    pub iteration: u64,
    pub wall_time_s: f64,
}

impl LossReport {
    pub fn loss_interior(&self) -> f64 {
        self.interior.iter().sum()
    }

    pub fn loss_boundary(&self) -> f64 {
        self.boundary.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub report: LossReport,
    pub grad: Gradient,
    /// Weighted squared interior residual of every interior point.
    pub point_losses: Vec<f64>,
}

impl Problem {
    pub fn new(kind: ProblemKind, domain: DomainSpec, weights: LossWeights) -> Result<Self> {
        let ok = matches!(
            (kind, domain),
            (ProblemKind::Poisson2d, DomainSpec::UnitSquare)
                | (ProblemKind::LdcLite, DomainSpec::UnitSquare)
                | (ProblemKind::Poisson2dParam, DomainSpec::UnitSquareParam { .. })
        );
        if !ok {
            return Err(Error::Config(format!("problem {} cannot run on domain {}", kind.name(), domain.name())));
        }
        if !(weights.interior >= 0.0 && weights.boundary >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(Self { kind, domain, weights, reference: Arc::new(OnceLock::new()) })
    }

    pub fn with_defaults(kind: ProblemKind) -> Self {
        Self::new(kind, kind.default_domain(), LossWeights::default()).expect("default domain fits")
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn in_dim(&self) -> usize {
        self.domain.schema().dim()
    }

    pub fn out_dim(&self) -> usize {
        self.kind.out_dim()
    }

    fn param(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Poisson2dParam => x[2],
            _ => 1.0,
        }
    }

    /// Source term `f` of the Poisson problems.
    pub fn forcing(&self, x: &[f64]) -> f64 {
        let a = self.param(x);
        -2.0 * a * a * PI * PI * (a * PI * x[0]).sin() * (a * PI * x[1]).sin()
    }

    /// Closed-form solution of the Poisson problems.
    pub fn exact(&self, x: &[f64]) -> Option<f64> {
        match self.kind {
            ProblemKind::LdcLite => None,
            _ => {
                let a = self.param(x);
                Some((a * PI * x[0]).sin() * (a * PI * x[1]).sin())
            }
        }
    }

    /// Jet of the closed-form solution along both spatial axes, laid out as
    /// [`Network::forward_jet`] with directions `[0, 1]`.
    pub fn analytic_jet(&self, x: &[f64]) -> Option<JetValue> {
        self.exact(x)?;
        let a = self.param(x);
        let k = a * PI;
        let (sx, cx) = (k * x[0]).sin_cos();
        let (sy, cy) = (k * x[1]).sin_cos();
        Some(JetValue {
            value: vec![sx * sy],
            first: vec![vec![k * cx * sy], vec![k * sx * cy]],
            second: vec![vec![-k * k * sx * sy], vec![k * k * cx * cy], vec![-k * k * sx * sy]],
        })
    }

    /// Boundary data for the constrained outputs at a point with `tag`.
    pub fn boundary_target(&self, x: &[f64], tag: Tag) -> [f64; 2] {
        match self.kind {
            ProblemKind::LdcLite => [if tag == Tag::Boundary(2) { 1.0 } else { 0.0 }, 0.0],
            _ => [self.exact(x).expect("poisson"), 0.0],
        }
    }

    /// Interior residuals from point derivatives.
    pub fn residuals_from(&self, x: &[f64], d: &Derivs) -> [f64; 3] {
        match self.kind {
            ProblemKind::LdcLite => {
                let nu = 1.0 / CAVITY_REYNOLDS;
                let (u, v) = (d.v[0], d.v[1]);
                [
                    u * d.dx[0] + v * d.dy[0] + d.dx[2] - nu * (d.dxx[0] + d.dyy[0]),
                    u * d.dx[1] + v * d.dy[1] + d.dy[2] - nu * (d.dxx[1] + d.dyy[1]),
                    d.dx[0] + d.dy[1],
                ]
            }
            _ => [d.dxx[0] + d.dyy[0] - self.forcing(x), 0.0, 0.0],
        }
    }

    /// Adds `sum_i g[i] * d r_i / d derivs` into `out`.
    fn residual_vjp(&self, d: &Derivs, g: &[f64; 3], out: &mut Derivs) {
        match self.kind {
            ProblemKind::LdcLite => {
                let nu = 1.0 / CAVITY_REYNOLDS;
                let (u, v) = (d.v[0], d.v[1]);
                // Momentum x.
                out.v[0] += g[0] * d.dx[0] + g[1] * d.dx[1];
                out.v[1] += g[0] * d.dy[0] + g[1] * d.dy[1];
                out.dx[0] += g[0] * u + g[2];
                out.dy[0] += g[0] * v;
                out.dx[2] += g[0];
                out.dxx[0] -= g[0] * nu;
                out.dyy[0] -= g[0] * nu;
                // Momentum y.
                out.dx[1] += g[1] * u;
                out.dy[1] += g[1] * v + g[2];
                out.dy[2] += g[1];
                out.dxx[1] -= g[1] * nu;
                out.dyy[1] -= g[1] * nu;
            }
            _ => {
                out.dxx[0] += g[0];
                out.dyy[0] += g[0];
            }
        }
    }

    /// Residuals from a jet with directions `[0, 1]` (see [`Problem::analytic_jet`]).
    pub fn residual_from_jet(&self, x: &[f64], jet: &JetValue) -> Vec<f64> {
        let mut d = Derivs::default();
        for o in 0..jet.value.len().min(3) {
            d.v[o] = jet.value[o];
            d.dx[o] = jet.first[0][o];
            d.dy[o] = jet.first[1][o];
            d.dxx[o] = jet.second[0][o];
            d.dyy[o] = jet.second[2][o];
        }
        self.residuals_from(x, &d)[..self.kind.n_residuals()].to_vec()
    }

    pub fn residual(&self, net: &Network, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch { expected: self.in_dim(), got: x.len() });
        }
        let r = self.residual_from_jet(x, &net.forward_jet(x, &[0, 1])?);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual at point {x:?}")));
        }
        Ok(r)
    }

    fn check_net(&self, net: &Network) -> Result<()> {
        if net.in_dim() != self.in_dim() {
            return Err(Error::DimensionMismatch { expected: self.in_dim(), got: net.in_dim() });
        }
        if net.out_dim() != self.out_dim() {
            return Err(Error::DimensionMismatch { expected: self.out_dim(), got: net.out_dim() });
        }
        Ok(())
    }

    fn interior_pass(&self, net: &Network, rows: &[f64]) -> Result<(crate::net::JetTape, Vec<Derivs>)> {
        let m = self.in_dim();
        let b = rows.len() / m;
        let xs = DMatrix::from_column_slice(m, b, rows);
        let tape = net.jet_batch(&xs, &JetSpec::with_laplacian(&[0, 1]))?;
        let out = tape.output();
        let (ox, oy, oxx, oyy) = (tape.first_offset(0), tape.first_offset(1), tape.second_offset(0, 0), tape.second_offset(1, 1));
        let derivs = (0..b)
            .map(|c| {
                let mut d = Derivs::default();
                for o in 0..self.out_dim() {
                    d.v[o] = out[(o, c)];
                    d.dx[o] = out[(o, ox + c)];
                    d.dy[o] = out[(o, oy + c)];
                    d.dxx[o] = out[(o, oxx + c)];
                    d.dyy[o] = out[(o, oyy + c)];
                }
                d
            })
            .collect();
        Ok((tape, derivs))
    }

    /// Weighted squared interior residual of each row.
    pub fn point_losses(&self, net: &Network, rows: &[f64]) -> Result<Vec<f64>> {
        self.check_net(net)?;
        let m = self.in_dim();
        let nr = self.kind.n_residuals();
        let mut out = Vec::with_capacity(rows.len() / m);
        for chunk in rows.chunks(1024 * m) {
            let (_, derivs) = self.interior_pass(net, chunk)?;
            for (x, d) in chunk.chunks_exact(m).zip(&derivs) {
                let r = self.residuals_from(x, d);
                let l = self.weights.interior * r[..nr].iter().map(|v| v * v).sum::<f64>();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("loss at point {x:?}")));
                }
                out.push(l);
            }
        }
        Ok(out)
    }

    /// Monte-Carlo loss of an interior and a boundary batch with its
    /// parameter gradient.
    pub fn batch_loss(&self, net: &Network, interior: &[f64], boundary: &[f64], boundary_tags: &[Tag]) -> Result<BatchLoss> {
        self.check_net(net)?;
        let m = self.in_dim();
        let (bi, bb) = (interior.len() / m, boundary.len() / m);
        if bi == 0 || bb == 0 || !interior.len().is_multiple_of(m) || !boundary.len().is_multiple_of(m) {
            return Err(Error::InvalidArgument("interior and boundary batches must be non-empty row sets".into()));
        }
        if boundary_tags.len() != bb {
            return Err(Error::DimensionMismatch { expected: bb, got: boundary_tags.len() });
        }
        let nr = self.kind.n_residuals();
        let wf = self.weights.interior;
        let wc = self.weights.boundary;

        let (tape, derivs) = self.interior_pass(net, interior)?;
        let mut interior_terms = vec![0.0; nr];
        let mut point_losses = Vec::with_capacity(bi);
        let mut g_out = DMatrix::zeros(self.out_dim(), tape.output().ncols());
        let (ox, oy, oxx, oyy) = (tape.first_offset(0), tape.first_offset(1), tape.second_offset(0, 0), tape.second_offset(1, 1));
        for (c, (x, d)) in interior.chunks_exact(m).zip(&derivs).enumerate() {
            let r = self.residuals_from(x, d);
            let mut pl = 0.0;
            let mut gr = [0.0; 3];
            for i in 0..nr {
                interior_terms[i] += wf * r[i] * r[i] / bi as f64;
                pl += wf * r[i] * r[i];
                gr[i] = 2.0 * wf * r[i] / bi as f64;
            }
            if !pl.is_finite() {
                return Err(Error::NonFinite(format!("interior residual at point {x:?}")));
            }
            point_losses.push(pl);
            let mut gd = Derivs::default();
            self.residual_vjp(d, &gr, &mut gd);
            for o in 0..self.out_dim() {
                g_out[(o, c)] = gd.v[o];
                g_out[(o, ox + c)] = gd.dx[o];
                g_out[(o, oy + c)] = gd.dy[o];
                g_out[(o, oxx + c)] = gd.dxx[o];
                g_out[(o, oyy + c)] = gd.dyy[o];
            }
        }
        let mut grad = tape.backward(net, &g_out)?;

        let xs = DMatrix::from_column_slice(m, bb, boundary);
        let btape = net.jet_batch(&xs, &JetSpec::value_only())?;
        let vals = btape.output();
        let cons = self.kind.constrained_outputs();
        let mut boundary_terms = vec![0.0; cons.len()];
        let mut gb = DMatrix::zeros(self.out_dim(), bb);
        for (c, (x, &tag)) in boundary.chunks_exact(m).zip(boundary_tags).enumerate() {
            let target = self.boundary_target(x, tag);
            for (j, &o) in cons.iter().enumerate() {
                let r = vals[(o, c)] - target[j];
                if !r.is_finite() {
                    return Err(Error::NonFinite(format!("boundary residual at point {x:?}")));
                }
                boundary_terms[j] += wc * r * r / bb as f64;
                gb[(o, c)] = 2.0 * wc * r / bb as f64;
            }
        }
        let bgrad = btape.backward(net, &gb)?;
        for (a, b) in grad.layers.iter_mut().zip(&bgrad.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
        let total = interior_terms.iter().sum::<f64>() + boundary_terms.iter().sum::<f64>();
        Ok(BatchLoss {
            report: LossReport { total, interior: interior_terms, boundary: boundary_terms, iteration: 0, wall_time_s: 0.0 },
            grad,
            point_losses,
        })
    }

    fn cavity(&self) -> Result<&CavitySolution> {
        self.reference
            .get_or_init(|| {
                info!("solving the cavity reference ({}x{})", 129, 129);
                solve_cavity(&CavityOptions::default()).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::InvalidArgument(format!("cavity reference failed: {e}")))
    }

    /// Reference outputs at `x`.
    pub fn reference(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ProblemKind::LdcLite => Ok(self.cavity()?.sample(x[0], x[1]).to_vec()),
            _ => Ok(vec![self.exact(x).expect("poisson")]),
        }
    }

    /// Uniform `resolution x resolution` grid on the unit square, one
    /// parameter value appended when the problem has one.
    pub fn eval_grid(&self, resolution: usize, param: Option<f64>) -> Vec<f64> {
        let s = (resolution - 1) as f64;
        let mut rows = Vec::with_capacity(resolution * resolution * 3);
        for j in 0..resolution {
            for i in 0..resolution {
                rows.push(i as f64 / s);
                rows.push(j as f64 / s);
                if let Some(a) = param {
                    rows.push(a);
                }
            }
        }
        rows
    }

    /// Relative L2 error per output on the evaluation grid; parameterised
    /// problems pool the slices in [`PARAM_SLICES`].
    pub fn reference_error(&self, net: &Network, resolution: usize) -> Result<Vec<f64>> {
        let slices: Vec<Option<f64>> = match self.kind {
            ProblemKind::Poisson2dParam => PARAM_SLICES.iter().map(|&a| Some(a)).collect(),
            _ => vec![None],
        };
        let (num, den) = self.error_sums(net, resolution, &slices)?;
        Ok(num.iter().zip(&den).map(|(n, d)| relative(*n, *d)).collect())
    }

    /// Relative L2 error per slice and output.
    pub fn reference_error_slices(&self, net: &Network, resolution: usize, slices: &[f64]) -> Result<Vec<Vec<f64>>> {
        slices
            .iter()
            .map(|&a| {
                let (num, den) = self.error_sums(net, resolution, &[Some(a)])?;
                Ok(num.iter().zip(&den).map(|(n, d)| relative(*n, *d)).collect())
            })
            .collect()
    }

    fn error_sums(&self, net: &Network, resolution: usize, slices: &[Option<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if resolution < 16 {
            return Err(Error::InvalidArgument(format!("evaluation grid needs at least 16 points per side, got {resolution}")));
        }
        self.check_net(net)?;
        let d = self.out_dim();
        let m = self.in_dim();
        let mut num = vec![0.0; d];
        let mut den = vec![0.0; d];
        for &slice in slices {
            let rows = self.eval_grid(resolution, slice);
            let n = rows.len() / m;
            let pred = net.forward_batch(&DMatrix::from_column_slice(m, n, &rows));
            let mut refs = Vec::with_capacity(n * d);
            for x in rows.chunks_exact(m) {
                refs.extend(self.reference(x)?);
            }
            let mut pred: Vec<Vec<f64>> = (0..d).map(|o| pred.row(o).iter().copied().collect()).collect();
            let mut refs: Vec<Vec<f64>> = (0..d).map(|o| refs.iter().skip(o).step_by(d).copied().collect()).collect();
            if self.kind == ProblemKind::LdcLite {
                // Pressure is defined up to a constant.
                for f in [&mut pred[2], &mut refs[2]] {
                    let mean = f.iter().sum::<f64>() / f.len() as f64;
                    f.iter_mut().for_each(|v| *v -= mean);
                }
            }
            for o in 0..d {
                for (p, r) in pred[o].iter().zip(&refs[o]) {
                    num[o] += (p - r) * (p - r);
                    den[o] += r * r;
                }
            }
        }
        Ok((num, den))
    }
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub steps: u64,
    pub eval_every: u64,
    pub eval_resolution: usize,
    pub boundary_batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { steps: 2000, eval_every: 100, eval_resolution: 101, boundary_batch: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub wall_time_s: f64,
    pub loss_total: f64,
    pub loss_interior: f64,
    pub loss_boundary: f64,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub outputs: Vec<String>,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn header(&self) -> String {
        let mut h = "iteration,wall_time_s,loss_total,loss_interior,loss_boundary".to_string();
        for o in &self.outputs {
            let _ = write!(h, ",err_{o}");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{},{}", r.iteration, r.wall_time_s, r.loss_total, r.loss_interior, r.loss_boundary);
            for e in &r.errors {
                let _ = write!(s, ",{e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty trajectory".into() })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[..5] != ["iteration", "wall_time_s", "loss_total", "loss_interior", "loss_boundary"] {
            return Err(Error::Parse { line: 1, msg: format!("unexpected trajectory header `{header}`") });
        }
        let outputs: Vec<String> = cols[5..]
            .iter()
            .map(|c| c.strip_prefix("err_").map(str::to_string).ok_or(Error::Parse { line: 1, msg: format!("bad column `{c}`") }))
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(perr(format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("invalid number `{s}`")));
            rows.push(TrajectoryRow {
                iteration: f[0].parse().map_err(|_| perr(format!("invalid iteration `{}`", f[0])))?,
                wall_time_s: num(f[1])?,
                loss_total: num(f[2])?,
                loss_interior: num(f[3])?,
                loss_boundary: num(f[4])?,
                errors: f[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { outputs, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    /// Smallest error per output.
    pub fn min_errors(&self) -> Vec<f64> {
        (0..self.outputs.len())
            .map(|o| self.rows.iter().map(|r| r.errors[o]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// First row at which output `o` reaches `threshold`.
    pub fn first_reaching(&self, o: usize, threshold: f64) -> Option<&TrajectoryRow> {
        self.rows.iter().find(|r| r.errors[o] <= threshold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    Diverged { iteration: u64, loss: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trajectory: Trajectory,
    pub status: TrainStatus,
    pub steps_done: u64,
}

/// Interior points of a cloud, addressed by local index.
struct Probe<'a> {
    problem: &'a Problem,
    net: &'a Network,
    rows: &'a [f64],
    dim: usize,
}

impl ModelProbe for Probe<'_> {
    fn point_losses(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let sel = gather(self.rows, self.dim, indices);
        self.problem.point_losses(self.net, &sel)
    }

    fn outputs(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let sel = gather(self.rows, self.dim, indices);
        let out = self.net.forward_batch(&DMatrix::from_column_slice(self.dim, indices.len(), &sel));
        Ok(out.as_slice().to_vec())
    }

    fn out_dim(&self) -> usize {
        self.net.out_dim()
    }
}

fn gather(rows: &[f64], dim: usize, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        out.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
    }
    out
}

/// Trains `net` on `cloud`. The sampler draws local indices into the
/// interior rows; boundary batches are drawn uniformly with replacement.
/// Wall time counts training only, not validation.
pub fn train(
    problem: &Problem,
    net: &mut Network,
    opt: &mut Optimizer,
    cloud: &PointCloud,
    sampler: &mut dyn BatchSampler,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    problem.check_net(net)?;
    if cloud.dim() != problem.in_dim() {
        return Err(Error::DimensionMismatch { expected: problem.in_dim(), got: cloud.dim() });
    }
    if opts.eval_every == 0 || opts.boundary_batch == 0 {
        return Err(Error::InvalidArgument("eval_every and boundary_batch must be at least 1".into()));
    }
    let m = cloud.dim();
    let interior_rows = cloud.select(&cloud.interior_indices(), &(0..m).collect::<Vec<_>>());
    let boundary_idx = cloud.boundary_indices();
    if boundary_idx.is_empty() || interior_rows.is_empty() {
        return Err(Error::InvalidArgument("cloud needs interior and boundary points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB0B0_0001);
    let mut trajectory = Trajectory {
        outputs: problem.kind.output_names().iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
    };
    let mut clock = 0.0;
    let mut last: Option<(Vec<f64>, Vec<f64>, Vec<Tag>)> = None;
    let mut status = TrainStatus::Completed;
    let mut t = 0;
    while t < opts.steps {
        let start = Instant::now();
        let idx = {
            let probe = Probe { problem, net, rows: &interior_rows, dim: m };
            sampler.next_batch(t, &probe)?
        };
        let interior = gather(&interior_rows, m, &idx);
        let picks: Vec<usize> = (0..opts.boundary_batch).map(|_| boundary_idx[rng.random_range(0..boundary_idx.len())]).collect();
        let boundary = cloud.select(&picks, &(0..m).collect::<Vec<_>>());
        let tags: Vec<Tag> = picks.iter().map(|&i| cloud.tags()[i]).collect();
        let loss = problem.batch_loss(net, &interior, &boundary, &tags);
        let loss = match loss {
            Ok(l) if l.report.total.is_finite() && l.report.total <= DIVERGENCE_LIMIT => l,
            Ok(l) => {
                status = TrainStatus::Diverged { iteration: t, loss: l.report.total };
                clock += start.elapsed().as_secs_f64();
                record(&mut trajectory, problem, net, t, clock, Some(&l.report), opts)?;
                break;
            }
            Err(Error::NonFinite(msg)) => {
                warn!("non-finite loss at iteration {t}: {msg}");
                status = TrainStatus::Diverged { iteration: t, loss: f64::NAN };
                break;
            }
            Err(e) => return Err(e),
        };
        let paused = start.elapsed().as_secs_f64();
        if t % opts.eval_every == 0 {
            record(&mut trajectory, problem, net, t, clock + paused, Some(&loss.report), opts)?;
        }
        let resume = Instant::now();
        opt.step(net, &loss.grad)?;
        clock += paused + resume.elapsed().as_secs_f64();
        last = Some((interior, boundary, tags));
        t += 1;
    }
    if status == TrainStatus::Completed {
        let report = match &last {
            Some((i, b, tags)) => Some(problem.batch_loss(net, i, b, tags)?.report),
            None => None,
        };
        if trajectory.rows.last().is_none_or(|r| r.iteration != t) {
            record(&mut trajectory, problem, net, t, clock, report.as_ref(), opts)?;
        }
    } else {
        warn!("training diverged: {status:?}");
    }
    Ok(TrainOutcome { trajectory, status, steps_done: t })
}

fn record(
    trajectory: &mut Trajectory,
    problem: &Problem,
    net: &Network,
    iteration: u64,
    wall: f64,
    report: Option<&LossReport>,
    opts: &TrainOptions,
) -> Result<()> {
    let errors = problem.reference_error(net, opts.eval_resolution)?;
    let (lt, li, lb) = report.map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.total, r.loss_interior(), r.loss_boundary()));
    trajectory.rows.push(TrajectoryRow {
        iteration,
        wall_time_s: wall,
        loss_total: lt,
        loss_interior: li,
        loss_boundary: lb,
        errors,
    });
    Ok(())
}
