//! Collocation point clouds: generation, tagging and CSV persistence.
//!
//! A cloud is an `N x M` row-major matrix plus one constraint tag per row.
//! Interior points feed the PDE residuals; boundary points carry the index
//! of the boundary constraint they belong to.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used by the geometric boundary predicates.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub spatial_dims: Vec<usize>,
    pub param_dims: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
}

impl FeatureSchema {
    pub fn new(
        names: Vec<String>,
        spatial_dims: Vec<usize>,
        param_dims: Vec<usize>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let m = names.len();
        if m == 0 {
            return Err(Error::InvalidArgument("schema needs at least one feature".into()));
        }
        if bounds.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: bounds.len() });
        }
        for &d in spatial_dims.iter().chain(&param_dims) {
            if d >= m {
                return Err(Error::InvalidArgument(format!("feature index {d} out of range for {m} features")));
            }
        }
        if spatial_dims.iter().any(|d| param_dims.contains(d)) {
            return Err(Error::InvalidArgument("spatial and parameter dimensions overlap".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidArgument(format!("invalid bounds [{lo}, {hi}] for feature {i}")));
            }
        }
        Ok(Self { names, spatial_dims, param_dims, bounds })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Spatial followed by parameter dimensions.
    pub fn spatial_and_param_dims(&self) -> Vec<usize> {
        self.spatial_dims.iter().chain(&self.param_dims).copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Interior,
    Boundary(u16),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Interior => write!(f, "interior"),
            Tag::Boundary(j) => write!(f, "boundary:{j}"),
        }
    }
}

impl std::str::FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "interior" {
            return Ok(Tag::Interior);
        }
        s.strip_prefix("boundary:")
            .and_then(|j| j.parse().ok())
            .map(Tag::Boundary)
            .ok_or_else(|| format!("unknown tag `{s}`"))
    }
}

/// Immutable `N x M` collocation cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    schema: FeatureSchema,
    data: Vec<f64>,
    tags: Vec<Tag>,
}

impl PointCloud {
    pub fn new(schema: FeatureSchema, data: Vec<f64>, tags: Vec<Tag>) -> Result<Self> {
        let m = schema.dim();
        if tags.is_empty() {
            return Err(Error::InvalidArgument("point cloud must contain at least one point".into()));
        }
        if data.len() != tags.len() * m {
            return Err(Error::DimensionMismatch { expected: tags.len() * m, got: data.len() });
        }
        for (i, row) in data.chunks_exact(m).enumerate() {
            for (d, (&v, &(lo, hi))) in row.iter().zip(&schema.bounds).enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("point {i}, feature {d}")));
                }
                if v < lo || v > hi {
                    return Err(Error::InvalidArgument(format!(
                        "point {i} feature {d} = {v} outside bounds [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(Self { schema, data, tags })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == Tag::Interior).collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] != Tag::Interior).collect()
    }

    /// New cloud holding the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        let mut tags = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            tags.push(self.tags[i]);
        }
        Self::new(self.schema.clone(), data, tags)
    }

    /// Row-major `len(indices) x len(features)` matrix of selected columns.
    pub fn select(&self, indices: &[usize], features: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * features.len());
        for &i in indices {
            let row = self.row(i);
            out.extend(features.iter().map(|&f| row[f]));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.schema;
        writeln!(w, "# features: {}", s.names.join(","))?;
        writeln!(w, "# spatial: {}", join_usize(&s.spatial_dims))?;
        writeln!(w, "# param: {}", join_usize(&s.param_dims))?;
        let bounds: Vec<String> = s.bounds.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
        writeln!(w, "# bounds: {}", bounds.join(","))?;
        for (row, tag) in self.data.chunks_exact(s.dim()).zip(&self.tags) {
            for v in row {
                // Display on f64 is the shortest representation that parses back exactly.
                write!(w, "{v},")?;
            }
            writeln!(w, "{tag}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut names: Option<Vec<String>> = None;
        let mut spatial: Option<Vec<usize>> = None;
        let mut param: Option<Vec<usize>> = None;
        let mut bounds: Option<Vec<(f64, f64)>> = None;
        let mut data = Vec::new();
        let mut tags = Vec::new();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: lineno, msg };
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .split_once(':')
                    .ok_or_else(|| perr(format!("malformed header `{line}`")))?;
                let value = value.trim();
                match key.trim() {
                    "features" => {
                        let n: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                        if n.iter().any(|s| s.is_empty()) {
                            return Err(perr("empty feature name".into()));
                        }
                        names = Some(n);
                    }
                    "spatial" => spatial = Some(parse_usize_list(value).map_err(perr)?),
                    "param" => param = Some(parse_usize_list(value).map_err(perr)?),
                    "bounds" => bounds = Some(parse_bounds(value).map_err(perr)?),
                    other => return Err(perr(format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let m = match &names {
                Some(n) => n.len(),
                None => return Err(perr("no header".into())),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m + 1 {
                return Err(perr(format!(
                    "row has {} columns, expected {} features plus a tag",
                    fields.len(),
                    m
                )));
            }
            for f in &fields[..m] {
                let v: f64 = f.trim().parse().map_err(|_| perr(format!("invalid number `{f}`")))?;
                data.push(v);
            }
            tags.push(fields[m].trim().parse::<Tag>().map_err(perr)?);
        }

        let names = names.ok_or(Error::Parse { line: 1, msg: "no header".into() })?;
        let m = names.len();
        if tags.is_empty() {
            return Err(Error::Parse { line: 1, msg: "no data rows".into() });
        }
        let spatial = spatial.unwrap_or_else(|| (0..m).collect());
        let param = param.unwrap_or_default();
        let bounds = match bounds {
            Some(b) => b,
            None => (0..m)
                .map(|d| {
                    let col = data.iter().skip(d).step_by(m);
                    let lo = col.clone().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
                .collect(),
        };
        let schema = FeatureSchema::new(names, spatial, param, bounds)?;
        Self::new(schema, data, tags)
    }
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("invalid index `{t}`")))
        .collect()
}

fn parse_bounds(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|t| {
            let (lo, hi) = t.split_once(':').ok_or_else(|| format!("invalid bound `{t}`"))?;
            let lo = lo.trim().parse().map_err(|_| format!("invalid bound `{t}`"))?;
            let hi = hi.trim().parse().map_err(|_| format!("invalid bound `{t}`"))?;
            Ok((lo, hi))
        })
        .collect()
}

/// Supported collocation domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum DomainSpec {
    /// `(0,1)^2`; constraints 0..4 are the bottom, right, top and left edges.
    UnitSquare,
    /// Unit square with one design parameter `a` drawn from `[lo, hi]`.
    UnitSquareParam { lo: f64, hi: f64 },
    /// Annulus `r_inner < |x| < r_outer` with the inner radius as parameter.
    /// Constraint 0 is the inner circle, 1 the outer circle.
    AnnulusLite { r_inner_lo: f64, r_inner_hi: f64, r_outer: f64 },
}

impl DomainSpec {
    pub const NAMES: [&'static str; 3] = ["unit-square", "unit-square-param", "annulus-lite"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "unit-square" => Ok(Self::UnitSquare),
            "unit-square-param" => Ok(Self::UnitSquareParam { lo: 0.75, hi: 1.1 }),
            "annulus-lite" => Ok(Self::AnnulusLite { r_inner_lo: 0.75, r_inner_hi: 1.1, r_outer: 2.0 }),
            other => Err(Error::Config(format!(
                "unknown domain `{other}`; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::UnitSquare => "unit-square",
            Self::UnitSquareParam { .. } => "unit-square-param",
            Self::AnnulusLite { .. } => "annulus-lite",
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        let (names, spatial, param, bounds): (&[&str], Vec<usize>, Vec<usize>, Vec<(f64, f64)>) = match *self {
            Self::UnitSquare => (&["x", "y"], vec![0, 1], vec![], vec![(0.0, 1.0); 2]),
            Self::UnitSquareParam { lo, hi } => {
                (&["x", "y", "a"], vec![0, 1], vec![2], vec![(0.0, 1.0), (0.0, 1.0), (lo, hi)])
            }
            Self::AnnulusLite { r_inner_lo, r_inner_hi, r_outer } => (
                &["x", "y", "r_i"],
                vec![0, 1],
                vec![2],
                vec![(-r_outer, r_outer), (-r_outer, r_outer), (r_inner_lo, r_inner_hi)],
            ),
        };
        FeatureSchema {
            names: names.iter().map(|s| s.to_string()).collect(),
            spatial_dims: spatial,
            param_dims: param,
            bounds,
        }
    }

    pub fn n_constraints(&self) -> usize {
        match self {
            Self::UnitSquare | Self::UnitSquareParam { .. } => 4,
            Self::AnnulusLite { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::UnitSquare => true,
            Self::UnitSquareParam { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Self::AnnulusLite { r_inner_lo, r_inner_hi, r_outer } => {
                r_inner_lo > 0.0 && r_inner_lo <= r_inner_hi && r_inner_hi < r_outer && r_outer.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameters for domain {self:?}")))
        }
    }

    /// Geometric predicate of boundary constraint `j`.
    pub fn on_boundary(&self, j: u16, p: &[f64]) -> bool {
        match *self {
            Self::UnitSquare | Self::UnitSquareParam { .. } => {
                let (x, y) = (p[0], p[1]);
                let inside = (-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&x)
                    && (-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&y);
                inside
                    && match j {
                        0 => y.abs() <= BOUNDARY_TOL,
                        1 => (x - 1.0).abs() <= BOUNDARY_TOL,
                        2 => (y - 1.0).abs() <= BOUNDARY_TOL,
                        3 => x.abs() <= BOUNDARY_TOL,
                        _ => false,
                    }
            }
            Self::AnnulusLite { r_outer, .. } => {
                let rho = p[0].hypot(p[1]);
                match j {
                    0 => (rho - p[2]).abs() <= BOUNDARY_TOL * p[2].max(1.0),
                    1 => (rho - r_outer).abs() <= BOUNDARY_TOL * r_outer.max(1.0),
                    _ => false,
                }
            }
        }
    }

    /// Whether `p` lies strictly inside the domain.
    pub fn strictly_inside(&self, p: &[f64]) -> bool {
        match *self {
            Self::UnitSquare | Self::UnitSquareParam { .. } => {
                p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0
            }
            Self::AnnulusLite { r_outer, .. } => {
                let rho = p[0].hypot(p[1]);
                rho > p[2] && rho < r_outer
            }
        }
    }

    fn param_value(lo: f64, hi: f64, u: f64) -> f64 {
        (lo + (hi - lo) * u).min(hi)
    }

    /// Maps a point of the unit cube to an interior point.
    fn interior_from_unit(&self, u: &[f64]) -> Vec<f64> {
        match *self {
            Self::UnitSquare => vec![u[0], u[1]],
            Self::UnitSquareParam { lo, hi } => vec![u[0], u[1], Self::param_value(lo, hi, u[2])],
            Self::AnnulusLite { r_inner_lo, r_inner_hi, r_outer } => {
                let ri = Self::param_value(r_inner_lo, r_inner_hi, u[2]);
                // Uniform in area.
                let rho = (ri * ri + (r_outer * r_outer - ri * ri) * u[0]).sqrt();
                let theta = std::f64::consts::TAU * u[1];
                vec![rho * theta.cos(), rho * theta.sin(), ri]
            }
        }
    }

    fn unit_dim(&self) -> usize {
        match self {
            Self::UnitSquare => 2,
            _ => 3,
        }
    }

    fn boundary_point(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, u16) {
        match *self {
            Self::UnitSquare | Self::UnitSquareParam { .. } => {
                let j = rng.random_range(0..4u16);
                let t: f64 = rng.random();
                let (x, y) = match j {
                    0 => (t, 0.0),
                    1 => (1.0, t),
                    2 => (t, 1.0),
                    _ => (0.0, t),
                };
                let mut p = vec![x, y];
                if let Self::UnitSquareParam { lo, hi } = *self {
                    p.push(Self::param_value(lo, hi, rng.random()));
                }
                (p, j)
            }
            Self::AnnulusLite { r_inner_lo, r_inner_hi, r_outer } => {
                let ri = Self::param_value(r_inner_lo, r_inner_hi, rng.random());
                let (total_inner, total_outer) = (ri, r_outer);
                // Pick a circle proportionally to its circumference.
                let j = if rng.random::<f64>() * (total_inner + total_outer) < total_inner { 0 } else { 1 };
                let rho = if j == 0 { ri } else { r_outer };
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                (vec![rho * theta.cos(), rho * theta.sin(), ri], j)
            }
        }
    }
}

/// How interior points are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingLaw {
    #[default]
    Uniform,
    LatinHypercube,
}

/// Draws `n_interior` interior and `n_boundary` boundary points. Interior
/// rows come first.
pub fn generate(
    domain: &DomainSpec,
    n_interior: usize,
    n_boundary: usize,
    seed: u64,
    law: SamplingLaw,
) -> Result<PointCloud> {
    if n_interior == 0 || n_boundary == 0 {
        return Err(Error::InvalidArgument("point counts must be at least 1".into()));
    }
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = domain.schema();
    let m = schema.dim();
    let ud = domain.unit_dim();

    let unit: Vec<f64> = match law {
        SamplingLaw::Uniform => (0..n_interior * ud).map(|_| rng.random()).collect(),
        SamplingLaw::LatinHypercube => {
            let mut u = vec![0.0; n_interior * ud];
            let mut perm: Vec<usize> = (0..n_interior).collect();
            for d in 0..ud {
                perm.shuffle(&mut rng);
                for (i, &stratum) in perm.iter().enumerate() {
                    u[i * ud + d] = (stratum as f64 + rng.random::<f64>()) / n_interior as f64;
                }
            }
            u
        }
    };

    let mut data = Vec::with_capacity((n_interior + n_boundary) * m);
    let mut tags = Vec::with_capacity(n_interior + n_boundary);
    for u in unit.chunks_exact(ud) {
        let mut p = domain.interior_from_unit(u);
        while !domain.strictly_inside(&p) {
            let fresh: Vec<f64> = (0..ud).map(|_| rng.random()).collect();
            p = domain.interior_from_unit(&fresh);
        }
        data.extend_from_slice(&p);
        tags.push(Tag::Interior);
    }
    for _ in 0..n_boundary {
        let (p, j) = domain.boundary_point(&mut rng);
        data.extend_from_slice(&p);
        tags.push(Tag::Boundary(j));
    }
    // Annulus points can overshoot the coordinate bounds by one ulp.
    for row in data.chunks_exact_mut(m) {
        for (v, &(lo, hi)) in row.iter_mut().zip(&schema.bounds) {
            *v = v.clamp(lo, hi);
        }
    }
    PointCloud::new(schema, data, tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_small() {
        let pc = generate(&DomainSpec::UnitSquare, 4, 4, 0, SamplingLaw::Uniform).unwrap();
        assert_eq!(pc.len(), 8);
        for i in pc.interior_indices() {
            let p = pc.row(i);
            assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0);
        }
        for i in pc.boundary_indices() {
            let p = pc.row(i);
            assert!(p.iter().any(|&c| c == 0.0 || c == 1.0));
        }
    }

    #[test]
    fn param_bounds() {
        let d = DomainSpec::UnitSquareParam { lo: 0.5, hi: 2.0 };
        let pc = generate(&d, 100, 40, 1, SamplingLaw::Uniform).unwrap();
        assert_eq!(pc.dim(), 3);
        for i in pc.interior_indices() {
            let a = pc.row(i)[2];
            assert!((0.5..=2.0).contains(&a));
        }
    }

    #[test]
    fn tag_soundness_all_domains() {
        for name in DomainSpec::NAMES {
            let d = DomainSpec::from_name(name).unwrap();
            for law in [SamplingLaw::Uniform, SamplingLaw::LatinHypercube] {
                let pc = generate(&d, 300, 200, 7, law).unwrap();
                for (i, tag) in pc.tags().iter().enumerate() {
                    match *tag {
                        Tag::Boundary(j) => assert!(d.on_boundary(j, pc.row(i)), "{name} point {i}"),
                        Tag::Interior => assert!(d.strictly_inside(pc.row(i)), "{name} point {i}"),
                    }
                }
            }
        }
    }

    #[test]
    fn determinism() {
        let d = DomainSpec::from_name("annulus-lite").unwrap();
        let a = generate(&d, 50, 20, 99, SamplingLaw::Uniform).unwrap();
        let b = generate(&d, 50, 20, 99, SamplingLaw::Uniform).unwrap();
        assert_eq!(a, b);
        let c = generate(&d, 50, 20, 100, SamplingLaw::Uniform).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn coverage_of_4x4_grid() {
        for seed in 0..100 {
            let pc = generate(&DomainSpec::UnitSquare, 1000, 1, seed, SamplingLaw::Uniform).unwrap();
            let mut cells = [0usize; 16];
            for i in pc.interior_indices() {
                let p = pc.row(i);
                let cx = ((p[0] * 4.0) as usize).min(3);
                let cy = ((p[1] * 4.0) as usize).min(3);
                cells[cy * 4 + cx] += 1;
            }
            assert!(cells.iter().all(|&c| c >= 1), "seed {seed}: {cells:?}");
        }
    }

    #[test]
    fn latin_hypercube_strata() {
        let pc = generate(&DomainSpec::UnitSquare, 64, 1, 3, SamplingLaw::LatinHypercube).unwrap();
        for d in 0..2 {
            let mut hit = [false; 64];
            for i in pc.interior_indices() {
                hit[(pc.row(i)[d] * 64.0) as usize] = true;
            }
            assert!(hit.iter().all(|&h| h));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(DomainSpec::from_name("torus"), Err(Error::Config(_))));
        assert!(generate(&DomainSpec::UnitSquare, 0, 4, 0, SamplingLaw::Uniform).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = DomainSpec::from_name("unit-square-param").unwrap();
        let pc = generate(&d, 200, 50, 11, SamplingLaw::Uniform).unwrap();
        let mut buf = Vec::new();
        pc.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, pc);
        let bits = |p: &PointCloud| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&pc));
    }

    #[test]
    fn csv_errors() {
        let err = PointCloud::read_csv("".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no header"), "{err}");

        let text = "# features: x,y\n0.1,0.2,interior\n0.1,0.2,0.3,interior\n";
        match PointCloud::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        let text = "0.1,0.2,interior\n";
        let err = PointCloud::read_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no header"), "{err}");

        let text = "# features: x,y\n0.1,0.2,0.3\n";
        assert!(matches!(PointCloud::read_csv(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn schema_invariants() {
        let n = vec!["x".to_string(), "y".to_string()];
        assert!(FeatureSchema::new(n.clone(), vec![0], vec![0], vec![(0.0, 1.0); 2]).is_err());
        assert!(FeatureSchema::new(n.clone(), vec![2], vec![], vec![(0.0, 1.0); 2]).is_err());
        assert!(FeatureSchema::new(n.clone(), vec![0], vec![1], vec![(1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(FeatureSchema::new(n, vec![0], vec![1], vec![(0.0, 1.0); 2]).is_ok());
    }
}
