//! Mini-batch samplers: uniform passes, a loss-proportional baseline with
//! piecewise-constant loss estimates, and the cluster-scored sampler that
//! rebuilds its graph decomposition in the background.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{knn_graph, rebuild_with_outputs, standardize_columns, Laplacian, WeightScheme, WEIGHT_EPS};
use crate::isr::{isr_node_scores_subset, IsrOptions};
use crate::kdtree::KdTree;
use crate::lrd::{decompose, default_budget, Clustering};
use crate::resistance::{er_krylov, KrylovOptions};
use crate::stats::min_max;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Uniform,
    Mis,
    Sgm,
    SgmS,
}

impl SamplerMode {
    pub const NAMES: [&'static str; 4] = ["uniform", "mis", "sgm", "sgm_s"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(Self::Uniform),
            "mis" => Ok(Self::Mis),
            "sgm" => Ok(Self::Sgm),
            "sgm_s" => Ok(Self::SgmS),
            other => Err(Error::Config(format!("unknown sampler mode `{other}`; valid modes: {}", Self::NAMES.join(", ")))),
        }
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub batch_size: usize,
    pub probe_fraction: f64,
    pub tau_e: u64,
    pub tau_g: u64,
    pub p_min: f64,
    pub p_max: f64,
    /// Points per assembled epoch; `None` means a sixteenth of the points.
    pub epoch_target: Option<usize>,
    pub mis_seeds: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Uniform,
            batch_size: 256,
            probe_fraction: 0.15,
            tau_e: 700,
            tau_g: 2500,
            p_min: 0.02,
            p_max: 0.6,
            epoch_target: None,
            mis_seeds: 1000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn epoch_target_for(&self, n_points: usize) -> usize {
        self.epoch_target.unwrap_or((n_points / 16).max(1))
    }

    /// Every violated constraint, for `n_points` candidate points.
    pub fn problems(&self, n_points: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("sampler.batch_size must be at least 1".to_string());
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction <= 1.0) {
            out.push(format!("sampler.probe_fraction must lie in (0, 1], got {}", self.probe_fraction));
        }
        if self.tau_e == 0 {
            out.push("sampler.tau_e must be at least 1".to_string());
        }
        if self.tau_g == 0 {
            out.push("sampler.tau_g must be at least 1".to_string());
        }
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max <= 1.0) {
            out.push(format!("sampler needs 0 < p_min <= p_max <= 1, got [{}, {}]", self.p_min, self.p_max));
        }
        if self.mis_seeds == 0 {
            out.push("sampler.mis_seeds must be at least 1".to_string());
        }
        if matches!(self.mode, SamplerMode::Sgm | SamplerMode::SgmS) && self.batch_size > self.epoch_target_for(n_points) {
            out.push(format!(
                "sampler.batch_size {} exceeds the epoch target {}",
                self.batch_size,
                self.epoch_target_for(n_points)
            ));
        }
        if self.batch_size > n_points {
            out.push(format!("sampler.batch_size {} exceeds the {n_points} interior points", self.batch_size));
        }
        out
    }
}

/// Read access to the current model, for probing losses and outputs.
pub trait ModelProbe {
    /// Per-point losses at interior points.
    fn point_losses(&self, indices: &[usize]) -> Result<Vec<f64>>;
    /// Row-major model outputs at interior points.
    fn outputs(&self, indices: &[usize]) -> Result<Vec<f64>>;
    fn out_dim(&self) -> usize;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerStats {
    pub refreshes: u64,
    pub loss_evaluations: u64,
    pub last_refresh_evaluations: u64,
    pub rebuilds_started: u64,
    pub rebuilds_swapped: u64,
    pub rebuild_failures: u64,
    pub n_clusters: usize,
}

pub trait BatchSampler {
    /// Indices of the interior batch for iteration `t`.
    fn next_batch(&mut self, t: u64, probe: &dyn ModelProbe) -> Result<Vec<usize>>;
    fn stats(&self) -> SamplerStats;
}

/// Consecutive slices of a shuffled index list, reshuffled on wrap-around.
#[derive(Clone, Debug)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(mut order: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let k = (n - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + k]);
            self.pos += k;
        }
        out
    }
}

/// Shuffled passes over all points.
pub struct UniformSampler {
    batch: usize,
    cursor: Cursor,
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(n_points: usize, batch: usize, seed: u64) -> Result<Self> {
        if n_points == 0 || batch == 0 {
            return Err(Error::InvalidArgument("uniform sampler needs points and a positive batch size".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cursor = Cursor::new((0..n_points).collect(), &mut rng);
        Ok(Self { batch, cursor, rng })
    }
}

impl BatchSampler for UniformSampler {
    fn next_batch(&mut self, _t: u64, _probe: &dyn ModelProbe) -> Result<Vec<usize>> {
        Ok(self.cursor.take(self.batch, &mut self.rng))
    }

    fn stats(&self) -> SamplerStats {
        SamplerStats::default()
    }
}

/// Probe sets and mean losses per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub sets: Vec<Vec<usize>>,
    pub losses: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub evaluations: usize,
}

/// Evaluates `ceil(r * S_i)` distinct uniformly drawn points per cluster, in
/// a single call to `loss_fn`.
pub fn probe_losses(
    clusters: &Clustering,
    loss_fn: &mut dyn FnMut(&[usize]) -> Result<Vec<f64>>,
    r: f64,
    rng: &mut impl Rng,
) -> Result<ProbeResult> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("probe fraction must lie in (0, 1], got {r}")));
    }
    let sets: Vec<Vec<usize>> = clusters
        .members()
        .iter()
        .map(|m| {
            let take = ((r * m.len() as f64).ceil() as usize).clamp(1, m.len());
            m.choose_multiple(rng, take).copied().collect()
        })
        .collect();
    let flat: Vec<usize> = sets.iter().flatten().copied().collect();
    let values = loss_fn(&flat)?;
    if values.len() != flat.len() {
        return Err(Error::DimensionMismatch { expected: flat.len(), got: values.len() });
    }
    if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::NonFinite(format!("loss {} at point {}", values[k], flat[k])));
    }
    let mut losses = Vec::with_capacity(sets.len());
    let mut means = Vec::with_capacity(sets.len());
    let mut off = 0;
    for s in &sets {
        let l = values[off..off + s.len()].to_vec();
        off += s.len();
        means.push(l.iter().sum::<f64>() / l.len() as f64);
        losses.push(l);
    }
    Ok(ProbeResult { sets, losses, means, evaluations: flat.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub probe_loss_mean: f64,
    pub isr_mean: Option<f64>,
    pub combined_score: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub iteration: u64,
}

impl ScoreTable {
    pub fn fractions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.p).collect()
    }
}

/// Min-max normalised scores (summed with the ISR term when given), mapped
/// linearly onto `[p_min, p_max]`.
pub fn score_and_map(probe: &[f64], isr: Option<&[f64]>, p_range: (f64, f64)) -> Result<ScoreTable> {
    if probe.is_empty() {
        return Err(Error::InvalidArgument("score table needs at least one cluster".into()));
    }
    let (lo, hi) = p_range;
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("invalid sampling range [{lo}, {hi}]")));
    }
    if let Some(s) = isr {
        if s.len() != probe.len() {
            return Err(Error::DimensionMismatch { expected: probe.len(), got: s.len() });
        }
    }
    if probe.iter().chain(isr.into_iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cluster score".into()));
    }
    let mut combined = min_max(probe);
    if let Some(s) = isr {
        combined.iter_mut().zip(min_max(s)).for_each(|(c, v)| *c += v);
    }
    let smin = combined.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = combined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rows = combined
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let p = if smax > smin { lo + (hi - lo) * (c - smin) / (smax - smin) } else { 0.5 * (lo + hi) };
            ScoreRow { probe_loss_mean: probe[i], isr_mean: isr.map(|s| s[i]), combined_score: c, p: p.clamp(lo, hi) }
        })
        .collect();
    Ok(ScoreTable { rows, iteration: 0 })
}

/// Per-cluster sample counts: `P_i * S_i` scaled so the total meets
/// `epoch_target` while every count stays within `[1, S_i]`, then rounded
/// by largest remainder (ties to the higher fraction, then the lower id).
pub fn epoch_counts(sizes: &[usize], fractions: &[f64], epoch_target: usize) -> Result<Vec<usize>> {
    let n_c = sizes.len();
    if fractions.len() != n_c {
        return Err(Error::DimensionMismatch { expected: n_c, got: fractions.len() });
    }
    if epoch_target < n_c {
        return Err(Error::InvalidArgument(format!(
            "epoch target {epoch_target} is below the {n_c} clusters that each need one sample"
        )));
    }
    let total: usize = sizes.iter().sum();
    if epoch_target >= total {
        return Ok(sizes.to_vec());
    }
    let raw: Vec<f64> = sizes.iter().zip(fractions).map(|(&s, &p)| p.max(0.0) * s as f64).collect();
    let share = |lambda: f64| -> Vec<f64> {
        raw.iter().zip(sizes).map(|(&r, &s)| (lambda * r).clamp(1.0, s as f64)).collect()
    };
    let target = epoch_target as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while share(hi).iter().sum::<f64>() < target && hi < 1e300 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid).iter().sum::<f64>() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = share(hi);
    let mut counts: Vec<usize> = x.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n_c).filter(|&i| counts[i] < sizes[i]).collect();
    order.sort_by(|&a, &b| {
        let fa = x[a] - x[a].floor();
        let fb = x[b] - x[b].floor();
        fb.total_cmp(&fa).then(fractions[b].total_cmp(&fractions[a])).then(a.cmp(&b))
    });
    for &i in order.iter().take(epoch_target.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub indices: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Draws each cluster's count uniformly without replacement and shuffles.
pub fn assemble_epoch(clusters: &Clustering, table: &ScoreTable, epoch_target: usize, rng: &mut impl Rng) -> Result<Epoch> {
    if table.rows.len() != clusters.n_clusters() {
        return Err(Error::DimensionMismatch { expected: clusters.n_clusters(), got: table.rows.len() });
    }
    let counts = epoch_counts(&clusters.sizes(), &table.fractions(), epoch_target)?;
    let mut indices = Vec::with_capacity(counts.iter().sum());
    for (m, &c) in clusters.members().iter().zip(&counts) {
        indices.extend(m.choose_multiple(rng, c).copied());
    }
    indices.shuffle(rng);
    Ok(Epoch { indices, counts })
}

/// Sampling distribution with every point carrying the loss of its nearest
/// seed; all-zero losses give the uniform distribution.
pub fn mis_distribution(features: &[f64], dim: usize, seeds: &[usize], seed_losses: &[f64]) -> Result<Vec<f64>> {
    if seeds.is_empty() || seeds.len() != seed_losses.len() {
        return Err(Error::InvalidArgument("mis needs one loss per seed and at least one seed".into()));
    }
    let n = features.len() / dim;
    if let Some(k) = seed_losses.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::NonFinite(format!("loss {} at seed point {}", seed_losses[k], seeds[k])));
    }
    let seed_pts: Vec<f64> = seeds.iter().flat_map(|&s| features[s * dim..(s + 1) * dim].iter().copied()).collect();
    let tree = KdTree::new(seed_pts, dim);
    let mass: Vec<f64> = (0..n).map(|i| seed_losses[tree.nearest(&features[i * dim..(i + 1) * dim]).expect("non-empty tree")]).collect();
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        Ok(mass.iter().map(|m| m / total).collect())
    } else {
        Ok(vec![1.0 / n as f64; n])
    }
}

/// Loss-proportional i.i.d. sampling from piecewise-constant estimates.
pub struct MisSampler {
    features: Vec<f64>,
    dim: usize,
    batch: usize,
    n_seeds: usize,
    tau_e: u64,
    rng: ChaCha8Rng,
    dist: Option<WeightedIndex<f64>>,
    seeds: Vec<usize>,
    probabilities: Vec<f64>,
    stats: SamplerStats,
}

impl MisSampler {
    pub fn new(features: Vec<f64>, dim: usize, cfg: &SamplerConfig) -> Result<Self> {
        if features.is_empty() || dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument("mis sampler needs a non-empty feature matrix".into()));
        }
        Ok(Self {
            features,
            dim,
            batch: cfg.batch_size,
            n_seeds: cfg.mis_seeds,
            tau_e: cfg.tau_e,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            dist: None,
            seeds: Vec::new(),
            probabilities: Vec::new(),
            stats: SamplerStats::default(),
        })
    }

    fn n_points(&self) -> usize {
        self.features.len() / self.dim
    }

    /// Seed points of the latest refresh.
    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    /// Sampling distribution of the latest refresh.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

impl BatchSampler for MisSampler {
    fn next_batch(&mut self, t: u64, probe: &dyn ModelProbe) -> Result<Vec<usize>> {
        if t.is_multiple_of(self.tau_e) || self.dist.is_none() {
            let n = self.n_points();
            let seeds = rand::seq::index::sample(&mut self.rng, n, self.n_seeds.min(n)).into_vec();
            let losses = probe.point_losses(&seeds)?;
            let p = mis_distribution(&self.features, self.dim, &seeds, &losses)?;
            self.dist = Some(WeightedIndex::new(&p).map_err(|e| Error::InvalidArgument(format!("mis weights: {e}")))?);
            self.probabilities = p;
            self.stats.refreshes += 1;
            self.stats.loss_evaluations += seeds.len() as u64;
            self.stats.last_refresh_evaluations = seeds.len() as u64;
            self.seeds = seeds;
        }
        let dist = self.dist.as_ref().expect("refreshed above");
        Ok((0..self.batch).map(|_| dist.sample(&mut self.rng)).collect())
    }

    fn stats(&self) -> SamplerStats {
        self.stats.clone()
    }
}

/// Graph and decomposition settings used by the cluster sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    pub k: usize,
    pub weight_scheme: WeightScheme,
    pub krylov: KrylovOptions,
    pub levels: usize,
    /// `None` means `1 / average degree`.
    pub diam_budget: Option<f64>,
    /// Multiplier on standardised outputs when rebuilding the graph.
    pub output_scale: f64,
    pub isr: IsrOptions,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self {
            k: 10,
            weight_scheme: WeightScheme::InverseDistance,
            krylov: KrylovOptions::default(),
            levels: 10,
            diam_budget: None,
            output_scale: 1.0,
            isr: IsrOptions::default(),
        }
    }
}

/// Everything a rebuild needs, owned so it can move to a worker thread.
#[derive(Clone, Debug)]
pub struct RebuildInput {
    pub features: Arc<Vec<f64>>,
    pub dim: usize,
    /// Row-major outputs, or `None` for the input-only graph.
    pub outputs: Option<(Vec<f64>, usize)>,
    pub settings: ClusterSettings,
}

pub type RebuildFn = Arc<dyn Fn(RebuildInput) -> Result<Clustering> + Send + Sync>;

/// kNN graph (optionally with outputs), Krylov resistances and LRD.
pub fn cluster_points(input: RebuildInput) -> Result<Clustering> {
    let s = &input.settings;
    let g = match &input.outputs {
        None => knn_graph(&input.features, input.dim, s.k, s.weight_scheme, WEIGHT_EPS)?,
        Some((out, d)) => rebuild_with_outputs(&input.features, input.dim, out, *d, s.output_scale, s.k, s.weight_scheme)?,
    };
    let budget = s.diam_budget.unwrap_or_else(|| default_budget(&g));
    let lap = Laplacian::new(g);
    let er = er_krylov(&lap, s.krylov.n_vectors, s.krylov.smoothing_steps, s.krylov.seed)?;
    decompose(lap.graph(), &er, s.levels, budget)
}

/// Cluster-scored sampler (`sgm`, or `sgm_s` with ISR scores).
pub struct ClusterSampler {
    cfg: SamplerConfig,
    settings: ClusterSettings,
    with_isr: bool,
    features: Arc<Vec<f64>>,
    dim: usize,
    clustering: Arc<Clustering>,
    epoch: Option<Cursor>,
    table: Option<ScoreTable>,
    pending: Option<JoinHandle<Result<Clustering>>>,
    /// Join a pending rebuild at the next refresh instead of polling it,
    /// which makes runs reproducible.
    blocking_swap: bool,
    rebuild: RebuildFn,
    isr_dump: Option<PathBuf>,
    rng: ChaCha8Rng,
    stats: SamplerStats,
}

impl ClusterSampler {
    /// `features` are the graph features of the interior points (row-major);
    /// they are standardised column-wise before any graph is built.
    pub fn new(mut features: Vec<f64>, dim: usize, cfg: SamplerConfig, settings: ClusterSettings) -> Result<Self> {
        if features.is_empty() || dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument("cluster sampler needs a non-empty feature matrix".into()));
        }
        let n = features.len() / dim;
        let problems = cfg.problems(n);
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        standardize_columns(&mut features, dim);
        let features = Arc::new(features);
        let clustering = cluster_points(RebuildInput { features: features.clone(), dim, outputs: None, settings })?;
        if clustering.n_clusters() > cfg.epoch_target_for(n) {
            warn!(
                "{} clusters exceed the epoch target {}; every cluster still gets one sample",
                clustering.n_clusters(),
                cfg.epoch_target_for(n)
            );
        }
        let stats = SamplerStats { n_clusters: clustering.n_clusters(), ..SamplerStats::default() };
        Ok(Self {
            with_isr: cfg.mode == SamplerMode::SgmS,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            settings,
            features,
            dim,
            clustering: Arc::new(clustering),
            epoch: None,
            table: None,
            pending: None,
            blocking_swap: true,
            rebuild: Arc::new(cluster_points),
            isr_dump: None,
            stats,
        })
    }

    /// Swaps in finished rebuilds only, without waiting for running ones.
    pub fn with_polling_swap(mut self) -> Self {
        self.blocking_swap = false;
        self
    }

    /// Replaces the background rebuild (used for fault injection).
    pub fn with_rebuild_fn(mut self, f: RebuildFn) -> Self {
        self.rebuild = f;
        self
    }

    /// Writes the latest ISR node scores as `node_id,isr_score` on every refresh.
    pub fn with_isr_dump(mut self, path: PathBuf) -> Self {
        self.isr_dump = Some(path);
        self
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn table(&self) -> Option<&ScoreTable> {
        self.table.as_ref()
    }

    pub fn rebuild_pending(&self) -> bool {
        self.pending.is_some()
    }

    fn n_points(&self) -> usize {
        self.features.len() / self.dim
    }

    fn launch_rebuild(&mut self, probe: &dyn ModelProbe) -> Result<()> {
        if self.pending.is_some() {
            warn!("graph rebuild still running; skipping this one");
            return Ok(());
        }
        let all: Vec<usize> = (0..self.n_points()).collect();
        let outputs = probe.outputs(&all)?;
        let input = RebuildInput {
            features: self.features.clone(),
            dim: self.dim,
            outputs: Some((outputs, probe.out_dim())),
            settings: self.settings,
        };
        let f = self.rebuild.clone();
        let handle = std::thread::Builder::new()
            .name("sgm-rebuild".into())
            .spawn(move || f(input))
            .map_err(Error::Io)?;
        self.pending = Some(handle);
        self.stats.rebuilds_started += 1;
        Ok(())
    }

    fn try_swap(&mut self) {
        let ready = match &self.pending {
            Some(h) => self.blocking_swap || h.is_finished(),
            None => false,
        };
        if !ready {
            return;
        }
        let handle = self.pending.take().expect("checked");
        match handle.join() {
            Ok(Ok(c)) => {
                debug!("swapping in {} clusters (was {})", c.n_clusters(), self.clustering.n_clusters());
                self.stats.n_clusters = c.n_clusters();
                self.clustering = Arc::new(c);
                self.stats.rebuilds_swapped += 1;
            }
            Ok(Err(e)) => {
                warn!("background rebuild failed, keeping the previous clustering: {e}");
                self.stats.rebuild_failures += 1;
            }
            Err(_) => {
                warn!("background rebuild panicked, keeping the previous clustering");
                self.stats.rebuild_failures += 1;
            }
        }
    }

    fn refresh(&mut self, t: u64, probe: &dyn ModelProbe) -> Result<()> {
        self.try_swap();
        let clusters = self.clustering.clone();
        let mut loss_fn = |idx: &[usize]| probe.point_losses(idx);
        let pr = probe_losses(&clusters, &mut loss_fn, self.cfg.probe_fraction, &mut self.rng)?;
        let isr = if self.with_isr { self.isr_means(&clusters, &pr) } else { None };
        let mut table = score_and_map(&pr.means, isr.as_deref(), (self.cfg.p_min, self.cfg.p_max))?;
        table.iteration = t;
        let target = self.cfg.epoch_target_for(self.n_points()).max(clusters.n_clusters());
        let epoch = assemble_epoch(&clusters, &table, target, &mut self.rng)?;
        self.epoch = Some(Cursor { order: epoch.indices, pos: 0 });
        self.table = Some(table);
        self.stats.refreshes += 1;
        self.stats.loss_evaluations += pr.evaluations as u64;
        self.stats.last_refresh_evaluations = pr.evaluations as u64;
        Ok(())
    }

    /// Mean ISR node score of each cluster's probe points; `None` when the
    /// scores are unavailable.
    fn isr_means(&self, clusters: &Clustering, pr: &ProbeResult) -> Option<Vec<f64>> {
        let flat: Vec<usize> = pr.sets.iter().flatten().copied().collect();
        let losses: Vec<f64> = pr.losses.iter().flatten().copied().collect();
        let d = self.dim;
        let feats: Vec<f64> = flat.iter().flat_map(|&i| self.features[i * d..(i + 1) * d].iter().copied()).collect();
        let scores = match isr_node_scores_subset(&feats, d, &losses, self.settings.k, self.settings.weight_scheme, &self.settings.isr) {
            Ok(s) => s,
            Err(e) => {
                warn!("ISR scores unavailable this refresh: {e}");
                return None;
            }
        };
        if let Some(path) = &self.isr_dump {
            if let Err(e) = write_isr_dump(path, &flat, &scores.scores) {
                warn!("could not write ISR dump: {e}");
            }
        }
        let mut off = 0;
        let means = (0..clusters.n_clusters())
            .map(|c| {
                let n = pr.sets[c].len();
                let m = scores.scores[off..off + n].iter().sum::<f64>() / n as f64;
                off += n;
                m
            })
            .collect();
        Some(means)
    }
}

fn write_isr_dump(path: &PathBuf, nodes: &[usize], scores: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "node_id,isr_score")?;
    for (n, s) in nodes.iter().zip(scores) {
        writeln!(w, "{n},{s}")?;
    }
    w.flush()?;
    Ok(())
}

impl BatchSampler for ClusterSampler {
    fn next_batch(&mut self, t: u64, probe: &dyn ModelProbe) -> Result<Vec<usize>> {
        if t > 0 && t.is_multiple_of(self.cfg.tau_g) {
            if let Err(e) = self.launch_rebuild(probe) {
                warn!("could not start graph rebuild: {e}");
                self.stats.rebuild_failures += 1;
            }
        }
        if t.is_multiple_of(self.cfg.tau_e) || self.epoch.is_none() {
            self.refresh(t, probe)?;
        }
        let batch = self.cfg.batch_size;
        let cursor = self.epoch.as_mut().expect("refreshed above");
        Ok(cursor.take(batch, &mut self.rng))
    }

    fn stats(&self) -> SamplerStats {
        self.stats.clone()
    }
}

impl Drop for ClusterSampler {
    fn drop(&mut self) {
        if let Some(h) = self.pending.take() {
            let _ = h.join();
        }
    }
}

/// Sampler for `cfg.mode` over interior points with the given graph features.
pub fn build_sampler(features: Vec<f64>, dim: usize, cfg: &SamplerConfig, settings: &ClusterSettings) -> Result<Box<dyn BatchSampler>> {
    let n = features.len() / dim.max(1);
    let problems = cfg.problems(n);
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    Ok(match cfg.mode {
        SamplerMode::Uniform => Box::new(UniformSampler::new(n, cfg.batch_size, cfg.seed)?),
        SamplerMode::Mis => Box::new(MisSampler::new(features, dim, cfg)?),
        SamplerMode::Sgm | SamplerMode::SgmS => Box::new(ClusterSampler::new(features, dim, *cfg, *settings)?),
    })
}
