//! One function per subcommand, each writing its artifacts into
//! `run.output_dir`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sgm_core::graph::{knn_graph, Edge, standardize_columns, Laplacian, SparseGraph, WEIGHT_EPS};
use sgm_core::lrd::{decompose, default_budget, verify_diameter};
use sgm_core::net::{Network, Optimizer};
use sgm_core::pde::{train, Problem, Trajectory, TrainStatus};
use sgm_core::pointcloud::{generate, PointCloud};
use sgm_core::resistance::{er_exact, estimate, ResistanceMethod};
use sgm_core::sampler::{BatchSampler, ClusterSampler, MisSampler, SamplerMode, SamplerStats, UniformSampler};
use sgm_core::stats::spearman;

use crate::manifest::write_manifest;
use crate::report::{build_report, write_report, BenchReport, MethodRuns};
use crate::{CliError, Result, RunConfig};

pub fn load_cloud(cfg: &RunConfig, seed: u64) -> Result<PointCloud> {
    let cloud = match &cfg.cloud.file {
        Some(path) => PointCloud::load(path)?,
        None => generate(&cfg.domain(), cfg.cloud.n_interior, cfg.cloud.n_boundary, seed, cfg.cloud.law)?,
    };
    let expected = cfg.domain().schema();
    if cloud.schema().names != expected.names {
        return Err(CliError::Config(vec![format!(
            "cloud columns {:?} do not match the problem's inputs {:?}",
            cloud.schema().names,
            expected.names
        )]));
    }
    Ok(cloud)
}

/// Spatial and parameter columns of the interior points, row-major.
pub fn graph_features(cloud: &PointCloud) -> (Vec<f64>, usize) {
    let dims = cloud.schema().spatial_and_param_dims();
    (cloud.select(&cloud.interior_indices(), &dims), dims.len())
}

/// kNN graph of the interior points over standardised features.
pub fn input_graph(cfg: &RunConfig, cloud: &PointCloud) -> Result<SparseGraph> {
    let (mut f, d) = graph_features(cloud);
    standardize_columns(&mut f, d);
    Ok(knn_graph(&f, d, cfg.graph.k, cfg.graph.weight_scheme, WEIGHT_EPS)?)
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.run.seeds.first().copied().unwrap_or(0)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.run.output_dir)?;
    Ok(cfg.run.output_dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out_dir(cfg)?;
    let cloud = load_cloud(cfg, first_seed(cfg))?;
    let path = dir.join("cloud.csv");
    cloud.save(&path)?;
    info!("wrote {} points to {}", cloud.len(), path.display());
    write_manifest(&dir, "gen", cfg)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges: usize,
    pub average_degree: f64,
    pub components: usize,
    pub build_s: f64,
}

pub fn cmd_graph(cfg: &RunConfig) -> Result<GraphSummary> {
    let dir = out_dir(cfg)?;
    let cloud = load_cloud(cfg, first_seed(cfg))?;
    let start = Instant::now();
    let g = input_graph(cfg, &cloud)?;
    let summary = GraphSummary {
        nodes: g.n(),
        edges: g.num_edges(),
        average_degree: g.average_degree(),
        components: g.components().1,
        build_s: start.elapsed().as_secs_f64(),
    };
    g.save(dir.join("graph.edges"))?;
    write_json(&dir.join("graph_summary.json"), &summary)?;
    write_manifest(&dir, "graph", cfg)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub nodes: usize,
    pub clusters: usize,
    pub largest: usize,
    pub diam_budget: f64,
    pub max_diam_est: f64,
    pub levels_used: usize,
    pub resistance_s: f64,
    pub decompose_s: f64,
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterSummary> {
    let dir = out_dir(cfg)?;
    let seed = first_seed(cfg);
    let cloud = load_cloud(cfg, seed)?;
    let lap = Laplacian::new(input_graph(cfg, &cloud)?);
    let start = Instant::now();
    let er = estimate(&lap, cfg.resistance.method, &cfg.krylov(seed))?;
    let resistance_s = start.elapsed().as_secs_f64();
    let budget = cfg.lrd.diam_budget.unwrap_or_else(|| default_budget(lap.graph()));
    let start = Instant::now();
    let c = decompose(lap.graph(), &er, cfg.lrd.levels, budget)?;
    let decompose_s = start.elapsed().as_secs_f64();
    c.save(dir.join("clusters.csv"))?;
    let summary = ClusterSummary {
        nodes: c.n_nodes(),
        clusters: c.n_clusters(),
        largest: c.sizes().into_iter().max().unwrap_or(0),
        diam_budget: budget,
        max_diam_est: c.diam_est().iter().copied().fold(0.0, f64::max),
        levels_used: c.levels_used(),
        resistance_s,
        decompose_s,
    };
    write_json(&dir.join("cluster_summary.json"), &summary)?;
    write_manifest(&dir, "cluster", cfg)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub nodes: usize,
    pub edges: usize,
    pub spearman: f64,
    pub foster_sum_exact: f64,
    /// Largest exact intra-cluster diameter over the budget, for the
    /// exact and estimated decompositions.
    pub max_diameter_ratio_exact: f64,
    pub max_diameter_ratio_estimated: f64,
}

/// Exact versus estimated resistances on the (small) input graph.
pub fn cmd_er_oracle(cfg: &RunConfig) -> Result<OracleSummary> {
    let dir = out_dir(cfg)?;
    let seed = first_seed(cfg);
    let cloud = load_cloud(cfg, seed)?;
    let lap = Laplacian::new(input_graph(cfg, &cloud)?);
    let exact = er_exact(&lap)?;
    let est = estimate(&lap, ResistanceMethod::Krylov, &cfg.krylov(seed))?;
    let g = lap.graph();
    let mut csv = String::from("p,q,w,r_exact,r_krylov\n");
    let mut foster = 0.0;
    for (e, &Edge { p, q, w }) in g.edges().iter().enumerate() {
        csv.push_str(&format!("{p},{q},{w},{},{}\n", exact.values[e], est.values[e]));
        foster += w * exact.values[e];
    }
    fs::write(dir.join("er_oracle.csv"), csv)?;
    let budget = cfg.lrd.diam_budget.unwrap_or_else(|| default_budget(g));
    let worst = |er| -> Result<f64> {
        let c = decompose(g, er, cfg.lrd.levels, budget)?;
        Ok(verify_diameter(&c, &lap)?.into_iter().fold(0.0, f64::max) / budget)
    };
    let summary = OracleSummary {
        nodes: g.n(),
        edges: g.num_edges(),
        spearman: spearman(&exact.values, &est.values),
        foster_sum_exact: foster,
        max_diameter_ratio_exact: worst(&exact)?,
        max_diameter_ratio_estimated: worst(&est)?,
    };
    write_json(&dir.join("er_oracle_summary.json"), &summary)?;
    write_manifest(&dir, "er-oracle", cfg)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: SamplerMode,
    pub seed: u64,
    pub diverged: bool,
    pub diverged_at: Option<u64>,
    pub steps_done: u64,
    pub sampler_refreshes: u64,
    pub loss_evaluations: u64,
    pub rebuilds_swapped: u64,
    pub rebuild_failures: u64,
    pub n_clusters: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub trajectory: Trajectory,
    pub dir: PathBuf,
}

pub fn run_dir(root: &Path, mode: SamplerMode, seed: u64) -> PathBuf {
    root.join(mode.name()).join(format!("seed-{seed}"))
}

pub fn make_sampler(cfg: &RunConfig, mode: SamplerMode, seed: u64, cloud: &PointCloud, dir: &Path) -> Result<Box<dyn BatchSampler>> {
    let (features, d) = graph_features(cloud);
    let scfg = sgm_core::sampler::SamplerConfig { mode, ..cfg.sampler_config(seed) };
    let problems = scfg.problems(features.len() / d);
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    Ok(match mode {
        SamplerMode::Uniform => Box::new(UniformSampler::new(features.len() / d, scfg.batch_size, scfg.seed)?),
        SamplerMode::Mis => Box::new(MisSampler::new(features, d, &scfg)?),
        SamplerMode::Sgm | SamplerMode::SgmS => {
            let mut s = ClusterSampler::new(features, d, scfg, cfg.cluster_settings(seed))?;
            if !cfg.graph.join_rebuilds {
                s = s.with_polling_swap();
            }
            if mode == SamplerMode::SgmS {
                s = s.with_isr_dump(dir.join("isr_scores.csv"));
            }
            Box::new(s)
        }
    })
}

/// Trains one network with `mode` and `seed`, writing the trajectory,
/// final checkpoint and run record into `dir`.
pub fn run_one(cfg: &RunConfig, mode: SamplerMode, seed: u64, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let problem = Problem::new(cfg.run.problem, cfg.domain(), cfg.loss_weights())?;
    let cloud = load_cloud(cfg, seed)?;
    let kind = cfg.run.problem;
    let mut net =
        Network::new(problem.in_dim(), cfg.network.width, cfg.network.depth, kind.out_dim(), cfg.network.encoder, seed)?;
    let mut opt = Optimizer::new(cfg.optimizer.kind, cfg.schedule())?;
    let mut sampler = make_sampler(cfg, mode, seed, &cloud, dir)?;
    info!("training {} with {} sampling, seed {seed}", kind.name(), mode.name());
    let outcome = train(&problem, &mut net, &mut opt, &cloud, sampler.as_mut(), &cfg.train_options(seed))?;
    outcome.trajectory.save(dir.join("trajectory.csv"))?;
    net.save(dir.join("checkpoint.txt"))?;
    let stats: SamplerStats = sampler.stats();
    let (diverged, diverged_at) = match outcome.status {
        TrainStatus::Completed => (false, None),
        TrainStatus::Diverged { iteration, .. } => (true, Some(iteration)),
    };
    let record = RunRecord {
        mode,
        seed,
        diverged,
        diverged_at,
        steps_done: outcome.steps_done,
        sampler_refreshes: stats.refreshes,
        loss_evaluations: stats.loss_evaluations,
        rebuilds_swapped: stats.rebuilds_swapped,
        rebuild_failures: stats.rebuild_failures,
        n_clusters: stats.n_clusters,
    };
    write_json(&dir.join("run.json"), &record)?;
    if diverged {
        warn!("{} seed {seed} diverged at iteration {:?}", mode.name(), diverged_at);
    }
    Ok(RunOutcome { record, trajectory: outcome.trajectory, dir: dir.to_path_buf() })
}

/// Trains `sampler.mode` for every seed.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    let dir = out_dir(cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.run.seeds {
        runs.push(run_one(cfg, cfg.sampler.mode, seed, &run_dir(&dir, cfg.sampler.mode, seed))?);
    }
    write_manifest(&dir, "train", cfg)?;
    let failed: Vec<String> =
        runs.iter().filter(|r| r.record.diverged).map(|r| format!("seed {}", r.record.seed)).collect();
    if !failed.is_empty() {
        return Err(CliError::Diverged(failed.join(", ")));
    }
    Ok(runs)
}

/// Every method in `run.methods` for every seed, then the comparison report.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    if cfg.run.methods.len() < 2 {
        return Err(CliError::Config(vec!["bench needs at least two methods in run.methods".into()]));
    }
    let dir = out_dir(cfg)?;
    let mut methods = Vec::new();
    for &mode in &cfg.run.methods {
        let mut runs = Vec::new();
        for &seed in &cfg.run.seeds {
            let out = run_one(cfg, mode, seed, &run_dir(&dir, mode, seed))?;
            runs.push((out.trajectory, out.record.diverged));
        }
        methods.push(MethodRuns { name: mode.name().to_string(), runs });
    }
    let report = build_report(&methods)?;
    write_report(&dir, &report, &methods)?;
    write_manifest(&dir, "bench", cfg)?;
    Ok(report)
}
