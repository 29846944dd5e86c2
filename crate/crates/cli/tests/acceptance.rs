//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria whose outcome depends on training noise (9 and 10) are reported
//! but do not fail the target; every other criterion does. Set
//! `ACCEPTANCE_ONLY=1,4,11` to run a subset.

use std::cell::Cell;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgm_cli::pipeline::{cmd_bench, run_dir, run_one};
use sgm_cli::report::MeanCurve;
use sgm_cli::RunConfig;
use sgm_core::graph::{knn_graph, Laplacian, SparseGraph, WeightScheme, WEIGHT_EPS};
use sgm_core::isr::{isr_compute, isr_node_scores_subset, IsrOptions};
use sgm_core::lrd::{decompose, default_budget, verify_diameter, Clustering};
use sgm_core::net::{EncoderSpec, Network};
use sgm_core::pde::{Problem, ProblemKind, Trajectory, PARAM_SLICES};
use sgm_core::pointcloud::{generate, SamplingLaw, Tag};
use sgm_core::resistance::{er_exact, er_krylov};
use sgm_core::sampler::{
    assemble_epoch, score_and_map, BatchSampler, ClusterSampler, ClusterSettings, MisSampler, ModelProbe,
    SamplerConfig, SamplerMode,
};
use sgm_core::stats::{mean, median, spearman};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit_s: f64,
    /// Reported only; does not fail the target.
    advisory: bool,
    run: fn() -> Outcome,
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria = [
        Criterion { id: 1, name: "ER oracle exactness", limit_s: 10.0, advisory: false, run: er_oracle },
        Criterion { id: 2, name: "Krylov ER fidelity", limit_s: 60.0, advisory: false, run: krylov_fidelity },
        Criterion { id: 3, name: "LRD diameter bound", limit_s: 120.0, advisory: false, run: lrd_diameter },
        Criterion { id: 4, name: "LRD near-linear scaling", limit_s: 600.0, advisory: false, run: lrd_scaling },
        Criterion { id: 5, name: "ISR spectral identities", limit_s: 30.0, advisory: false, run: isr_identities },
        Criterion { id: 6, name: "ISR gradient ranking", limit_s: 30.0, advisory: false, run: isr_gradient },
        Criterion { id: 7, name: "Autodiff correctness", limit_s: 60.0, advisory: false, run: autodiff },
        Criterion { id: 8, name: "Sampler contracts", limit_s: 120.0, advisory: false, run: sampler_contracts },
        Criterion { id: 9, name: "End-to-end poisson2d", limit_s: 45.0 * 60.0, advisory: true, run: poisson_bench },
        Criterion { id: 10, name: "Parameterized poisson2d_param", limit_s: 90.0 * 60.0, advisory: true, run: param_bench },
        Criterion { id: 11, name: "Determinism", limit_s: 600.0, advisory: false, run: determinism },
    ];
    let mut hard_failures = Vec::new();
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && secs <= c.limit_s, d),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} {:>2}. {}: {detail} [{secs:.1} s, limit {:.0} s]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.limit_s
        );
        if !ok && !c.advisory {
            hard_failures.push(c.id);
        }
    }
    if !hard_failures.is_empty() {
        eprintln!("failed criteria: {hard_failures:?}");
        std::process::exit(1);
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_tree(rng: &mut ChaCha8Rng) -> SparseGraph {
    let n = rng.random_range(2..=200);
    let edges: Vec<(usize, usize, f64)> =
        (1..n).map(|i| (rng.random_range(0..i), i, rng.random_range(0.1..10.0))).collect();
    SparseGraph::from_edges(n, edges).unwrap()
}

/// Erdős–Rényi graph with average degree in `[5, 20]` and random weights.
fn random_graph(rng: &mut ChaCha8Rng) -> SparseGraph {
    let n: usize = rng.random_range(100..=500);
    let d = rng.random_range(5.0..20.0);
    let p = d / (n - 1) as f64;
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b, rng.random_range(0.1..10.0)));
            }
        }
    }
    SparseGraph::from_edges(n, edges).unwrap()
}

fn er_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_edge, mut worst_foster) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let g = random_tree(&mut rng);
        let er = er_exact(&Laplacian::new(g.clone())).map_err(err)?;
        let mut foster = 0.0;
        for (e, r) in g.edges().iter().zip(&er.values) {
            worst_edge = worst_edge.max((r - 1.0 / e.w).abs());
            foster += e.w * r;
        }
        worst_foster = worst_foster.max((foster - (g.n() - 1) as f64).abs());
    }
    Ok((
        worst_edge <= 1e-9 && worst_foster <= 1e-6,
        format!("50 trees, max |r - 1/w| = {worst_edge:.1e}, max Foster gap = {worst_foster:.1e}"),
    ))
}

fn krylov_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rhos = Vec::new();
    for _ in 0..20 {
        let lap = Laplacian::new(random_graph(&mut rng));
        let exact = er_exact(&lap).map_err(err)?;
        let per_seed: Vec<f64> = (0..5)
            .map(|s| er_krylov(&lap, 16, 10, s).map(|k| spearman(&exact.values, &k.values)))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        rhos.push(mean(&per_seed));
    }
    let worst = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((worst >= 0.9, format!("20 graphs x 5 seeds, mean rho = {:.3}, worst graph = {worst:.3}", mean(&rhos))))
}

fn lrd_diameter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut exact_total, mut exact_bad, mut kry_total, mut kry_ok) = (0usize, 0usize, 0usize, 0usize);
    let mut nontrivial = 0usize;
    for g in 0..20 {
        let graph = random_graph(&mut rng);
        let lap = Laplacian::new(graph.clone());
        let exact = er_exact(&lap).map_err(err)?;
        // Several times the median edge resistance, so that clusters grow.
        let budget = 3.0 * median(&exact.values);
        let check = |c: &Clustering, limit: f64| -> Result<(usize, usize), String> {
            let d = verify_diameter(c, &lap).map_err(err)?;
            Ok((d.len(), d.iter().filter(|&&x| x <= limit * (1.0 + 1e-9)).count()))
        };
        let ce = decompose(&graph, &exact, 10, budget).map_err(err)?;
        nontrivial += ce.sizes().iter().filter(|&&s| s > 1).count();
        let (t, ok) = check(&ce, budget)?;
        exact_total += t;
        exact_bad += t - ok;
        let kr = er_krylov(&lap, 16, 10, g).map_err(err)?;
        let ck = decompose(&graph, &kr, 10, budget).map_err(err)?;
        let (t, ok) = check(&ck, 1.25 * budget)?;
        kry_total += t;
        kry_ok += ok;
    }
    let frac = kry_ok as f64 / kry_total as f64;
    Ok((
        exact_bad == 0 && frac >= 0.95 && nontrivial > 0,
        format!(
            "exact: {exact_bad}/{exact_total} clusters over budget ({nontrivial} non-singleton); krylov: {:.1}% within 1.25x budget",
            100.0 * frac
        ),
    ))
}

fn lrd_scaling() -> Outcome {
    let sizes = [25_000usize, 50_000, 100_000, 200_000];
    let mut times = Vec::new();
    let mut clusters = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        let g = knn_graph(&pts, 2, 10, WeightScheme::InverseDistance, WEIGHT_EPS).map_err(err)?;
        let er = er_krylov(&Laplacian::new(g.clone()), 16, 10, 0).map_err(err)?;
        let budget = default_budget(&g);
        // One untimed call first so that allocator warm-up is not timed.
        let mut nc = decompose(&g, &er, 10, budget).map_err(err)?.n_clusters();
        let mut samples = Vec::new();
        for _ in 0..5 {
            let t = Instant::now();
            let c = decompose(&g, &er, 10, budget).map_err(err)?;
            samples.push(t.elapsed().as_secs_f64());
            nc = c.n_clusters();
        }
        times.push(median(&samples));
        clusters.push(nc);
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let detail = sizes
        .iter()
        .zip(&times)
        .zip(&clusters)
        .map(|((n, t), c)| format!("{}k: {:.0} ms ({c} clusters)", n / 1000, 1e3 * t))
        .collect::<Vec<_>>()
        .join(", ");
    let r = ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("/");
    Ok((worst <= 2.6, format!("{detail}; per-doubling ratios {r}")))
}

fn isr_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let x: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
    let lx = Laplacian::new(knn_graph(&x, 2, 8, WeightScheme::InverseDistance, WEIGHT_EPS).map_err(err)?);
    let (_, id) = isr_compute(&lx, &lx, 3).map_err(err)?;
    let mut ok = (id.isr_max - 1.0).abs() <= 1e-6;
    let mut detail = format!("identity lambda_max = {:.9}", id.isr_max);
    for c in [2.0, 5.0] {
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        let ly = Laplacian::new(knn_graph(&y, 2, 8, WeightScheme::InverseDistance, WEIGHT_EPS).map_err(err)?);
        let (_, s) = isr_compute(&lx, &ly, 3).map_err(err)?;
        ok &= (s.isr_max - c).abs() <= 0.02 * c;
        detail.push_str(&format!(", scale {c}: {:.4}", s.isr_max));
    }
    Ok((ok, detail))
}

fn isr_gradient() -> Outcome {
    type Field = (&'static str, fn(f64, f64) -> f64, fn(f64, f64) -> f64);
    let fields: [Field; 3] = [
        ("tanh front", |x, _| (8.0 * (x - 0.6)).tanh(), |x, _| 8.0 / (8.0 * (x - 0.6)).cosh().powi(2)),
        ("paraboloid", |x, y| x * x + y * y, |x, y| 2.0 * (x * x + y * y).sqrt()),
        ("gaussian bump", |x, y| (-10.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp(), |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            20.0 * r2.sqrt() * (-10.0 * r2).exp()
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 400;
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, f, grad) in fields {
        let vals: Vec<f64> = pts.chunks(2).map(|p| f(p[0], p[1])).collect();
        let gnorm: Vec<f64> = pts.chunks(2).map(|p| grad(p[0], p[1])).collect();
        let s = isr_node_scores_subset(&pts, 2, &vals, 10, WeightScheme::InverseDistance, &IsrOptions::default())
            .map_err(err)?;
        let rho = spearman(&s.scores, &gnorm);
        ok &= rho >= 0.5;
        parts.push(format!("{name} rho = {rho:.3}"));
    }
    Ok((ok, parts.join(", ")))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn autodiff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds = [ProblemKind::Poisson2d, ProblemKind::Poisson2dParam, ProblemKind::LdcLite];
    let (mut e1, mut e2, mut eg) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..100 {
        let kind = kinds[trial % 3];
        let p = Problem::with_defaults(kind);
        let encoder = if rng.random_bool(0.3) {
            EncoderSpec::Fourier { features: rng.random_range(2..8), scale: 1.0 }
        } else {
            EncoderSpec::Identity
        };
        let net = Network::new(
            p.in_dim(),
            rng.random_range(4..=32),
            rng.random_range(1..=4),
            p.out_dim(),
            encoder,
            rng.random(),
        )
        .map_err(err)?;
        let m = p.in_dim();
        let mut x: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.95)).collect();
        if m == 3 {
            x.push(rng.random_range(0.75..1.1));
        }
        let dirs: Vec<usize> = (0..m).collect();
        let jet = net.forward_jet(&x, &dirs).map_err(err)?;
        let at = |shift: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(a, h) in shift {
                y[a] += h;
            }
            net.forward(&y).unwrap()
        };
        let h1 = 1e-5;
        let h2 = 2e-3;
        let c = at(&[]);
        let mut pair = 0;
        for (ia, &a) in dirs.iter().enumerate() {
            let (fp, fm) = (at(&[(a, h1)]), at(&[(a, -h1)]));
            for o in 0..c.len() {
                e1 = e1.max(rel(jet.first[ia][o], (fp[o] - fm[o]) / (2.0 * h1)));
            }
            for &b in &dirs[ia..] {
                // Central second difference with one Richardson step.
                let second = |h: f64| -> Vec<f64> {
                    if a == b {
                        let (p2, m2) = (at(&[(a, h)]), at(&[(a, -h)]));
                        (0..c.len()).map(|o| (p2[o] - 2.0 * c[o] + m2[o]) / (h * h)).collect()
                    } else {
                        let (pp, pm, mp, mm) =
                            (at(&[(a, h), (b, h)]), at(&[(a, h), (b, -h)]), at(&[(a, -h), (b, h)]), at(&[(a, -h), (b, -h)]));
                        (0..c.len()).map(|o| (pp[o] - pm[o] - mp[o] + mm[o]) / (4.0 * h * h)).collect()
                    }
                };
                let (coarse, fine) = (second(2.0 * h2), second(h2));
                let fd: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
                for o in 0..c.len() {
                    e2 = e2.max(rel(jet.second[pair][o], fd[o]));
                }
                pair += 1;
            }
        }

        // Parameter gradient of a small training batch.
        let cloud = generate(&p.kind().default_domain(), 8, 8, rng.random(), SamplingLaw::Uniform).map_err(err)?;
        let cols: Vec<usize> = (0..m).collect();
        let interior = cloud.select(&cloud.interior_indices(), &cols);
        let bidx = cloud.boundary_indices();
        let boundary = cloud.select(&bidx, &cols);
        let tags: Vec<Tag> = bidx.iter().map(|&i| cloud.tags()[i]).collect();
        let loss = p.batch_loss(&net, &interior, &boundary, &tags).map_err(err)?;
        let theta = net.params();
        let dir: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let total = |s: f64| {
            let mut n2 = net.clone();
            n2.set_params(&theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect::<Vec<_>>()).unwrap();
            p.batch_loss(&n2, &interior, &boundary, &tags).unwrap().report.total
        };
        let h = 1e-6;
        let fd = (total(h) - total(-h)) / (2.0 * h);
        let an: f64 = loss.grad.flatten().iter().zip(&dir).map(|(g, d)| g * d).sum();
        eg = eg.max(rel(an, fd));
    }
    Ok((
        e1 <= 1e-6 && e2 <= 1e-4 && eg <= 1e-5,
        format!("100 nets: first {e1:.1e} (<= 1e-6), second {e2:.1e} (<= 1e-4), parameter {eg:.1e} (<= 1e-5)"),
    ))
}

struct CountingProbe {
    points: Vec<f64>,
    calls: Cell<usize>,
}

impl CountingProbe {
    fn loss(&self, i: usize) -> f64 {
        let (x, y) = (self.points[2 * i], self.points[2 * i + 1]);
        (-20.0 * ((x - 0.7).powi(2) + (y - 0.3).powi(2))).exp() + 0.01
    }
}

impl ModelProbe for CountingProbe {
    fn point_losses(&self, indices: &[usize]) -> sgm_core::Result<Vec<f64>> {
        self.calls.set(self.calls.get() + indices.len());
        Ok(indices.iter().map(|&i| self.loss(i)).collect())
    }

    fn outputs(&self, indices: &[usize]) -> sgm_core::Result<Vec<f64>> {
        Ok(indices.iter().map(|&i| self.loss(i)).collect())
    }

    fn out_dim(&self) -> usize {
        1
    }
}

fn sampler_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut parts = Vec::new();

    let mut covered = 0;
    for _ in 0..1000 {
        let n_c = rng.random_range(1..60);
        let sizes: Vec<usize> = (0..n_c).map(|_| rng.random_range(1..80)).collect();
        let scores: Vec<f64> = (0..n_c).map(|_| rng.random::<f64>().powi(4)).collect();
        let table = score_and_map(&scores, None, (0.02, 0.6)).map_err(err)?;
        let mut assignment: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
        assignment.shuffle(&mut rng);
        let clustering = Clustering::from_assignment(assignment).map_err(err)?;
        let target = rng.random_range(n_c..=sizes.iter().sum());
        let e = assemble_epoch(&clustering, &table, target, &mut rng).map_err(err)?;
        let mut seen = vec![0usize; n_c];
        for &i in &e.indices {
            seen[clustering.assignment()[i]] += 1;
        }
        if seen.iter().all(|&s| s >= 1) {
            covered += 1;
        }
    }
    parts.push(format!("coverage {covered}/1000"));

    let mut monotone = true;
    for _ in 0..500 {
        let n = rng.random_range(1..50);
        let loss: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let isr: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        for t in [score_and_map(&loss, None, (0.02, 0.6)), score_and_map(&loss, Some(&isr), (0.02, 0.6))] {
            let t = t.map_err(err)?;
            for a in &t.rows {
                for b in &t.rows {
                    monotone &= !(a.combined_score > b.combined_score && a.p < b.p);
                }
            }
        }
    }
    parts.push(format!("monotone {monotone}"));

    let n = 5000;
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
    let probe = CountingProbe { points: pts.clone(), calls: Cell::new(0) };
    let cfg = SamplerConfig { mode: SamplerMode::Sgm, tau_e: 100, tau_g: 1_000_000, epoch_target: Some(1000), ..SamplerConfig::default() };
    let settings = ClusterSettings { diam_budget: Some(0.5), ..ClusterSettings::default() };
    let mut s = ClusterSampler::new(pts.clone(), 2, cfg, settings).map_err(err)?;
    let c = s.clustering().clone();
    let budget: usize = c.sizes().iter().map(|&s| (0.15 * s as f64).ceil() as usize).sum::<usize>() + c.n_clusters();
    let mut worst = 0;
    for t in 0..1000 {
        let before = probe.calls.get();
        s.next_batch(t, &probe).map_err(err)?;
        worst = worst.max(probe.calls.get() - before);
    }
    let within_budget = worst <= budget && s.stats().refreshes == 10;
    parts.push(format!("max evaluations per refresh {worst} (budget {budget})"));

    let mcfg = SamplerConfig { mode: SamplerMode::Mis, mis_seeds: 10, batch_size: 1000, tau_e: 1000, ..SamplerConfig::default() };
    let mut mis = MisSampler::new(pts.clone(), 2, &mcfg).map_err(err)?;
    let mut counts = vec![0usize; n];
    for t in 0..100 {
        for i in mis.next_batch(t, &probe).map_err(err)? {
            counts[i] += 1;
        }
    }
    let seeds = mis.seeds().to_vec();
    let region: Vec<usize> = (0..n)
        .map(|i| {
            let d = |s: usize| (pts[2 * i] - pts[2 * s]).powi(2) + (pts[2 * i + 1] - pts[2 * s + 1]).powi(2);
            (0..seeds.len()).min_by(|&a, &b| d(seeds[a]).total_cmp(&d(seeds[b]))).unwrap()
        })
        .collect();
    let mass: Vec<f64> = (0..n).map(|i| probe.loss(seeds[region[i]])).collect();
    let total: f64 = mass.iter().sum();
    let mut max_z = 0.0f64;
    let mut dist_ok = true;
    for (i, p) in mis.probabilities().iter().enumerate() {
        dist_ok &= (p - mass[i] / total).abs() < 1e-12;
    }
    for r in 0..seeds.len() {
        let p: f64 = (0..n).filter(|&i| region[i] == r).map(|i| mass[i] / total).sum();
        let got = (0..n).filter(|&i| region[i] == r).map(|i| counts[i]).sum::<usize>() as f64;
        max_z = max_z.max((got - 1e5 * p).abs() / (1e5 * p * (1.0 - p)).sqrt());
    }
    parts.push(format!("MIS max |z| over seed regions {max_z:.2}"));
    Ok((covered == 1000 && monotone && within_budget && dist_ok && max_z <= 3.0, parts.join(", ")))
}

fn bench_config(name: &str, out: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::load(&workspace().join("configs").join(name)).map_err(err)?;
    cfg.run.output_dir = out.to_path_buf();
    Ok(cfg)
}

/// Mean final cluster count of a method's runs, next to the epoch target.
fn cluster_note(cfg: &RunConfig, mode: SamplerMode) -> Result<String, String> {
    let mut counts = Vec::new();
    for &s in &cfg.run.seeds {
        let text = fs::read_to_string(run_dir(&cfg.run.output_dir, mode, s).join("run.json")).map_err(err)?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
        counts.push(v["n_clusters"].as_f64().unwrap_or(f64::NAN));
    }
    let target = cfg.sampler_config(0).epoch_target_for(cfg.cloud.n_interior);
    Ok(format!("{} clusters {:.0} (epoch target {target})", mode.name(), mean(&counts)))
}

fn trajectories(cfg: &RunConfig, mode: SamplerMode) -> Result<Vec<Trajectory>, String> {
    cfg.run
        .seeds
        .iter()
        .map(|&s| Trajectory::load(run_dir(&cfg.run.output_dir, mode, s).join("trajectory.csv")).map_err(err))
        .collect()
}

fn poisson_bench() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = bench_config("poisson2d_bench.json", tmp.path())?;
    cmd_bench(&cfg).map_err(err)?;
    let uni = trajectories(&cfg, SamplerMode::Uniform)?;
    let sgm = trajectories(&cfg, SamplerMode::Sgm)?;
    let cu = MeanCurve::from_runs(&uni.iter().collect::<Vec<_>>()).ok_or("no uniform runs")?;
    let cs = MeanCurve::from_runs(&sgm.iter().collect::<Vec<_>>()).ok_or("no sgm runs")?;
    let budget = cfg.run.steps;
    let reach = cu.first_reaching(0, 2e-2).filter(|(it, _)| *it <= budget);
    let final_u = *cu.errors[0].last().ok_or("empty curve")?;
    let (iu, tu) = cu.first_reaching(0, final_u).ok_or("empty curve")?;
    let hit = cs.first_reaching(0, final_u);
    let detail = format!(
        "uniform reaches 2e-2 at {} (budget {budget}); uniform final error {final_u:.2e} first at iteration {iu}; sgm {}; sgm final error {:.2e}",
        reach.map_or("never".into(), |(it, _)| format!("iteration {it}")),
        hit.map_or("never reaches it".into(), |(it, ts)| format!(
            "at iteration {it} (iteration ratio {:.2}, wall-time speedup {:.2}x)",
            it as f64 / iu.max(1) as f64,
            tu / ts.max(1e-9)
        )),
        cs.errors[0].last().copied().unwrap_or(f64::NAN),
    ) + "; " + &cluster_note(&cfg, SamplerMode::Sgm)?;
    Ok((reach.is_some() && hit.is_some_and(|(it, _)| it <= iu), detail))
}

fn param_bench() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = bench_config("poisson2d_param_bench.json", tmp.path())?;
    cmd_bench(&cfg).map_err(err)?;
    let problem = Problem::new(cfg.run.problem, cfg.domain(), cfg.loss_weights()).map_err(err)?;
    let slice_errors = |mode: SamplerMode| -> Result<Vec<f64>, String> {
        let mut sums = vec![0.0; PARAM_SLICES.len()];
        for &s in &cfg.run.seeds {
            let net = Network::load(run_dir(&cfg.run.output_dir, mode, s).join("checkpoint.txt")).map_err(err)?;
            let e = problem.reference_error_slices(&net, cfg.run.eval_resolution, &PARAM_SLICES).map_err(err)?;
            for (acc, v) in sums.iter_mut().zip(&e) {
                *acc += v[0] / cfg.run.seeds.len() as f64;
            }
        }
        Ok(sums)
    };
    let a = slice_errors(SamplerMode::Sgm)?;
    let b = slice_errors(SamplerMode::SgmS)?;
    let detail = PARAM_SLICES
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(s, (x, y))| format!("a={s}: sgm {x:.2e} vs sgm_s {y:.2e}"))
        .collect::<Vec<_>>()
        .join("; ")
        + "; "
        + &cluster_note(&cfg, SamplerMode::Sgm)?
        + ", "
        + &cluster_note(&cfg, SamplerMode::SgmS)?;
    Ok((a.iter().zip(&b).all(|(x, y)| y <= x), detail))
}

/// Trajectory CSV without the wall-clock column.
fn timeless(path: &Path) -> Result<String, String> {
    let text = fs::read_to_string(path).map_err(err)?;
    Ok(text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(1);
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = bench_config("smoke.json", tmp.path())?;
    cfg.cloud.n_interior = 3000;
    cfg.cloud.n_boundary = 500;
    cfg.run.steps = 600;
    cfg.run.eval_every = 100;
    cfg.sampler.tau_e = 100;
    cfg.sampler.tau_g = 250;
    cfg.sampler.batch_size = 128;
    let mut same = true;
    let mut checked = 0;
    for mode in [SamplerMode::Uniform, SamplerMode::Mis, SamplerMode::Sgm, SamplerMode::SgmS] {
        let a = tmp.path().join("a").join(mode.name());
        let b = tmp.path().join("b").join(mode.name());
        let ra = run_one(&cfg, mode, 7, &a).map_err(err)?;
        run_one(&cfg, mode, 7, &b).map_err(err)?;
        if mode == SamplerMode::Sgm || mode == SamplerMode::SgmS {
            same &= ra.record.rebuilds_swapped >= 1;
        }
        same &= timeless(&a.join("trajectory.csv"))? == timeless(&b.join("trajectory.csv"))?;
        for f in ["checkpoint.txt", "run.json"] {
            same &= fs::read(a.join(f)).map_err(err)? == fs::read(b.join(f)).map_err(err)?;
        }
        if mode == SamplerMode::SgmS {
            same &= fs::read(a.join("isr_scores.csv")).map_err(err)? == fs::read(b.join("isr_scores.csv")).map_err(err)?;
        }
        checked += 1;
    }
    Ok((
        same,
        format!("{checked} samplers run twice with seed 7: trajectories (excluding wall time), checkpoints and run records identical = {same}"),
    ))
}
