use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgm_core::cavity::{solve_cavity, CavityOptions};
use sgm_core::net::{EncoderSpec, LrSchedule, Network, Optimizer, OptimizerKind};
use sgm_core::pde::{train, LossWeights, CAVITY_REYNOLDS, Problem, ProblemKind, TrainOptions, TrainStatus};
use sgm_core::pointcloud::{generate, PointCloud, SamplingLaw, Tag};
use sgm_core::sampler::{build_sampler, ClusterSettings, SamplerConfig, SamplerMode};

/// Residual by central differences of the plain forward pass.
fn fd_residual(p: &Problem, net: &Network, x: &[f64]) -> Vec<f64> {
    let h = 1e-3;
    let f = |dx: f64, dy: f64| {
        let mut y = x.to_vec();
        y[0] += dx;
        y[1] += dy;
        net.forward(&y).unwrap()
    };
    let c = f(0.0, 0.0);
    let (xp, xm, yp, ym) = (f(h, 0.0), f(-h, 0.0), f(0.0, h), f(0.0, -h));
    let d1 = |a: &[f64], b: &[f64], o: usize| (a[o] - b[o]) / (2.0 * h);
    let d2 = |a: &[f64], b: &[f64], o: usize| (a[o] - 2.0 * c[o] + b[o]) / (h * h);
    match p.kind() {
        ProblemKind::LdcLite => {
            let nu = 1.0 / CAVITY_REYNOLDS;
            let (u, v) = (c[0], c[1]);
            vec![
                u * d1(&xp, &xm, 0) + v * d1(&yp, &ym, 0) + d1(&xp, &xm, 2) - nu * (d2(&xp, &xm, 0) + d2(&yp, &ym, 0)),
                u * d1(&xp, &xm, 1) + v * d1(&yp, &ym, 1) + d1(&yp, &ym, 2) - nu * (d2(&xp, &xm, 1) + d2(&yp, &ym, 1)),
                d1(&xp, &xm, 0) + d1(&yp, &ym, 1),
            ]
        }
        _ => vec![d2(&xp, &xm, 0) + d2(&yp, &ym, 0) - p.forcing(x)],
    }
}

#[test]
fn residuals_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in [ProblemKind::Poisson2d, ProblemKind::Poisson2dParam, ProblemKind::LdcLite] {
        let p = Problem::with_defaults(kind);
        let net = Network::new(p.in_dim(), 16, 3, p.out_dim(), EncoderSpec::Identity, 4).unwrap();
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.95)).collect();
            if kind == ProblemKind::Poisson2dParam {
                x.push(rng.random_range(0.75..1.1));
            }
            let jet = p.residual(&net, &x).unwrap();
            let fd = fd_residual(&p, &net, &x);
            for (a, b) in jet.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{kind:?} at {x:?}: {a} vs {b}");
            }
        }
    }
}

fn batch(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<Tag>) {
    let c = generate(&sgm_core::pointcloud::DomainSpec::UnitSquare, n, n, seed, SamplingLaw::Uniform).unwrap();
    let ii = c.interior_indices();
    let bi = c.boundary_indices();
    let tags = bi.iter().map(|&i| c.tags()[i]).collect();
    (c.select(&ii, &[0, 1]), c.select(&bi, &[0, 1]), tags)
}

#[test]
fn batch_loss_bookkeeping() {
    let (interior, boundary, tags) = batch(40, 2);
    let net = Network::new(2, 12, 2, 1, EncoderSpec::Identity, 1).unwrap();
    let base = Problem::with_defaults(ProblemKind::Poisson2d);
    let doubled = Problem::new(
        ProblemKind::Poisson2d,
        *base.domain(),
        LossWeights { interior: 2.0 * base.weights().interior, boundary: base.weights().boundary },
    )
    .unwrap();
    let a = base.batch_loss(&net, &interior, &boundary, &tags).unwrap();
    let b = doubled.batch_loss(&net, &interior, &boundary, &tags).unwrap();
    assert!((b.report.loss_interior() - 2.0 * a.report.loss_interior()).abs() < 1e-12 * a.report.total);
    assert_eq!(a.report.loss_boundary(), b.report.loss_boundary());

    let mean = a.point_losses.iter().sum::<f64>() / a.point_losses.len() as f64;
    assert!((mean - a.report.loss_interior()).abs() < 1e-12 * mean);
    let direct = base.point_losses(&net, &interior).unwrap();
    for (x, y) in direct.iter().zip(&a.point_losses) {
        assert!((x - y).abs() < 1e-12 * (1.0 + x));
    }

    // Boundary term recomputed by hand.
    let mut want = 0.0;
    for x in boundary.chunks_exact(2) {
        let r = net.forward(x).unwrap()[0] - base.exact(x).unwrap();
        want += base.weights().boundary * r * r;
    }
    want /= tags.len() as f64;
    assert!((a.report.loss_boundary() - want).abs() < 1e-10 * want.max(1.0));
}

#[test]
fn loss_gradient_matches_differences() {
    let (interior, boundary, tags) = batch(16, 3);
    for kind in [ProblemKind::Poisson2d, ProblemKind::LdcLite] {
        let p = Problem::with_defaults(kind);
        let net = Network::new(2, 8, 2, p.out_dim(), EncoderSpec::Identity, 5).unwrap();
        let l = p.batch_loss(&net, &interior, &boundary, &tags).unwrap();
        let g = l.grad.flatten();
        let theta = net.params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-6;
        let at = |s: f64| {
            let mut n = net.clone();
            n.set_params(&theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect::<Vec<_>>()).unwrap();
            p.batch_loss(&n, &interior, &boundary, &tags).unwrap().report.total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "{kind:?}: {fd} vs {an}");
    }
}

#[test]
fn param_errors_specialise_per_slice() {
    let p = Problem::with_defaults(ProblemKind::Poisson2dParam);
    let mut net = Network::new(3, 8, 2, 1, EncoderSpec::Identity, 0).unwrap();
    net.set_params(&vec![0.0; net.n_params()]).unwrap();
    let slices = p.reference_error_slices(&net, 33, &[0.75, 1.0, 1.1]).unwrap();
    for s in &slices {
        assert!((s[0] - 1.0).abs() < 1e-12);
    }
    assert!((p.reference_error(&net, 33).unwrap()[0] - 1.0).abs() < 1e-12);
}

fn cloud() -> PointCloud {
    generate(&sgm_core::pointcloud::DomainSpec::UnitSquare, 1500, 200, 21, SamplingLaw::Uniform).unwrap()
}

fn run(mode: SamplerMode, steps: u64, seed: u64) -> (Network, sgm_core::pde::TrainOutcome) {
    let c = cloud();
    let p = Problem::with_defaults(ProblemKind::Poisson2d);
    let mut net = Network::new(2, 16, 2, 1, EncoderSpec::Identity, seed).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, LrSchedule { lr: 5e-3, gamma: 1.0, every: 0 }).unwrap();
    let features = c.select(&c.interior_indices(), &[0, 1]);
    let cfg = SamplerConfig {
        mode,
        batch_size: 64,
        tau_e: 50,
        tau_g: 150,
        epoch_target: Some(400),
        mis_seeds: 100,
        seed,
        ..SamplerConfig::default()
    };
    let settings = ClusterSettings { diam_budget: Some(0.5), levels: 6, ..ClusterSettings::default() };
    let mut sampler = build_sampler(features, 2, &cfg, &settings).unwrap();
    let opts = TrainOptions { steps, eval_every: 100, eval_resolution: 33, boundary_batch: 32, seed };
    let out = train(&p, &mut net, &mut opt, &c, sampler.as_mut(), &opts).unwrap();
    (net, out)
}

#[test]
fn every_sampler_reduces_the_error() {
    for mode in [SamplerMode::Uniform, SamplerMode::Mis, SamplerMode::Sgm, SamplerMode::SgmS] {
        let (_, out) = run(mode, 400, 1);
        assert_eq!(out.status, TrainStatus::Completed);
        assert_eq!(out.steps_done, 400);
        let rows = &out.trajectory.rows;
        assert_eq!(rows.first().unwrap().iteration, 0);
        assert_eq!(rows.last().unwrap().iteration, 400);
        let (first, last) = (rows[0].errors[0], rows.last().unwrap().errors[0]);
        assert!(last < 0.5 * first, "{mode:?}: {first} -> {last}");
        assert!(rows.windows(2).all(|w| w[0].wall_time_s <= w[1].wall_time_s));
    }
}

#[test]
fn zero_steps_leave_the_network_untouched() {
    let (net, out) = run(SamplerMode::Sgm, 0, 2);
    let fresh = Network::new(2, 16, 2, 1, EncoderSpec::Identity, 2).unwrap();
    assert_eq!(net, fresh);
    assert_eq!(out.steps_done, 0);
    assert_eq!(out.trajectory.rows.len(), 1);
}

#[test]
fn training_is_reproducible() {
    let (a, ta) = run(SamplerMode::Sgm, 200, 3);
    let (b, tb) = run(SamplerMode::Sgm, 200, 3);
    assert_eq!(a, b);
    let strip = |t: &sgm_core::pde::Trajectory| t.rows.iter().map(|r| (r.iteration, r.loss_total, r.errors.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&ta.trajectory), strip(&tb.trajectory));
}

#[test]
fn cavity_converges_under_refinement() {
    let coarse = solve_cavity(&CavityOptions { n: 65, ..CavityOptions::default() }).unwrap();
    let fine = solve_cavity(&CavityOptions::default()).unwrap();
    // Compare velocities on the coarse nodes away from the lid corners.
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for j in 0..65 {
        for i in 0..65 {
            let (x, y) = (i as f64 / 64.0, j as f64 / 64.0);
            if y > 0.9 && !(0.1..=0.9).contains(&x) {
                continue;
            }
            let c = coarse.sample(x, y);
            let f = fine.sample(x, y);
            for o in 0..2 {
                num[o] += (c[o] - f[o]).powi(2);
                den[o] += f[o].powi(2);
            }
        }
    }
    for o in 0..2 {
        let rel = (num[o] / den[o]).sqrt();
        assert!(rel <= 0.01, "output {o}: relative change {rel}");
    }
}
