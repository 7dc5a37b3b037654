//! Acceptance suite. Runs each criterion in sequence, prints one PASS/FAIL
//! line per criterion, and exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use decadam::analysis::{
    check_consensus_bound, nonincreasing_within, per_round_bits, period_sensitivity, run_seeds, speedup_curve,
    BoundKind, SpeedupPoint,
};
use decadam::compression::{verify_contraction, CompressorSpec};
use decadam::engine::{run, Algorithm, RunConfig, Simulation, TopologySpec};
use decadam::problems::{make_heterogeneous, ProblemKind, ProblemSpec};
use decadam::reference::{random_equivalence_config, verify_equivalence};
use decadam::rng::{stream, Purpose};
use decadam::topology::{build_topology, check_averaging_contraction, validate, TopologyKind, WeightRule};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn reduction() -> Outcome {
    let mut mismatches = 0;
    for period in [1, 4] {
        let spec = ProblemSpec { kind: ProblemKind::Quadratic, dim: 8, sigma: 0.5, ..ProblemSpec::default() };
        let mut cfg = RunConfig::new(Algorithm::DAdam, spec);
        cfg.topology = TopologySpec { kind: TopologyKind::Ring, workers: 1, weight_rule: WeightRule::UniformNeighbor };
        cfg.period = period;
        cfg.seed = 7;
        cfg.adam.eta = 0.01;
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        let problem = sim.problem().clone();
        let h = cfg.adam;
        let mut rng = stream(cfg.seed, Purpose::Gradient, 0);
        let (mut x, mut m, mut v) = (vec![0.0; 8], vec![0.0; 8], vec![0.0; 8]);
        for _ in 0..1000 {
            let g = problem.stochastic_gradient(0, &x, &mut rng);
            for j in 0..8 {
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
                x[j] -= h.eta * (m[j] / (v[j].sqrt() + h.tau));
            }
            sim.step().unwrap();
            if sim.workers()[0].x.iter().zip(&x).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
            }
        }
    }
    let mut a = RunConfig::new(Algorithm::DAdam, ProblemSpec::default());
    a.total_iters = 1000;
    a.eval_every = 10;
    let mut b = a.clone();
    b.algorithm = Algorithm::DAdamVanilla;
    let (ta, tb) = (run(a).unwrap(), run(b).unwrap());
    let same = ta.rows == tb.rows && ta.summary == tb.summary;
    outcome(
        mismatches == 0 && same,
        format!("K=1 steps differing from sequential Adam: {mismatches}/2000; vanilla == p=1 traces: {same}"),
    )
}

// ---------------------------------------------------------------- 2

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut rng = stream(2024, Purpose::Verification, 0);
    for i in 0..20 {
        // cover both algorithms and every period evenly
        let algorithm = if i % 2 == 0 { Algorithm::DAdam } else { Algorithm::CdAdam };
        let mut cfg = random_equivalence_config(&mut rng);
        while cfg.algorithm != algorithm {
            cfg = random_equivalence_config(&mut rng);
        }
        cfg.period = [1, 2, 4][i % 3];
        let r = verify_equivalence(&cfg, 200).unwrap();
        let e = r.max_x_discrepancy.max(r.max_hat_discrepancy).max(r.max_mean_recursion_err);
        worst = worst.max(e);
        if !r.passed(1e-12) {
            failures
                .push(format!("config {i} ({:?}, K={}, d={}, p={}): {e:.3e}", r.algorithm, r.workers, r.dim, r.period));
        }
    }
    outcome(
        failures.is_empty(),
        format!("20 configs x 200 steps, worst relative discrepancy {worst:.3e} (tol 1e-12) {}", failures.join("; ")),
    )
}

// ---------------------------------------------------------------- 3

fn contraction() -> Outcome {
    let d = 32;
    let specs = [
        CompressorSpec::IDENTITY,
        CompressorSpec::SCALED_SIGN,
        CompressorSpec::top_k(1),
        CompressorSpec::top_k(8),
        CompressorSpec::random_k(1),
        CompressorSpec::random_k(8),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = stream(3, Purpose::Verification, i as u64);
        let r = verify_contraction(spec, 10_000, d, &mut rng).unwrap();
        ok &= r.passed;
        let k = spec.k.map(|k| format!("({k})")).unwrap_or_default();
        if spec.is_deterministic() {
            parts.push(format!("{:?}{k}: {} violations", spec.kind, r.violations.len()));
        } else {
            parts.push(format!("{:?}{k}: mean {:.5} <= {:.5}", spec.kind, r.mean_ratio, r.threshold));
        }
    }
    outcome(ok, format!("d={d}, 10^4 heavy-tailed vectors; {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 4

fn mixing() -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    for k in 1..=32 {
        for kind in [TopologyKind::Ring, TopologyKind::Complete, TopologyKind::Grid2d, TopologyKind::StarRegularized] {
            for rule in [WeightRule::UniformNeighbor, WeightRule::Metropolis] {
                let Ok(t) = build_topology(kind, k, rule) else { continue };
                checked += 1;
                let w = t.weights();
                if validate(w, 1e-12).is_err() || !check_averaging_contraction(w).unwrap_or(false) {
                    bad.push(format!("{kind:?}/{rule:?}/K={k}"));
                }
            }
        }
    }
    let mut worst_gap_err: f64 = 0.0;
    for k in 3..=32 {
        let t = build_topology(TopologyKind::Ring, k, WeightRule::UniformNeighbor).unwrap();
        let second =
            (1..k).map(|j| ((1.0 + 2.0 * (2.0 * PI * j as f64 / k as f64).cos()) / 3.0).abs()).fold(0.0f64, f64::max);
        worst_gap_err = worst_gap_err.max((t.spectral_gap() - (1.0 - second)).abs());
    }
    outcome(
        bad.is_empty() && worst_gap_err <= 1e-10,
        format!(
            "{checked} generated matrices, {} failing {:?}; ring K=3..32 gap error vs circulant formula {worst_gap_err:.2e}",
            bad.len(),
            bad
        ),
    )
}

// ---------------------------------------------------------------- 5

fn consensus_bounds() -> Outcome {
    let seeds: Vec<u64> = (0..100).collect();
    let mut runs = 0;
    let mut violations = 0;
    let mut tightest = [0.0f64; 2];
    for (i, algorithm) in [Algorithm::DAdam, Algorithm::CdAdam].into_iter().enumerate() {
        for p in [1, 2, 4, 8, 16] {
            let spec = ProblemSpec {
                kind: ProblemKind::Quadratic,
                dim: 10,
                heterogeneity: 1.0,
                sigma: 1.0,
                clip_g: Some(1.0),
                ..ProblemSpec::default()
            };
            let mut cfg = RunConfig::new(algorithm, spec);
            cfg.topology =
                TopologySpec { kind: TopologyKind::Ring, workers: 8, weight_rule: WeightRule::UniformNeighbor };
            cfg.period = p;
            cfg.total_iters = 1000;
            cfg.eval_every = 1000;
            cfg.adam.eta = 0.01;
            cfg.adam.tau = 0.1;
            if algorithm == Algorithm::CdAdam {
                cfg.compressor = Some(CompressorSpec::SCALED_SIGN);
            }
            let which = BoundKind::for_algorithm(algorithm).unwrap();
            for trace in run_seeds(&cfg, &seeds).unwrap() {
                let r = check_consensus_bound(&trace, which).unwrap();
                runs += 1;
                violations += usize::from(!r.satisfied);
                tightest[i] = tightest[i].max(r.empirical_value / r.theoretical_value);
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{runs} runs, {violations} violations; largest observed/bound ratio d_adam {:.3e}, cd_adam {:.3e}",
            tightest[0], tightest[1]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn logistic_spec(d: usize) -> ProblemSpec {
    ProblemSpec {
        kind: ProblemKind::Logistic,
        dim: d,
        heterogeneity: 0.5,
        sigma: 0.5,
        samples_per_worker: 32,
        data_seed: Some(6),
        ..ProblemSpec::default()
    }
}

fn period_insensitivity() -> Outcome {
    let mut cfg = RunConfig::new(Algorithm::DAdam, logistic_spec(10));
    cfg.total_iters = 20_000;
    cfg.eval_every = 20_000;
    cfg.adam.eta = 1e-3;
    let seeds: Vec<u64> = (0..20).collect();
    let pts = period_sensitivity(&cfg, &[1, 2, 4, 8, 16], &seeds).unwrap();
    let base = pts[0].final_loss;
    let mut ok = true;
    let mut parts = Vec::new();
    for p in &pts {
        let rel = (p.final_loss - base).abs() / base.abs();
        ok &= rel <= 0.05 && p.bits_exact;
        parts.push(format!(
            "p={} f={:.7} ({:+.3e}%, bits {})",
            p.p,
            p.final_loss,
            100.0 * (p.final_loss - base) / base,
            p.comm_bits
        ));
    }
    outcome(ok, format!("K=8 ring, T=20000, 20 seeds; {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 7

fn compression_savings() -> Outcome {
    let d = 64;
    let seeds: Vec<u64> = (0..20).collect();
    let mut base = RunConfig::new(Algorithm::DAdam, logistic_spec(d));
    base.period = 16;
    base.total_iters = 20_000;
    base.eval_every = 20_000;
    base.adam.eta = 1e-3;
    let mut cd = base.clone();
    cd.algorithm = Algorithm::CdAdam;
    cd.compressor = Some(CompressorSpec::SCALED_SIGN);
    cd.momentum_numerator = false;
    let mean =
        |ts: &[decadam::engine::RunTrace]| ts.iter().map(|t| t.summary.final_loss).sum::<f64>() / ts.len() as f64;
    let dt = run_seeds(&base, &seeds).unwrap();
    let ct = run_seeds(&cd, &seeds).unwrap();
    let (fd, fc) = (mean(&dt), mean(&ct));
    let (bd, bc) = (dt[0].summary.comm_bits, ct[0].summary.comm_bits);
    let edges = base.topology.build().unwrap().directed_edges();
    let exact = bd == (base.total_iters / 16) as u64 * per_round_bits(&base, edges)
        && bc == (cd.total_iters / 16) as u64 * per_round_bits(&cd, edges);
    let rel = (fc - fd).abs() / fd.abs();
    let ratio = bc as f64 / bd as f64;
    outcome(
        rel <= 0.05 && ratio < 1.0 / 16.0 && exact,
        format!(
            "d={d}, p=16: f d_adam {fd:.5}, cd_adam {fc:.5} ({:+.2}%); bits ratio {ratio:.4} < 0.0625",
            100.0 * (fc - fd) / fd
        ),
    )
}

// ---------------------------------------------------------------- 8

fn speedup() -> Outcome {
    let spec = ProblemSpec {
        kind: ProblemKind::Quadratic,
        dim: 10,
        heterogeneity: 0.0,
        sigma: 1.0,
        data_seed: Some(8),
        ..ProblemSpec::default()
    };
    let seeds: Vec<u64> = (0..24).collect();
    let ks = [1, 2, 4, 8];
    let mut ok = true;
    let mut parts = Vec::new();
    for algorithm in [Algorithm::DAdam, Algorithm::CdAdam] {
        let mut base = RunConfig::new(algorithm, spec.clone());
        base.period = 4;
        let pts: Vec<SpeedupPoint> = speedup_curve(&base, &ks, 2000, &seeds).unwrap();
        let mono = nonincreasing_within(&pts, 2.0);
        ok &= mono && pts.iter().all(|p| p.avg_grad_norm_sq.is_finite() && p.avg_grad_norm_sq >= 0.0);
        let curve: Vec<String> =
            pts.iter().map(|p| format!("K={} {:.4}±{:.4}", p.k, p.avg_grad_norm_sq, p.std_err)).collect();
        parts.push(format!("{algorithm:?} [{}]", curve.join(", ")));
    }
    outcome(ok, format!("24 seeds, T=2000, p=4; {}", parts.join("; ")))
}

// ---------------------------------------------------------------- 9

fn numerical_hygiene() -> Outcome {
    let mut worst_fd: f64 = 0.0;
    let mut worst_lip: f64 = 0.0;
    for (i, kind) in [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::NonconvexToy].into_iter().enumerate()
    {
        let spec = ProblemSpec { kind, dim: 6, heterogeneity: 0.7, ..ProblemSpec::default() };
        let p = make_heterogeneous(&spec, 3, 9).unwrap();
        let mut rng = stream(9, Purpose::Verification, i as u64);
        let h = 1e-5;
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            for k in 0..3 {
                let g = p.full_gradient(k, &x);
                for j in 0..6 {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (p.local_value(k, &xp) - p.local_value(k, &xm)) / (2.0 * h);
                    worst_fd = worst_fd.max((fd - g[j]).abs());
                }
            }
        }
        let l = p.smoothness();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (gx, gy) = (p.gradient(&x), p.gradient(&y));
            let dg = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dx = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            worst_lip = worst_lip.max(dg / (l * dx));
        }
    }
    outcome(
        worst_fd <= 1e-6 && worst_lip <= 1.0,
        format!("max |fd - grad| {worst_fd:.2e} (tol 1e-6); max ||dg||/(L||dx||) {worst_lip:.4} (<= 1)"),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let criteria: [Criterion; 9] = [
        (1, "reduction equivalence", s(1), reduction),
        (2, "oracle equivalence", s(10), oracle_equivalence),
        (3, "contraction certification", s(10), contraction),
        (4, "mixing certification", s(5), mixing),
        (5, "consensus bound satisfaction", s(120), consensus_bounds),
        (6, "period insensitivity", s(300), period_insensitivity),
        (7, "compression savings", s(300), compression_savings),
        (8, "speedup trend", s(600), speedup),
        (9, "numerical hygiene", s(10), numerical_hygiene),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = o.passed && in_time;
        failed += usize::from(!passed);
        println!(
            "[{}] {id}. {name}: {} ({:.2}s of {}s budget{})",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
