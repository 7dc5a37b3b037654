//! Self-check suites behind `verify`. Each prints one line per check and
//! reports whether all of them passed.

use anyhow::Result;
use decadam::compression::{verify_contraction, CompressorSpec};
use decadam::engine::Algorithm;
use decadam::reference::{random_equivalence_config, verify_equivalence};
use decadam::rng::{stream, Purpose};
use decadam::topology::{
    build_topology, check_averaging_contraction, validate, TopologyKind, WeightRule, VALIDATION_TOL,
};

use crate::{emit, Suite};

const EQUIVALENCE_CONFIGS: usize = 20;
const EQUIVALENCE_STEPS: usize = 200;
const EQUIVALENCE_TOL: f64 = 1e-12;
const CONTRACTION_TRIALS: usize = 10_000;
const CONTRACTION_DIM: usize = 32;
const MAX_WORKERS: usize = 32;

fn report(ok: bool, name: &str, detail: &str) -> bool {
    emit(&format!("[{}] {name}: {detail}", if ok { "ok" } else { "FAIL" }));
    ok
}

fn equivalence(seed: u64) -> Result<bool> {
    let mut rng = stream(seed, Purpose::Verification, 0);
    let mut all = true;
    for i in 0..EQUIVALENCE_CONFIGS {
        let algorithm = if i % 2 == 0 { Algorithm::DAdam } else { Algorithm::CdAdam };
        let mut cfg = random_equivalence_config(&mut rng);
        while cfg.algorithm != algorithm {
            cfg = random_equivalence_config(&mut rng);
        }
        cfg.period = [1, 2, 4][i % 3];
        let r = verify_equivalence(&cfg, EQUIVALENCE_STEPS)?;
        let worst = r.max_x_discrepancy.max(r.max_hat_discrepancy).max(r.max_mean_recursion_err);
        all &= report(
            r.passed(EQUIVALENCE_TOL),
            &format!("equivalence #{i}"),
            &format!(
                "{:?} K={} d={} p={} {} steps, max relative discrepancy {worst:.2e}",
                r.algorithm, r.workers, r.dim, r.period, r.steps
            ),
        );
    }
    Ok(all)
}

fn contraction(seed: u64) -> Result<bool> {
    let d = CONTRACTION_DIM;
    let specs = [
        CompressorSpec::IDENTITY,
        CompressorSpec::SCALED_SIGN,
        CompressorSpec::top_k(1),
        CompressorSpec::top_k(d / 4),
        CompressorSpec::random_k(1),
        CompressorSpec::random_k(d / 4),
    ];
    let mut all = true;
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = stream(seed, Purpose::Verification, 1 + i as u64);
        let r = verify_contraction(spec, CONTRACTION_TRIALS, d, &mut rng)?;
        let name = match spec.k {
            Some(k) => format!("contraction {:?}(k={k})", spec.kind),
            None => format!("contraction {:?}", spec.kind),
        };
        all &= report(
            r.passed,
            &name,
            &format!(
                "{} vectors, max ratio {:.5}, mean {:.5}, threshold {:.5}, {} violations",
                r.trials,
                r.max_ratio,
                r.mean_ratio,
                r.threshold,
                r.violations.len()
            ),
        );
    }
    Ok(all)
}

fn mixing() -> bool {
    let mut all = true;
    for kind in [TopologyKind::Ring, TopologyKind::Complete, TopologyKind::Grid2d, TopologyKind::StarRegularized] {
        for rule in [WeightRule::UniformNeighbor, WeightRule::Metropolis] {
            let mut failures = Vec::new();
            let mut built = 0;
            for k in 1..=MAX_WORKERS {
                let t = match build_topology(kind, k, rule) {
                    Ok(t) => t,
                    Err(e) => {
                        failures.push(format!("K={k}: {e}"));
                        continue;
                    }
                };
                built += 1;
                if let Err(e) = validate(t.weights(), VALIDATION_TOL) {
                    failures.push(format!("K={k}: {e}"));
                } else if !check_averaging_contraction(t.weights()).unwrap_or(false) {
                    failures.push(format!("K={k}: averaging deviation exceeds second eigenvalue"));
                }
            }
            let detail = if failures.is_empty() {
                format!("K=1..{MAX_WORKERS}, {built} matrices valid")
            } else {
                failures.join("; ")
            };
            all &= report(failures.is_empty(), &format!("mixing {kind:?}/{rule:?}"), &detail);
        }
    }
    all
}

pub fn run(suite: Suite, seed: u64) -> Result<bool> {
    let mut ok = true;
    if matches!(suite, Suite::Equivalence | Suite::All) {
        ok &= equivalence(seed)?;
    }
    if matches!(suite, Suite::Contraction | Suite::All) {
        ok &= contraction(seed)?;
    }
    if matches!(suite, Suite::Mixing | Suite::All) {
        ok &= mixing();
    }
    Ok(ok)
}
