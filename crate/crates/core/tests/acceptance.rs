//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured margins, then the test fails if any criterion failed.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::{Duration, Instant};

use rand::Rng;

use ssa_core::attention::{selective_attention, vanilla_attention, AttentionLayer, Stream, TemperatureSpec};
use ssa_core::checks::{gradient_suite, sparsity_rows, GradientSuiteConfig};
use ssa_core::rng::stream;
use ssa_core::tasks::{make_imbalanced_instance, PatternSpec};
use ssa_core::theory::{
    construct_optimal_W, flat_temperature_floor, imbalanced_risk, optimal_temperatures, TwoTokenProblem,
    FLAT_RISK_FLOOR,
};
use ssa_core::training::denoise::{train_denoising, DenoiseConfig};
use ssa_core::training::graph::{graph_experiment, run_parallel, strictly_increasing, GraphConfig, GraphRun};
use ssa_core::training::imbalanced::{fit, ImbalancedConfig};
use ssa_core::Matrix;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_TRIALS: usize = 50;
const EQUIV_TOL: f64 = 1e-12;
const ANALYTIC_RISK_TOL: f64 = 1e-10;
const SPARSITY_TOL: f64 = 1e-10;
const SPARSITY_ROWS: usize = 20;
const ERR_MAP_RATIO: f64 = 0.75;
const GRAPH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const DENOISE_SEEDS: u64 = 10;
const SELECTIVE_RISK_MAX: f64 = 0.2;
const BAYES_RISK_MAX: f64 = 0.02;
const FLAT_SEEDS: u64 = 10;
const TRIPLES: usize = 20;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, ok: bool, elapsed: Duration, budget: Duration, detail: String) -> Verdict {
    let in_time = elapsed <= budget;
    let pass = ok && in_time;
    let line = format!(
        "criterion {id} [{name}]: {} ({:.1}s of {:.0}s{}) {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64(),
        if in_time { "" } else { ", over budget" }
    );
    println!("{line}");
    Verdict { id, name, pass, detail }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let cfg = GradientSuiteConfig {
        trials: GRAD_TRIALS,
        rel_tolerance: GRAD_REL_TOL,
        ..Default::default()
    };
    let report = gradient_suite(&cfg, 0).expect("gradient suite runs");
    let worst = |prefix: &str| {
        report
            .metrics
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|case| (case.to_string(), *v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("suite reports errors")
    };
    let judged = worst("max_rel_error_above_floor.");
    let raw = worst("max_rel_error.");
    let failed = report.failed_checks();
    let ok = failed.is_empty() && report.checks.len() >= 25 && judged.1 < GRAD_REL_TOL;
    verdict(
        1,
        "gradients",
        ok,
        t.elapsed(),
        secs(10),
        format!(
            "{} cases x {GRAD_TRIALS} trials, worst rel err {:.2e} ({}) over entries with abs err > {:e}, {:.2e} ({}) including those; tol {GRAD_REL_TOL:e}, failed: {failed:?}",
            report.checks.len(),
            judged.1,
            judged.0,
            cfg.abs_tolerance,
            raw.1,
            raw.0
        ),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = stream(0, "acceptance/equivalence");
    let mut worst_identity: f64 = 0.0;
    let mut worst_constant: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(2..=6);
        let l = rng.random_range(1..=12);
        let x = Matrix::random_normal(l, d, 1.0, &mut rng);
        let layer = AttentionLayer::random(d, 0.8, &mut rng);
        let explicit = layer
            .clone()
            .with_temperature(Stream::Q, TemperatureSpec::Identity)
            .and_then(|l| l.with_temperature(Stream::K, TemperatureSpec::Identity))
            .and_then(|l| l.with_temperature(Stream::V, TemperatureSpec::Identity))
            .unwrap();
        let a = selective_attention(&x, &explicit, None).unwrap();
        let b = vanilla_attention(&x, &layer).unwrap();
        worst_identity = worst_identity.max(a.max_abs_diff(&b));

        let c = rng.random_range(-3.0..3.0);
        let scaled_q = layer.clone().with_temperature(Stream::Q, TemperatureSpec::constant(c)).unwrap();
        let mut folded = layer.clone();
        folded.w_q = layer.w_q.scale(c);
        let a = selective_attention(&x, &scaled_q, None).unwrap();
        let b = vanilla_attention(&x, &folded).unwrap();
        worst_constant = worst_constant.max(a.max_abs_diff(&b));
    }
    let ok = worst_identity <= EQUIV_TOL && worst_constant <= EQUIV_TOL;
    verdict(
        2,
        "equivalence",
        ok,
        t.elapsed(),
        secs(5),
        format!("50 trials, identity max diff {worst_identity:.1e}, constant-q max diff {worst_constant:.1e}, tol {EQUIV_TOL:e}"),
    )
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for l in [16, 64, 256] {
        let inst = make_imbalanced_instance(l, &PatternSpec::Conforming, 0.5, 4, 0).unwrap();
        let conforming = inst.check_conforming().is_ok();
        let w = construct_optimal_W(&inst.a, &inst.b).unwrap();
        let taus = optimal_temperatures(&inst).unwrap();
        // τ★ recomputed by hand from the prefix counts.
        let mut n_a = 0usize;
        let mut tau_mismatch: f64 = 0.0;
        for n in 1..=l {
            if inst.assignment[n - 1] == ssa_core::theory::Token::A {
                n_a += 1;
            }
            if n >= inst.n0 {
                let kappa = (n - n_a) as f64 / n_a as f64;
                let expected = kappa.ln() + (0.5f64 / 0.5).ln();
                tau_mismatch = tau_mismatch.max((expected - taus[n - 1]).abs());
            }
        }
        let risk = imbalanced_risk(&w, &inst, &taus).unwrap();
        ok &= conforming && risk <= ANALYTIC_RISK_TOL && tau_mismatch <= 1e-12;
        parts.push(format!("L={l}: risk {risk:.1e}, conforming {conforming}, tau mismatch {tau_mismatch:.0e}"));
    }
    verdict(
        3,
        "analytic imbalanced risk",
        ok,
        t.elapsed(),
        secs(5),
        format!("{}; tol {ANALYTIC_RISK_TOL:e}", parts.join("; ")),
    )
}

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let cfg = ImbalancedConfig::default();
    let mut floors = Vec::new();
    for l in [16, 64, 256] {
        let inst = make_imbalanced_instance(l, &PatternSpec::Conforming, 0.5, cfg.dim, 0).unwrap();
        floors.push((l, flat_temperature_floor(&inst).unwrap()));
    }
    let mut lowest = f64::INFINITY;
    for seed in 0..FLAT_SEEDS {
        let inst = make_imbalanced_instance(cfg.seq_len, &cfg.pattern, cfg.alpha_target, cfg.dim, seed).unwrap();
        let run = fit(&inst, &cfg, false, seed).unwrap();
        lowest = lowest.min(run.min_risk);
    }
    let ok = floors.iter().all(|(_, f)| *f >= FLAT_RISK_FLOOR) && lowest >= FLAT_RISK_FLOOR;
    let floors: Vec<String> = floors.iter().map(|(l, f)| format!("L={l} {f:.4}")).collect();
    verdict(
        4,
        "flat-temperature floor",
        ok,
        t.elapsed(),
        secs(120),
        format!(
            "floors {}; lowest flat training risk over {FLAT_SEEDS} seeds (L={}) {lowest:.5}; bound {FLAT_RISK_FLOOR}",
            floors.join(", "),
            cfg.seq_len
        ),
    )
}

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let rows = sparsity_rows(SPARSITY_ROWS, 0).unwrap();
    let closed = rows.iter().map(|r| r.diff).fold(0.0, f64::max);
    let brute = rows.iter().map(|r| r.vector_diff).fold(0.0, f64::max);
    let ok = rows.len() == SPARSITY_ROWS && closed <= SPARSITY_TOL && brute <= SPARSITY_TOL;
    verdict(
        5,
        "temperature vs truncation",
        ok,
        t.elapsed(),
        secs(5),
        format!("{} parameterizations, closed-form max diff {closed:.1e}, brute-force max diff {brute:.1e}, tol {SPARSITY_TOL:e}", rows.len()),
    )
}

struct GraphSeed {
    seed: u64,
    vanilla: GraphRun,
    ssa: GraphRun,
}

fn graph_runs() -> (Vec<GraphSeed>, Duration) {
    let t = Instant::now();
    let cfg = GraphConfig::default();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = run_parallel(&GRAPH_SEEDS, threads, |&seed| {
        let (_, vanilla, ssa) = graph_experiment(&cfg, seed)?;
        Ok(GraphSeed { seed, vanilla, ssa })
    })
    .unwrap();
    (runs, t.elapsed())
}

fn criterion_6(runs: &[GraphSeed], elapsed: Duration) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let ce = (r.ssa.get("ce").unwrap(), r.vanilla.get("ce").unwrap());
        let em = (r.ssa.get("err_map").unwrap(), r.vanilla.get("err_map").unwrap());
        let temps = &r.ssa.arrays["group_temperature"];
        let monotone = strictly_increasing(temps);
        let ce_ok = ce.0 < ce.1;
        let em_ok = em.0 <= ERR_MAP_RATIO * em.1;
        ok &= ce_ok && em_ok && monotone;
        parts.push(format!(
            "seed {}: ce {:.4}/{:.4}{} err_map {:.3}/{:.3} (ratio {:.2}){} temps monotone {monotone}",
            r.seed,
            ce.0,
            ce.1,
            if ce_ok { "" } else { " X" },
            em.0,
            em.1,
            em.0 / em.1,
            if em_ok { "" } else { " X" },
        ));
    }
    verdict(
        6,
        "graph ssa vs vanilla",
        ok,
        elapsed,
        secs(180),
        format!("(ssa/vanilla, err_map ratio must be <= {ERR_MAP_RATIO}) {}", parts.join("; ")),
    )
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let cfg = DenoiseConfig::default();
    let seeds: Vec<u64> = (0..DENOISE_SEEDS).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reports = run_parallel(&seeds, threads, |&s| train_denoising(&cfg, s)).unwrap();
    let mut ok = cfg.k == 8 && (cfg.alpha_frac - 0.25).abs() < 1e-15 && (cfg.sigma - 0.3).abs() < 1e-15;
    let mut worst_vs: f64 = 0.0;
    let mut worst_bayes: f64 = 0.0;
    let mut bad = Vec::new();
    for (seed, r) in seeds.iter().zip(&reports) {
        let m = |k: &str| r.metrics[k];
        let (bayes, vs, van, naive) = (m("risk.bayes"), m("risk.value_selective"), m("risk.vanilla"), m("risk.naive"));
        let order = bayes <= vs && vs < van && bayes < naive;
        if !order {
            bad.push(format!("seed {seed}: bayes {bayes:.4} vs {vs:.4} vanilla {van:.4} naive {naive:.4}"));
        }
        ok &= order && vs < SELECTIVE_RISK_MAX && bayes < BAYES_RISK_MAX;
        worst_vs = worst_vs.max(vs);
        worst_bayes = worst_bayes.max(bayes);
    }
    let mean = |k: &str| reports.iter().map(|r| r.metrics[k]).sum::<f64>() / reports.len() as f64;
    verdict(
        7,
        "denoising",
        ok,
        t.elapsed(),
        secs(120),
        format!(
            "{DENOISE_SEEDS} seeds, mean risks bayes {:.4} value-selective {:.4} vanilla {:.4} naive {:.4}; worst value-selective {worst_vs:.4} (< {SELECTIVE_RISK_MAX}), worst bayes {worst_bayes:.4} (< {BAYES_RISK_MAX}); ordering violations: {bad:?}",
            mean("risk.bayes"),
            mean("risk.value_selective"),
            mean("risk.vanilla"),
            mean("risk.naive")
        ),
    )
}

fn criterion_8(runs: &[GraphSeed]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let norm = (r.ssa.get("w_norm").unwrap(), r.vanilla.get("w_norm").unwrap());
        let spike = (r.ssa.get("spikiness").unwrap(), r.vanilla.get("spikiness").unwrap());
        let (n_ok, s_ok) = (norm.0 < norm.1, spike.0 < spike.1);
        ok &= n_ok && s_ok;
        parts.push(format!(
            "seed {}: norm {:.2}/{:.2}{} spikiness {:.4}/{:.4}{}",
            r.seed,
            norm.0,
            norm.1,
            if n_ok { "" } else { " X" },
            spike.0,
            spike.1,
            if s_ok { "" } else { " X" },
        ));
    }
    verdict(
        8,
        "norm and spikiness",
        ok,
        Duration::ZERO,
        secs(1),
        format!("(ssa/vanilla, from the criterion 6 runs) {}", parts.join("; ")),
    )
}

fn criterion_9() -> Verdict {
    let t = Instant::now();
    let mut rng = stream(0, "acceptance/triples");
    let mut lower_violations = Vec::new();
    let mut upper_violations = Vec::new();
    let mut not_found = 0;
    let mut worst_upper_ratio: f64 = 0.0;
    let mut min_lower_margin = f64::INFINITY;
    for i in 0..TRIPLES {
        let gamma = rng.random_range(0.05..0.95);
        let rho = rng.random_range(-0.95..0.95);
        let eps_max = 0.5 * f64::min(gamma, 1.0 - gamma);
        let eps = rng.random_range(0.05..=1.0) * eps_max;
        let p = TwoTokenProblem::new(gamma, rho, eps).unwrap();
        let lower = p.lower_bound();
        let least = p.min_plain_norm();
        min_lower_margin = min_lower_margin.min(least - lower);
        if least < lower {
            lower_violations.push(format!("#{i} min-norm {least:.3} < {lower:.3}"));
        }
        match p.fit_plain(0.05, 20_000) {
            Ok(found) => {
                min_lower_margin = min_lower_margin.min(found.effective_norm - lower);
                if found.effective_norm < lower {
                    lower_violations.push(format!("#{i} adam {:.3} < {lower:.3}", found.effective_norm));
                }
            }
            Err(_) => not_found += 1,
        }
        let sel = p.best_selective().unwrap();
        let upper = p.upper_bound();
        worst_upper_ratio = worst_upper_ratio.max(sel.effective_norm / upper);
        if sel.effective_norm > upper || sel.error > eps {
            upper_violations.push(format!(
                "#{i} (gamma {gamma:.2}, rho {rho:.2}, eps {eps:.3}) {:.3} > {upper:.3}",
                sel.effective_norm
            ));
        }
    }
    let ok = lower_violations.is_empty() && upper_violations.is_empty() && not_found == 0;
    verdict(
        9,
        "two-token norm bounds",
        ok,
        t.elapsed(),
        secs(60),
        format!(
            "{TRIPLES} triples; lower bound: smallest margin {min_lower_margin:.3}, violations {lower_violations:?}, adam runs without an eps-solution {not_found}; upper bound: worst selective/bound ratio {worst_upper_ratio:.3}, violations {upper_violations:?}"
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5()];
    let (runs, graph_time) = graph_runs();
    verdicts.push(criterion_6(&runs, graph_time));
    verdicts.push(criterion_7());
    verdicts.push(criterion_8(&runs));
    verdicts.push(criterion_9());

    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} [{}]: {}", v.id, v.name, v.detail))
        .collect();
    println!(
        "acceptance: {} of {} criteria pass",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
