//! Self-checks runnable from the command line: finite-difference gradients
//! of every tape op and the temperature / truncation equality.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::{truncated_softmax, AttentionLayer, LayerVars, MapMode, RowInfo, Stream, TemperatureSpec};
use crate::autodiff::{softmax_rows, Mask, Tape, Var};
use crate::error::Result;
use crate::gradcheck::{finite_difference_check, GradCheckConfig};
use crate::rng::{stream, StreamRng};
use crate::tensor::Matrix;
use crate::theory::{sparsity_for_temperature, temperature_for_sparsity, top_entry_scaled, top_entry_sparse, PowerLawScores};
use crate::training::report::Table;
use crate::training::ExperimentReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientSuiteConfig {
    pub trials: usize,
    pub epsilon: f64,
    pub rel_tolerance: f64,
    pub abs_tolerance: f64,
}

impl Default for GradientSuiteConfig {
    fn default() -> Self {
        let g = GradCheckConfig::default();
        GradientSuiteConfig {
            trials: 50,
            epsilon: g.epsilon,
            rel_tolerance: g.rel_tolerance,
            abs_tolerance: g.abs_tolerance,
        }
    }
}

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Names of the cases in [`gradient_suite`].
pub const GRADIENT_CASES: [&str; 25] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "row_scale",
    "softmax",
    "causal_softmax",
    "log_softmax",
    "tanh",
    "sigmoid",
    "gelu",
    "log",
    "exp",
    "l2_norm",
    "sum",
    "mean",
    "row_normalize",
    "gather_rows",
    "select",
    "block_scores",
    "block_mix",
    "ssa_forward",
    "ssa_last_query",
];

fn dims(rng: &mut StreamRng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=4))
}

fn normal(r: usize, c: usize, rng: &mut StreamRng) -> Matrix {
    Matrix::random_normal(r, c, 1.0, rng)
}

/// `sum(out ⊙ R)` for a fixed random `R`, so every output entry matters.
fn project(tape: &mut Tape, out: Var, r: &Matrix) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    tape.sum(p)
}

fn unary(rng: &mut StreamRng, positive: bool, reduces: bool, op: fn(&mut Tape, Var) -> Result<Var>) -> (Vec<Matrix>, Loss) {
    let (r, c) = dims(rng);
    let mut x = normal(r, c, rng);
    if positive {
        x = x.map(|v| 0.5 + v.abs());
    }
    let w = if reduces { normal(1, 1, rng) } else { normal(r, c, rng) };
    (
        vec![x],
        Box::new(move |t, v| {
            let o = op(t, v[0])?;
            project(t, o, &w)
        }),
    )
}

fn binary(rng: &mut StreamRng, op: fn(&mut Tape, Var, Var) -> Result<Var>) -> (Vec<Matrix>, Loss) {
    let (r, c) = dims(rng);
    let w = normal(r, c, rng);
    (
        vec![normal(r, c, rng), normal(r, c, rng)],
        Box::new(move |t, v| {
            let o = op(t, v[0], v[1])?;
            project(t, o, &w)
        }),
    )
}

fn random_spec(d: usize, vocab: usize, rng: &mut StreamRng) -> TemperatureSpec {
    let mut spec = match rng.random_range(0..8) {
        0 => TemperatureSpec::Identity,
        1 => TemperatureSpec::constant(1.0),
        2 => TemperatureSpec::position_aware(0.0),
        3 => TemperatureSpec::token_aware(d, rng),
        4 => TemperatureSpec::combined(d, rng),
        5 => TemperatureSpec::weight_shared(d),
        6 => TemperatureSpec::feature_based(1.0, (0..vocab).map(|_| rng.random_range(0.1..1.0)).collect()),
        _ => TemperatureSpec::grouped((0..vocab).map(|t| t % 3).collect()),
    };
    for p in spec.parameters_mut() {
        let shift = if p.len() == 1 { 0.5 } else { 0.0 };
        for x in p.data_mut() {
            *x = rng.random_range(-0.8..0.8) + shift;
        }
    }
    spec
}

fn random_layer(d: usize, vocab: usize, rng: &mut StreamRng) -> AttentionLayer {
    let mut layer = AttentionLayer::random(d, 0.7, rng);
    for s in [Stream::Q, Stream::K, Stream::V] {
        *layer.temp_mut(s) = random_spec(d, vocab, rng);
    }
    layer
}

fn build_case(name: &str, rng: &mut StreamRng) -> (Vec<Matrix>, Loss) {
    match name {
        "matmul" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..=4);
            let w = normal(m, n, rng);
            (
                vec![normal(m, k, rng), normal(k, n, rng)],
                Box::new(move |t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    project(t, o, &w)
                }),
            )
        }
        "transpose" => {
            let (r, c) = dims(rng);
            let w = normal(c, r, rng);
            (
                vec![normal(r, c, rng)],
                Box::new(move |t, v| {
                    let o = t.transpose(v[0])?;
                    project(t, o, &w)
                }),
            )
        }
        "add" => binary(rng, Tape::add),
        "sub" => binary(rng, Tape::sub),
        "mul" => binary(rng, Tape::mul),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            let (r, k) = dims(rng);
            let w = normal(r, k, rng);
            (
                vec![normal(r, k, rng)],
                Box::new(move |t, v| {
                    let o = t.scale(v[0], c)?;
                    project(t, o, &w)
                }),
            )
        }
        "row_scale" => {
            let (r, c) = dims(rng);
            let row_form = rng.random_bool(0.5);
            let s = if row_form { normal(1, r, rng) } else { normal(r, 1, rng) };
            let w = normal(r, c, rng);
            (
                vec![normal(r, c, rng), s],
                Box::new(move |t, v| {
                    let o = t.row_scale(v[0], v[1])?;
                    project(t, o, &w)
                }),
            )
        }
        "softmax" => unary(rng, false, false, |t, x| t.softmax(x, Mask::Full)),
        "causal_softmax" => {
            let n = rng.random_range(1..=4);
            let w = normal(n, n, rng);
            (
                vec![normal(n, n, rng)],
                Box::new(move |t, v| {
                    let o = t.causal_softmax(v[0])?;
                    project(t, o, &w)
                }),
            )
        }
        "log_softmax" => unary(rng, false, false, Tape::log_softmax),
        "tanh" => unary(rng, false, false, Tape::tanh),
        "sigmoid" => unary(rng, false, false, Tape::sigmoid),
        "gelu" => unary(rng, false, false, Tape::gelu),
        "log" => unary(rng, true, false, Tape::log),
        "exp" => unary(rng, false, false, Tape::exp),
        "l2_norm" => unary(rng, true, true, Tape::l2_norm),
        "sum" => unary(rng, false, true, Tape::sum),
        "mean" => unary(rng, false, true, Tape::mean),
        "row_normalize" => unary(rng, true, false, Tape::row_normalize),
        "gather_rows" => {
            let (r, c) = dims(rng);
            let n = rng.random_range(1..=5);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..r)).collect();
            let w = normal(n, c, rng);
            (
                vec![normal(r, c, rng)],
                Box::new(move |t, v| {
                    let o = t.gather_rows(v[0], &idx)?;
                    project(t, o, &w)
                }),
            )
        }
        "select" => {
            let (r, c) = dims(rng);
            let n = rng.random_range(1..=5);
            let idx: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect();
            let w = normal(n, 1, rng);
            (
                vec![normal(r, c, rng)],
                Box::new(move |t, v| {
                    let o = t.select(v[0], &idx)?;
                    project(t, o, &w)
                }),
            )
        }
        "block_scores" => {
            let (b, d) = dims(rng);
            let l = rng.random_range(1..=4);
            let w = normal(b, l, rng);
            (
                vec![normal(b, d, rng), normal(b * l, d, rng)],
                Box::new(move |t, v| {
                    let o = t.block_scores(v[0], v[1])?;
                    project(t, o, &w)
                }),
            )
        }
        "block_mix" => {
            let (b, d) = dims(rng);
            let l = rng.random_range(1..=4);
            let w = normal(b, d, rng);
            (
                vec![normal(b, l, rng), normal(b * l, d, rng)],
                Box::new(move |t, v| {
                    let o = t.block_mix(v[0], v[1])?;
                    project(t, o, &w)
                }),
            )
        }
        "ssa_forward" | "ssa_last_query" => {
            let d = rng.random_range(2..=4);
            let l = rng.random_range(1..=5);
            let b = if name == "ssa_forward" { 1 } else { rng.random_range(1..=3) };
            let vocab = 6;
            let layer = random_layer(d, vocab, rng);
            let tokens: Vec<usize> = (0..b * l).map(|_| rng.random_range(0..vocab)).collect();
            let positions: Vec<usize> = (0..b * l).map(|i| i % l + 1).collect();
            let x = normal(b * l, d, rng);
            let w = if name == "ssa_forward" { normal(l, d, rng) } else { normal(b, d, rng) };
            let mut params = vec![x];
            params.extend(layer.parameters().into_iter().cloned());
            let last = name == "ssa_last_query";
            (
                params,
                Box::new(move |t, v| {
                    let lv = LayerVars::from_flat(&layer, &v[1..])?;
                    let rows = RowInfo {
                        positions: &positions,
                        tokens: Some(&tokens),
                    };
                    let out = if last {
                        layer.last_query_on_tape(t, &lv, v[0], l, rows)?
                    } else {
                        layer.forward_on_tape(t, &lv, v[0], rows, MapMode::Causal)?
                    };
                    project(t, out.output, &w)
                }),
            )
        }
        other => unreachable!("unknown gradient case {other}"),
    }
}

/// Central-difference check of every case over `trials` random draws.
pub fn gradient_suite(config: &GradientSuiteConfig, seed: u64) -> Result<ExperimentReport> {
    let gc = GradCheckConfig {
        epsilon: config.epsilon,
        rel_tolerance: config.rel_tolerance,
        abs_tolerance: config.abs_tolerance,
    };
    let mut report = ExperimentReport::new("gradcheck", seed, config)?;
    let mut table = Table::new(["case", "trials", "entries", "max_rel_error", "max_rel_error_above_floor", "failures"]);
    for name in GRADIENT_CASES {
        let mut rng = stream(seed, &format!("gradcheck/{name}"));
        let (mut worst, mut judged, mut entries, mut failures) = (0.0f64, 0.0f64, 0usize, 0usize);
        for _ in 0..config.trials {
            let (params, f) = build_case(name, &mut rng);
            let r = finite_difference_check(|t, v| f(t, v), &params, &gc)?;
            worst = worst.max(r.max_rel_error());
            // Entries under the absolute floor are finite-difference noise.
            judged = r
                .entries
                .iter()
                .filter(|e| e.abs_error > gc.abs_tolerance)
                .fold(judged, |m, e| m.max(e.rel_error));
            entries += r.entries.len();
            failures += r.failures().count();
        }
        report.metric(format!("max_rel_error.{name}"), worst);
        report.metric(format!("max_rel_error_above_floor.{name}"), judged);
        report.check(name, failures == 0);
        table.push(vec![
            Value::from(name),
            Value::from(config.trials),
            Value::from(entries),
            Value::from(worst),
            Value::from(judged),
            Value::from(failures),
        ])?;
    }
    report.tables.insert("gradients".into(), table);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityCheckConfig {
    pub rows: usize,
    pub tolerance: f64,
}

impl Default for SparsityCheckConfig {
    fn default() -> Self {
        SparsityCheckConfig {
            rows: 20,
            tolerance: 1e-10,
        }
    }
}

/// One row of the sparsity table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub n: usize,
    pub pow: f64,
    pub gamma: f64,
    pub kept: usize,
    pub tau: f64,
    pub kappa: f64,
    pub linf_scaled: f64,
    pub linf_sparse: f64,
    pub diff: f64,
    /// Largest deviation of the explicit vectors from the closed forms.
    pub vector_diff: f64,
}

/// Random power-law instances with an integer salient count; for each, the
/// temperature matching a random truncation level.
pub fn sparsity_rows(rows: usize, seed: u64) -> Result<Vec<SparsityRow>> {
    let mut rng = stream(seed, "sparsity-check");
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let base: usize = rng.random_range(2..=12);
        let k: i32 = rng.random_range(2..=3);
        let n = base.pow(k as u32);
        let pow = 1.0 - 1.0 / k as f64;
        let gamma = rng.random_range(0.2..3.0);
        let scores = PowerLawScores::new(n, pow, gamma, rng.random_range(-1.0..1.0))?;
        let salient = scores.salient_count();
        let kept = rng.random_range(salient + 1..=n);
        let kappa = kept as f64 / n as f64;
        let tau = temperature_for_sparsity(kappa, n, pow, gamma)?;
        let linf_scaled = top_entry_scaled(n, pow, gamma, tau)?;
        let linf_sparse = top_entry_sparse(n, pow, gamma, kappa)?;

        let s = scores.scores();
        let scaled = Matrix::row_vector(&s.iter().map(|x| x * tau).collect::<Vec<_>>());
        let dense_top = softmax_rows(&scaled, Mask::Full).max_abs();
        let sparse_top = truncated_softmax(&s, kept)?.into_iter().fold(0.0, f64::max);
        let vector_diff = (dense_top - linf_scaled).abs().max((sparse_top - linf_sparse).abs());

        let back = sparsity_for_temperature(tau, n, pow, gamma)?;
        out.push(SparsityRow {
            n,
            pow,
            gamma,
            kept,
            tau,
            kappa: back,
            linf_scaled,
            linf_sparse,
            diff: (linf_scaled - linf_sparse).abs(),
            vector_diff,
        });
    }
    Ok(out)
}

pub fn sparsity_check(config: &SparsityCheckConfig, seed: u64) -> Result<ExperimentReport> {
    let rows = sparsity_rows(config.rows, seed)?;
    let mut report = ExperimentReport::new("sparsity-check", seed, config)?;
    let mut table = Table::new([
        "tau",
        "kappa",
        "linf_scaled",
        "linf_sparse",
        "abs_diff",
        "n",
        "pow",
        "gamma",
        "kept",
        "vector_diff",
    ]);
    let mut worst = 0.0f64;
    for r in &rows {
        worst = worst.max(r.diff).max(r.vector_diff);
        table.push(vec![
            Value::from(r.tau),
            Value::from(r.kappa),
            Value::from(r.linf_scaled),
            Value::from(r.linf_sparse),
            Value::from(r.diff),
            Value::from(r.n),
            Value::from(r.pow),
            Value::from(r.gamma),
            Value::from(r.kept),
            Value::from(r.vector_diff),
        ])?;
    }
    report.metric("max_abs_diff", worst);
    report.check("scaled_equals_sparse", worst < config.tolerance);
    report.tables.insert("sparsity".into(), table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_builds_and_passes_once() {
        let cfg = GradientSuiteConfig {
            trials: 2,
            ..Default::default()
        };
        let r = gradient_suite(&cfg, 11).unwrap();
        assert!(r.failed_checks().is_empty(), "{:?}", r.failed_checks());
        assert_eq!(r.tables["gradients"].rows.len(), GRADIENT_CASES.len());
    }

    #[test]
    fn sparsity_rows_agree() {
        for row in sparsity_rows(10, 5).unwrap() {
            assert!(row.diff < 1e-10 && row.vector_diff < 1e-10, "{row:?}");
            assert!((row.kappa - row.kept as f64 / row.n as f64).abs() < 1e-12);
        }
    }
}
