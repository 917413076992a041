//! Fitting the two-token mixture with flat and per-position temperatures.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tasks::{make_imbalanced_instance, PatternSpec};
use crate::tensor::Matrix;
use crate::theory::{
    construct_optimal_W, flat_temperature_floor, imbalanced_risk, imbalanced_risk_on_tape, optimal_temperatures,
    ImbalancedInstance, FLAT_RISK_FLOOR,
};
use crate::training::{Adam, AdamConfig, CurveLog, CurvePoint, ExperimentReport};

/// Risk the per-position model is expected to get under.
pub const POSITION_RISK_TARGET: f64 = 1e-4;
/// Risk the closed-form solution must achieve.
pub const ANALYTIC_RISK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImbalancedConfig {
    pub seq_len: usize,
    pub dim: usize,
    pub alpha_target: f64,
    pub pattern: PatternSpec,
    pub steps: usize,
    pub adam: AdamConfig,
    /// Standard deviation of the initial `W` entries.
    pub init_std: f64,
    pub log_every: usize,
}

impl Default for ImbalancedConfig {
    fn default() -> Self {
        ImbalancedConfig {
            seq_len: 64,
            dim: 4,
            alpha_target: 0.5,
            pattern: PatternSpec::Conforming,
            steps: 3000,
            adam: AdamConfig::default(),
            init_std: 0.1,
            log_every: 50,
        }
    }
}

/// Outcome of one optimisation run.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub w: Matrix,
    pub taus: Vec<f64>,
    pub final_risk: f64,
    /// Smallest risk seen at any iterate, including the final one.
    pub min_risk: f64,
    pub curve: Vec<CurvePoint>,
}

/// Adam on `W` (and on the per-position table when `train_taus`), from a
/// small random `W` and `τ ≡ 1`.
pub fn fit(inst: &ImbalancedInstance, config: &ImbalancedConfig, train_taus: bool, seed: u64) -> Result<FitResult> {
    config.adam.validate()?;
    let l = inst.len();
    let d = inst.dim();
    let mut w = Matrix::random_normal(d, d, config.init_std, &mut stream(seed, "imbalanced/init"));
    let mut taus = Matrix::ones(l, 1);
    let mut adam = if train_taus {
        Adam::new(config.adam, &[&w, &taus])
    } else {
        Adam::new(config.adam, &[&w])
    };
    let mut log = CurveLog::new(config.log_every, config.steps);
    let mut min_risk = f64::INFINITY;
    for step in 0..config.steps {
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let tv = if train_taus {
            tape.param(taus.clone())
        } else {
            tape.constant(taus.clone())
        };
        let risk = imbalanced_risk_on_tape(&mut tape, wv, tv, inst)?;
        let r = tape.scalar(risk);
        log.record(step, r)?;
        min_risk = min_risk.min(r);
        let grads = tape.backward(risk)?;
        if train_taus {
            adam.step(&mut [&mut w, &mut taus], &[grads.wrt(wv), grads.wrt(tv)], step)?;
        } else {
            adam.step(&mut [&mut w], &[grads.wrt(wv)], step)?;
        }
    }
    let final_risk = imbalanced_risk(&w, inst, taus.data())?;
    if !final_risk.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            reason: "final risk is not finite".into(),
        });
    }
    Ok(FitResult {
        w,
        taus: taus.into_data(),
        final_risk,
        min_risk: min_risk.min(final_risk),
        curve: log.points,
    })
}

/// Closed-form risk, the flat floor, and both trained variants.
pub fn train_imbalanced(config: &ImbalancedConfig, seed: u64) -> Result<ExperimentReport> {
    let inst = make_imbalanced_instance(config.seq_len, &config.pattern, config.alpha_target, config.dim, seed)?;
    let mut report = ExperimentReport::new("imbalanced", seed, config)?;

    let w_star = construct_optimal_W(&inst.a, &inst.b)?;
    let tau_star = optimal_temperatures(&inst)?;
    let analytic = imbalanced_risk(&w_star, &inst, &tau_star)?;
    report.metric("risk.analytic", analytic);
    report.check("analytic_risk_vanishes", analytic <= ANALYTIC_RISK_TOL);
    report.arrays.insert("tau_star".into(), tau_star);

    let conforming = inst.check_conforming().is_ok();
    report.metric("conforming", f64::from(u8::from(conforming)));
    let flat = fit(&inst, config, false, seed)?;
    report.metric("risk.flat_final", flat.final_risk);
    report.metric("risk.flat_min", flat.min_risk);
    if conforming {
        let floor = flat_temperature_floor(&inst)?;
        report.metric("flat_floor", floor);
        report.check("flat_floor_at_least_bound", floor >= FLAT_RISK_FLOOR);
        report.check("flat_training_above_bound", flat.min_risk >= FLAT_RISK_FLOOR);
    }

    let pos = fit(&inst, config, true, seed)?;
    report.metric("risk.position_final", pos.final_risk);
    report.check("position_reaches_target", pos.final_risk < POSITION_RISK_TARGET);
    report.arrays.insert("tau_learned".into(), pos.taus);
    report.arrays.insert("kappa".into(), (1..=inst.len()).map(|n| finite_or_zero(inst.kappa_at(n))).collect());
    report.curves.insert("flat.risk".into(), flat.curve);
    report.curves.insert("position.risk".into(), pos.curve);
    Ok(report)
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}
