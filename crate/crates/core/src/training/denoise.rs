//! Recovering a direction from a noisy sequence with plain and value-gated attention.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionLayer, Stream, TemperatureSpec};
use crate::autodiff::{Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tasks::{bayes_optimal, make_denoising_batch, naive_average, DenoisingSample};
use crate::tensor::Matrix;
use crate::training::{mse_normalized, Adam, AdamConfig, CurveLog, CurvePoint, ExperimentReport};

/// Coordinate level at which the value gate opens.
pub const GATE_LEVEL: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    /// Number of directions; also the embedding dimension.
    pub k: usize,
    pub seq_len: usize,
    pub sigma: f64,
    pub alpha_frac: f64,
    pub steps: usize,
    pub batch: usize,
    pub eval_batch: usize,
    pub adam: AdamConfig,
    /// Initial weights are N(0, (init_scale/√d)²).
    pub init_scale: f64,
    pub log_every: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            k: 8,
            seq_len: 256,
            sigma: 0.3,
            alpha_frac: 0.25,
            steps: 3000,
            batch: 128,
            eval_batch: 4096,
            adam: AdamConfig::default(),
            init_scale: 0.1,
            log_every: 50,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.k == 0 || self.seq_len == 0 || self.batch == 0 || self.eval_batch == 0 {
            return Err(Error::Usage("k, seq_len, batch and eval_batch must be positive".into()));
        }
        if !(self.alpha_frac > 0.0 && self.alpha_frac < 1.0) || self.sigma < 0.0 {
            return Err(Error::Usage("need 0 < alpha_frac < 1 and sigma >= 0".into()));
        }
        Ok(())
    }
}

/// Plain layer, or the same layer with the threshold gate on values.
pub fn denoise_layer(d: usize, init_scale: f64, gated: bool, seed: u64) -> Result<AttentionLayer> {
    let layer = AttentionLayer::random(d, init_scale / (d as f64).sqrt(), &mut stream(seed, "denoise/layer"));
    if gated {
        layer.with_temperature(Stream::V, TemperatureSpec::threshold(GATE_LEVEL))
    } else {
        Ok(layer)
    }
}

struct Stacked {
    x_all: Matrix,
    x_last: Matrix,
    gate: Matrix,
    y: Matrix,
    seq_len: usize,
}

fn stack(samples: &[DenoisingSample], gated: bool) -> Result<Stacked> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty denoising batch".into()))?;
    let (l, d) = first.x.shape();
    let mut all = Vec::with_capacity(samples.len() * l * d);
    let mut last = Vec::with_capacity(samples.len() * d);
    let mut gate = Vec::with_capacity(samples.len() * l);
    let mut y = Vec::with_capacity(samples.len() * d);
    for s in samples {
        if s.x.shape() != (l, d) {
            return Err(Error::Shape {
                op: "denoising batch",
                left: s.x.shape(),
                right: (l, d),
            });
        }
        all.extend_from_slice(s.x.data());
        last.extend_from_slice(s.x.row(l - 1));
        y.extend_from_slice(&s.y);
        for i in 0..l {
            let top = s.x.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            gate.push(if !gated || top >= GATE_LEVEL { 1.0 } else { 0.0 });
        }
    }
    let b = samples.len();
    Ok(Stacked {
        x_all: Matrix::new(b * l, d, all)?,
        x_last: Matrix::new(b, d, last)?,
        gate: Matrix::new(b * l, 1, gate)?,
        y: Matrix::new(b, d, y)?,
        seq_len: l,
    })
}

/// Unnormalised last-position outputs (B×d).
///
/// Only the last query is scored, so queries and keys are contracted first:
/// `r = x_L W_q W_kᵀ`, scores `r·x_i/√d`, output `Σ_i s_i g_i x_i W_v`.
/// This is the last row of causal attention with the layer's value gate.
fn last_outputs(layer: &AttentionLayer, tape: &mut Tape, w: [Var; 3], data: &Stacked) -> Result<Var> {
    let d = data.x_all.cols();
    let gated = match &layer.temp_v {
        TemperatureSpec::Identity => false,
        TemperatureSpec::Threshold { level } if *level == GATE_LEVEL => true,
        _ => return Err(Error::Usage("denoising model supports only the threshold value gate".into())),
    };
    if !layer.temp_q.is_identity() || !layer.temp_k.is_identity() {
        return Err(Error::Usage("denoising model has no query/key temperatures".into()));
    }
    let [w_q, w_k, w_v] = w;
    let x_last = tape.constant(data.x_last.clone());
    let x_all = tape.constant(data.x_all.clone());
    let q = tape.matmul(x_last, w_q)?;
    let wkt = tape.transpose(w_k)?;
    let r = tape.matmul(q, wkt)?;
    let logits = tape.block_scores(r, x_all)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let s = tape.softmax(logits, Mask::Full)?;
    let values = if gated {
        let g = tape.constant(data.gate.clone());
        tape.row_scale(x_all, g)?
    } else {
        x_all
    };
    debug_assert_eq!(tape.value(s).cols(), data.seq_len);
    let mixed = tape.block_mix(s, values)?;
    tape.matmul(mixed, w_v)
}

fn batch_loss(layer: &AttentionLayer, tape: &mut Tape, w: [Var; 3], data: &Stacked) -> Result<Var> {
    let out = last_outputs(layer, tape, w, data)?;
    let unit = tape.row_normalize(out)?;
    let y = tape.constant(data.y.clone());
    let diff = tape.sub(unit, y)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / data.x_last.rows() as f64)
}

/// Last-position outputs of `layer` for each sample, before normalisation.
pub fn predict(layer: &AttentionLayer, samples: &[DenoisingSample]) -> Result<Vec<Vec<f64>>> {
    let data = stack(samples, !layer.temp_v.is_identity())?;
    let mut tape = Tape::new();
    let w = [
        tape.constant(layer.w_q.clone()),
        tape.constant(layer.w_k.clone()),
        tape.constant(layer.w_v.clone()),
    ];
    let out = last_outputs(layer, &mut tape, w, &data)?;
    Ok(tape.value(out).to_rows())
}

/// Mean normalised squared error over `samples`.
pub fn risk(layer: &AttentionLayer, samples: &[DenoisingSample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(512) {
        for (s, y_hat) in chunk.iter().zip(predict(layer, chunk)?) {
            total += mse_normalized(&s.y, &y_hat)?;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Risk of an estimator that needs no training.
pub fn estimator_risk(samples: &[DenoisingSample], f: impl Fn(&DenoisingSample) -> Vec<f64>) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += mse_normalized(&s.y, &f(s))?;
    }
    Ok(total / samples.len() as f64)
}

/// Trained layer with its loss curve.
#[derive(Clone, Debug)]
pub struct DenoiseRun {
    pub layer: AttentionLayer,
    pub curve: Vec<CurvePoint>,
}

/// Trains the plain and gated layers on identical batches.
pub fn train_pair(config: &DenoiseConfig, seed: u64) -> Result<(DenoiseRun, DenoiseRun)> {
    config.validate()?;
    let mut layers = [
        denoise_layer(config.k, config.init_scale, false, seed)?,
        denoise_layer(config.k, config.init_scale, true, seed)?,
    ];
    let mut adams: Vec<Adam> = layers
        .iter()
        .map(|l| Adam::new(config.adam, &[&l.w_q, &l.w_k, &l.w_v]))
        .collect();
    let mut logs = [
        CurveLog::new(config.log_every, config.steps),
        CurveLog::new(config.log_every, config.steps),
    ];
    let mut rng = stream(seed, "denoise/data");
    for step in 0..config.steps {
        let batch = make_denoising_batch(config.k, config.seq_len, config.sigma, config.alpha_frac, config.batch, &mut rng)?;
        for (i, layer) in layers.iter_mut().enumerate() {
            let data = stack(&batch, i == 1)?;
            let mut tape = Tape::new();
            let w = [
                tape.param(layer.w_q.clone()),
                tape.param(layer.w_k.clone()),
                tape.param(layer.w_v.clone()),
            ];
            let loss = batch_loss(layer, &mut tape, w, &data)?;
            logs[i].record(step, tape.scalar(loss))?;
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = w.iter().map(|v| grads.wrt(*v)).collect();
            adams[i].step(&mut [&mut layer.w_q, &mut layer.w_k, &mut layer.w_v], &g, step)?;
        }
    }
    let [plain, gated] = layers;
    let [plain_log, gated_log] = logs;
    Ok((
        DenoiseRun {
            layer: plain,
            curve: plain_log.points,
        },
        DenoiseRun {
            layer: gated,
            curve: gated_log.points,
        },
    ))
}

/// Trains both layers and evaluates all four estimators on one held-out set.
pub fn train_denoising(config: &DenoiseConfig, seed: u64) -> Result<ExperimentReport> {
    let (plain, gated) = train_pair(config, seed)?;
    let eval = make_denoising_batch(
        config.k,
        config.seq_len,
        config.sigma,
        config.alpha_frac,
        config.eval_batch,
        &mut stream(seed, "denoise/eval"),
    )?;
    let mut report = ExperimentReport::new("denoise", seed, config)?;
    report.metric("risk.vanilla", risk(&plain.layer, &eval)?);
    report.metric("risk.value_selective", risk(&gated.layer, &eval)?);
    report.metric("risk.naive", estimator_risk(&eval, |s| naive_average(&s.x))?);
    report.metric("risk.bayes", estimator_risk(&eval, bayes_optimal)?);
    report.curves.insert("vanilla.loss".into(), plain.curve);
    report.curves.insert("value_selective.loss".into(), gated.curve);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::selective_attention;
    use crate::tasks::make_denoising_batch_seeded;

    #[test]
    fn fast_path_matches_full_attention() {
        let samples = make_denoising_batch_seeded(4, 12, 0.4, 0.3, 3, 8).unwrap();
        for gated in [false, true] {
            let layer = denoise_layer(4, 1.0, gated, 2).unwrap();
            let fast = predict(&layer, &samples).unwrap();
            for (s, f) in samples.iter().zip(&fast) {
                let full = selective_attention(&s.x, &layer, None).unwrap();
                for (a, b) in full.row(11).iter().zip(f) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn noiseless_bayes_risk_is_zero() {
        let samples = make_denoising_batch_seeded(8, 32, 0.0, 0.25, 50, 1).unwrap();
        assert!(estimator_risk(&samples, bayes_optimal).unwrap() < 1e-24);
    }

    #[test]
    fn short_training_is_deterministic() {
        let cfg = DenoiseConfig {
            seq_len: 16,
            steps: 20,
            batch: 8,
            eval_batch: 64,
            log_every: 5,
            ..Default::default()
        };
        let a = train_denoising(&cfg, 3).unwrap();
        let b = train_denoising(&cfg, 3).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.curves["vanilla.loss"].len(), 5);
        a.ensure_finite().unwrap();
    }

    #[test]
    fn rejects_other_gates() {
        let layer = denoise_layer(4, 1.0, false, 1)
            .unwrap()
            .with_temperature(Stream::Q, TemperatureSpec::constant(2.0))
            .unwrap();
        let samples = make_denoising_batch_seeded(4, 5, 0.1, 0.5, 2, 1).unwrap();
        assert!(predict(&layer, &samples).is_err());
    }
}
