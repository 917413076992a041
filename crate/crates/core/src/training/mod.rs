//! Optimiser, losses and the experiment drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{norm2, Matrix};

pub mod denoise;
pub mod graph;
pub mod imbalanced;
pub mod report;

pub use report::{CurvePoint, ExperimentReport};

/// Adam hyper-parameters; `weight_decay > 0` gives the decoupled (AdamW) form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Usage(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Usage("eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with one moment pair per parameter matrix.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let zeros = |p: &&Matrix| Matrix::zeros(p.rows(), p.cols());
        Adam {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> usize {
        self.t as usize
    }

    /// Applies one update. `step` only labels errors.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], step: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "Adam tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("non-finite gradient for parameter {i}"),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= c.learning_rate * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
            if !p.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("parameter {i} became non-finite"),
                });
            }
        }
        Ok(())
    }
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    let z = *logits
        .get(label)
        .ok_or_else(|| Error::Lookup(format!("label {label} outside {} classes", logits.len())))?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - z)
}

/// `‖y − ŷ/‖ŷ‖‖²`.
pub fn mse_normalized(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            op: "mse_normalized",
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    let n = norm2(y_hat);
    if !(n > 0.0) {
        return Err(Error::Numeric("cannot normalise a zero prediction".into()));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b / n).powi(2)).sum())
}

/// Collects a loss curve every `every` steps plus the final step, and aborts
/// on a non-finite loss.
#[derive(Clone, Debug)]
pub(crate) struct CurveLog {
    every: usize,
    last_step: usize,
    pub points: Vec<CurvePoint>,
}

impl CurveLog {
    pub fn new(every: usize, steps: usize) -> Self {
        CurveLog {
            every: every.max(1),
            last_step: steps.saturating_sub(1),
            points: Vec::new(),
        }
    }

    pub fn record(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        if step % self.every == 0 || step == self.last_step {
            self.points.push(CurvePoint { step, value: loss });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        adam.step(&mut [&mut w], &[Matrix::zeros(1, 2)], 0).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            eps: 0.0,
            ..Default::default()
        };
        let mut w = Matrix::scalar(1.0);
        let mut adam = Adam::new(cfg, &[&w]);
        adam.step(&mut [&mut w], &[Matrix::scalar(-3.7)], 0).unwrap();
        assert!((w.get(0, 0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut w = Matrix::scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        match adam.step(&mut [&mut w], &[Matrix::scalar(f64::NAN)], 17) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 17),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = AdamConfig {
            beta2: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }

    #[test]
    fn losses() {
        assert!((cross_entropy(&[0.3; 5], 2).unwrap() - 5f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.0; 3], 3).is_err());
        let y = [0.6, 0.8];
        assert!(mse_normalized(&y, &[3.0, 4.0]).unwrap() < 1e-15);
        assert!((mse_normalized(&y, &[-0.6, -0.8]).unwrap() - 4.0).abs() < 1e-15);
        assert!(mse_normalized(&y, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn curve_log_keeps_final_step() {
        let mut log = CurveLog::new(10, 25);
        for s in 0..25 {
            log.record(s, 1.0).unwrap();
        }
        let steps: Vec<usize> = log.points.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 24]);
        assert!(log.record(3, f64::INFINITY).is_err());
    }
}
