//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Step for the central difference.
    pub epsilon: f64,
    /// Relative error allowed per entry.
    pub rel_tolerance: f64,
    /// Absolute difference below which an entry passes regardless of relative error.
    pub abs_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            rel_tolerance: 1e-4,
            abs_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EntryCheck {
    pub param: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Sorted by descending relative error.
    pub entries: Vec<EntryCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.rel_error)
    }

    pub fn failures(&self) -> impl Iterator<Item = &EntryCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

/// Compares the tape gradient of `f` against central differences.
///
/// `f` receives a fresh tape and one trainable `Var` per entry of `params`
/// and must return a 1×1 node.
pub fn finite_difference_check<F>(f: F, params: &[Matrix], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if config.epsilon <= 0.0 {
        return Err(Error::Usage("finite-difference epsilon must be positive".into()));
    }
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work: Vec<Matrix> = params.to_vec();
    let mut entries = Vec::new();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + config.epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - config.epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = analytic.data()[k];
            let abs_error = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel_error = if scale == 0.0 { 0.0 } else { abs_error / scale };
            entries.push(EntryCheck {
                param: pi,
                row: k / params[pi].cols(),
                col: k % params[pi].cols(),
                analytic: a,
                numeric,
                abs_error,
                rel_error,
                passed: abs_error <= config.abs_tolerance || rel_error < config.rel_tolerance,
            });
        }
    }
    entries.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradCheckReport { entries, passed })
}
