//! Vanilla and selective (temperature-scaled) causal attention.
//!
//! A selective layer row-scales the key, query and value embeddings by
//! per-token scalars before the usual softmax attention:
//! `K = τ_k(X) ⊙ XW_k`, `Q = τ_q(X) ⊙ XW_q`, `V = τ_v(X) ⊙ XW_v`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{norm2, Matrix};

pub use crate::linalg::operator_norm;

/// Initial `alpha` for position-aware temperatures; `sigmoid(-4) ≈ 0.018`.
pub const ALPHA_INIT: f64 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    Q,
    K,
    V,
}

/// How a per-token inverse temperature is computed.
///
/// Scalar parameters are stored as 1×1 matrices so every trainable piece is
/// a [`Matrix`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TemperatureSpec {
    Identity,
    Constant { c: Matrix },
    /// `1 + sigmoid(alpha) · ln n` at 1-based position `n`.
    PositionAware { alpha: Matrix },
    /// `tanh(w_tmp · gelu(w_tmp2 · x))`, `w_tmp` is 1×h, `w_tmp2` is h×d.
    TokenAware { w_tmp: Matrix, w_tmp2: Matrix },
    /// Token-aware plus position-aware.
    Combined {
        alpha: Matrix,
        w_tmp: Matrix,
        w_tmp2: Matrix,
    },
    /// Token-aware with the layer's own projection as the hidden layer:
    /// `tanh(w_tmp · gelu(x W))` where `W` is the projection of the stream
    /// this spec is attached to.
    WeightShared { w_tmp: Matrix },
    /// `scale × frequency[token]`.
    FeatureBased { scale: Matrix, frequency: Vec<f64> },
    /// `exp(log_tau[group_of_token[token]])`.
    Grouped {
        log_tau: Matrix,
        group_of_token: Vec<usize>,
    },
    /// 1 when the largest coordinate of `x` reaches `level`, else 0. Not trainable.
    Threshold { level: f64 },
}

impl TemperatureSpec {
    pub fn constant(c: f64) -> Self {
        TemperatureSpec::Constant { c: Matrix::scalar(c) }
    }

    pub fn position_aware(alpha: f64) -> Self {
        TemperatureSpec::PositionAware {
            alpha: Matrix::scalar(alpha),
        }
    }

    /// Token-aware MLP with hidden width `d`, `w_tmp` zero so τ starts at 0.
    pub fn token_aware<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        TemperatureSpec::TokenAware {
            w_tmp: Matrix::zeros(1, d),
            w_tmp2: Matrix::random_normal(d, d, 1.0 / (d as f64).sqrt(), rng),
        }
    }

    /// Combined temperature starting near 1 (`w_tmp = 0`, `alpha = -4`).
    pub fn combined<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        TemperatureSpec::Combined {
            alpha: Matrix::scalar(ALPHA_INIT),
            w_tmp: Matrix::zeros(1, d),
            w_tmp2: Matrix::random_normal(d, d, 1.0 / (d as f64).sqrt(), rng),
        }
    }

    pub fn weight_shared(d: usize) -> Self {
        TemperatureSpec::WeightShared {
            w_tmp: Matrix::zeros(1, d),
        }
    }

    pub fn feature_based(scale: f64, frequency: Vec<f64>) -> Self {
        TemperatureSpec::FeatureBased {
            scale: Matrix::scalar(scale),
            frequency,
        }
    }

    /// One log-temperature per group, all starting at `log_tau = 0` (τ = 1).
    pub fn grouped(group_of_token: Vec<usize>) -> Self {
        let groups = group_of_token.iter().max().map_or(0, |g| g + 1);
        TemperatureSpec::Grouped {
            log_tau: Matrix::zeros(groups, 1),
            group_of_token,
        }
    }

    pub fn threshold(level: f64) -> Self {
        TemperatureSpec::Threshold { level }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TemperatureSpec::Identity)
    }

    /// Whether the value depends on token position.
    pub fn uses_position(&self) -> bool {
        matches!(
            self,
            TemperatureSpec::PositionAware { .. } | TemperatureSpec::Combined { .. }
        )
    }

    /// Trainable matrices in a fixed order.
    pub fn parameters(&self) -> Vec<&Matrix> {
        use TemperatureSpec::*;
        match self {
            Identity | Threshold { .. } => vec![],
            Constant { c } => vec![c],
            PositionAware { alpha } => vec![alpha],
            TokenAware { w_tmp, w_tmp2 } => vec![w_tmp, w_tmp2],
            Combined { alpha, w_tmp, w_tmp2 } => vec![alpha, w_tmp, w_tmp2],
            WeightShared { w_tmp } => vec![w_tmp],
            FeatureBased { scale, .. } => vec![scale],
            Grouped { log_tau, .. } => vec![log_tau],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        use TemperatureSpec::*;
        match self {
            Identity | Threshold { .. } => vec![],
            Constant { c } => vec![c],
            PositionAware { alpha } => vec![alpha],
            TokenAware { w_tmp, w_tmp2 } => vec![w_tmp, w_tmp2],
            Combined { alpha, w_tmp, w_tmp2 } => vec![alpha, w_tmp, w_tmp2],
            WeightShared { w_tmp } => vec![w_tmp],
            FeatureBased { scale, .. } => vec![scale],
            Grouped { log_tau, .. } => vec![log_tau],
        }
    }

    fn check_shapes(&self, d: usize) -> Result<()> {
        use TemperatureSpec::*;
        let scalar = |m: &Matrix, what: &'static str| {
            if m.shape() == (1, 1) {
                Ok(())
            } else {
                Err(Error::Shape {
                    op: what,
                    left: m.shape(),
                    right: (1, 1),
                })
            }
        };
        let mlp = |w_tmp: &Matrix, w_tmp2: &Matrix| {
            if w_tmp.rows() != 1 || w_tmp2.rows() != w_tmp.cols() || w_tmp2.cols() != d {
                Err(Error::Shape {
                    op: "token temperature",
                    left: w_tmp.shape(),
                    right: w_tmp2.shape(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            Identity | Threshold { .. } => Ok(()),
            Constant { c } => scalar(c, "constant temperature"),
            PositionAware { alpha } => scalar(alpha, "position temperature"),
            TokenAware { w_tmp, w_tmp2 } => mlp(w_tmp, w_tmp2),
            Combined { alpha, w_tmp, w_tmp2 } => {
                scalar(alpha, "position temperature")?;
                mlp(w_tmp, w_tmp2)
            }
            WeightShared { w_tmp } => {
                if w_tmp.shape() == (1, d) {
                    Ok(())
                } else {
                    Err(Error::Shape {
                        op: "weight-shared temperature",
                        left: w_tmp.shape(),
                        right: (1, d),
                    })
                }
            }
            FeatureBased { scale, .. } => scalar(scale, "feature temperature"),
            Grouped { log_tau, group_of_token } => {
                if log_tau.cols() != 1 {
                    return Err(Error::Shape {
                        op: "grouped temperature",
                        left: log_tau.shape(),
                        right: (log_tau.rows(), 1),
                    });
                }
                match group_of_token.iter().find(|g| **g >= log_tau.rows()) {
                    Some(g) => Err(Error::Lookup(format!("group {g} has no temperature"))),
                    None => Ok(()),
                }
            }
        }
    }
}

/// `1 + sigmoid(alpha) · ln n` for 1-based position `n`.
pub fn position_temperature(n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("positions are 1-based; got 0".into()));
    }
    Ok(1.0 + crate::autodiff::sigmoid(alpha) * (n as f64).ln())
}

/// Token-dependent part of a temperature for a single embedding `x`.
///
/// `shared` is the layer projection used by [`TemperatureSpec::WeightShared`].
pub fn token_temperature(x: &[f64], spec: &TemperatureSpec, shared: Option<&Matrix>) -> Result<f64> {
    use TemperatureSpec::*;
    let mlp_input = match spec {
        TokenAware { w_tmp2, .. } | Combined { w_tmp2, .. } => w_tmp2.matmul(&Matrix::column(x))?.transpose(),
        WeightShared { .. } => {
            let w = shared.ok_or_else(|| Error::Usage("weight-shared temperature needs the layer weight".into()))?;
            Matrix::row_vector(x).matmul(w)?
        }
        _ => {
            return Err(Error::Usage(
                "token_temperature needs a token-aware, combined or weight-shared spec".into(),
            ))
        }
    };
    let w_tmp = match spec {
        TokenAware { w_tmp, .. } | Combined { w_tmp, .. } | WeightShared { w_tmp } => w_tmp,
        _ => unreachable!(),
    };
    let hidden = mlp_input.map(crate::autodiff::gelu);
    let f = w_tmp.matmul_t(&hidden)?;
    Ok(f.get(0, 0).tanh())
}

/// Trainable leaves of one temperature spec on a tape.
#[derive(Clone, Debug)]
pub struct TempVars(Vec<Var>);

/// Trainable leaves of a layer on a tape, in [`AttentionLayer::parameters`] order.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub temp_q: TempVars,
    pub temp_k: TempVars,
    pub temp_v: TempVars,
}

impl LayerVars {
    /// Regroups a flat list given in [`AttentionLayer::parameters`] order.
    pub fn from_flat(layer: &AttentionLayer, vars: &[Var]) -> Result<Self> {
        let counts = [
            layer.temp_q.parameters().len(),
            layer.temp_k.parameters().len(),
            layer.temp_v.parameters().len(),
        ];
        let expected = 3 + counts.iter().sum::<usize>();
        if vars.len() != expected {
            return Err(Error::Usage(format!(
                "layer has {expected} parameters, got {} vars",
                vars.len()
            )));
        }
        let (q_end, k_end) = (3 + counts[0], 3 + counts[0] + counts[1]);
        Ok(LayerVars {
            w_q: vars[0],
            w_k: vars[1],
            w_v: vars[2],
            temp_q: TempVars(vars[3..q_end].to_vec()),
            temp_k: TempVars(vars[q_end..k_end].to_vec()),
            temp_v: TempVars(vars[k_end..].to_vec()),
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.w_q, self.w_k, self.w_v];
        v.extend(&self.temp_q.0);
        v.extend(&self.temp_k.0);
        v.extend(&self.temp_v.0);
        v
    }
}

/// Per-row context needed by temperature functions.
#[derive(Clone, Copy, Debug)]
pub struct RowInfo<'a> {
    /// 1-based positions, one per row.
    pub positions: &'a [usize],
    /// Token ids, one per row, when known.
    pub tokens: Option<&'a [usize]>,
}

/// Evaluates a temperature on the tape; `None` means "all ones".
///
/// `x` holds the raw embeddings (L×d) and `proj` the stream projection `XW`.
pub fn temperature_on_tape(
    tape: &mut Tape,
    spec: &TemperatureSpec,
    vars: &TempVars,
    x: Var,
    proj: Var,
    rows: RowInfo<'_>,
) -> Result<Option<Var>> {
    use TemperatureSpec::*;
    let l = tape.value(x).rows();
    if rows.positions.len() != l {
        return Err(Error::Shape {
            op: "temperature positions",
            left: (l, 1),
            right: (rows.positions.len(), 1),
        });
    }
    let p = &vars.0;
    let tau = match spec {
        Identity => return Ok(None),
        Constant { .. } => {
            let ones = tape.constant(Matrix::ones(l, 1));
            tape.matmul(ones, p[0])?
        }
        PositionAware { .. } => position_on_tape(tape, p[0], rows.positions)?,
        TokenAware { .. } => mlp_on_tape(tape, p[0], Some(p[1]), x)?,
        Combined { .. } => {
            let tok = mlp_on_tape(tape, p[1], Some(p[2]), x)?;
            let pos = position_on_tape(tape, p[0], rows.positions)?;
            tape.add(tok, pos)?
        }
        WeightShared { .. } => mlp_on_tape(tape, p[0], None, proj)?,
        FeatureBased { frequency, .. } => {
            let tokens = rows
                .tokens
                .ok_or_else(|| Error::Lookup("feature-based temperature needs token ids".into()))?;
            let f = tokens
                .iter()
                .map(|&t| {
                    frequency
                        .get(t)
                        .copied()
                        .ok_or_else(|| Error::Lookup(format!("no frequency for token {t}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let f = tape.constant(Matrix::column(&f));
            tape.matmul(f, p[0])?
        }
        Grouped { group_of_token, .. } => {
            let tokens = rows
                .tokens
                .ok_or_else(|| Error::Lookup("grouped temperature needs token ids".into()))?;
            let idx = tokens
                .iter()
                .map(|&t| {
                    group_of_token
                        .get(t)
                        .copied()
                        .ok_or_else(|| Error::Lookup(format!("no group for token {t}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            let g = tape.gather_rows(p[0], &idx)?;
            tape.exp(g)?
        }
        Threshold { level } => {
            let xs = tape.value(x);
            let m: Vec<f64> = (0..l)
                .map(|i| {
                    let top = xs.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if top >= *level {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            tape.constant(Matrix::column(&m))
        }
    };
    Ok(Some(tau))
}

fn position_on_tape(tape: &mut Tape, alpha: Var, positions: &[usize]) -> Result<Var> {
    let mut logn = Vec::with_capacity(positions.len());
    for &n in positions {
        if n == 0 {
            return Err(Error::Usage("positions are 1-based; got 0".into()));
        }
        logn.push((n as f64).ln());
    }
    let logn = tape.constant(Matrix::column(&logn));
    let ones = tape.constant(Matrix::ones(positions.len(), 1));
    let s = tape.sigmoid(alpha)?;
    let scaled = tape.matmul(logn, s)?;
    tape.add(ones, scaled)
}

/// `tanh(gelu(input · w_tmp2ᵀ) · w_tmpᵀ)`; with `w_tmp2 = None` the input is
/// already the hidden pre-activation.
fn mlp_on_tape(tape: &mut Tape, w_tmp: Var, w_tmp2: Option<Var>, input: Var) -> Result<Var> {
    let pre = match w_tmp2 {
        Some(w2) => {
            let w2t = tape.transpose(w2)?;
            tape.matmul(input, w2t)?
        }
        None => input,
    };
    let h = tape.gelu(pre)?;
    let wt = tape.transpose(w_tmp)?;
    let f = tape.matmul(h, wt)?;
    tape.tanh(f)
}

/// Whether attention rows see only the past or every column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapMode {
    Causal,
    FullSquare,
}

impl From<MapMode> for Mask {
    fn from(m: MapMode) -> Mask {
        match m {
            MapMode::Causal => Mask::Causal,
            MapMode::FullSquare => Mask::Full,
        }
    }
}

/// One attention layer with optional temperatures on each stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub temp_q: TemperatureSpec,
    pub temp_k: TemperatureSpec,
    pub temp_v: TemperatureSpec,
}

/// Output of a tape forward pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// Pre-softmax logits.
    pub logits: Var,
    pub scores: Var,
    pub output: Var,
}

impl AttentionLayer {
    /// Layer with identity temperatures (vanilla attention).
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        let layer = AttentionLayer {
            w_q,
            w_k,
            w_v,
            temp_q: TemperatureSpec::Identity,
            temp_k: TemperatureSpec::Identity,
            temp_v: TemperatureSpec::Identity,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Weights drawn from N(0, std²).
    pub fn random<R: Rng + ?Sized>(d: usize, std: f64, rng: &mut R) -> Self {
        AttentionLayer {
            w_q: Matrix::random_normal(d, d, std, rng),
            w_k: Matrix::random_normal(d, d, std, rng),
            w_v: Matrix::random_normal(d, d, std, rng),
            temp_q: TemperatureSpec::Identity,
            temp_k: TemperatureSpec::Identity,
            temp_v: TemperatureSpec::Identity,
        }
    }

    pub fn with_temperature(mut self, stream: Stream, spec: TemperatureSpec) -> Result<Self> {
        *self.temp_mut(stream) = spec;
        self.validate()?;
        Ok(self)
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn temp(&self, stream: Stream) -> &TemperatureSpec {
        match stream {
            Stream::Q => &self.temp_q,
            Stream::K => &self.temp_k,
            Stream::V => &self.temp_v,
        }
    }

    pub fn temp_mut(&mut self, stream: Stream) -> &mut TemperatureSpec {
        match stream {
            Stream::Q => &mut self.temp_q,
            Stream::K => &mut self.temp_k,
            Stream::V => &mut self.temp_v,
        }
    }

    pub fn weight(&self, stream: Stream) -> &Matrix {
        match stream {
            Stream::Q => &self.w_q,
            Stream::K => &self.w_k,
            Stream::V => &self.w_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.rows();
        for w in [&self.w_q, &self.w_k, &self.w_v] {
            if w.shape() != (d, d) {
                return Err(Error::Shape {
                    op: "AttentionLayer",
                    left: w.shape(),
                    right: (d, d),
                });
            }
        }
        for s in [&self.temp_q, &self.temp_k, &self.temp_v] {
            s.check_shapes(d)?;
        }
        Ok(())
    }

    /// Whether every temperature is identity.
    pub fn is_vanilla(&self) -> bool {
        self.temp_q.is_identity() && self.temp_k.is_identity() && self.temp_v.is_identity()
    }

    /// Trainable matrices: `w_q, w_k, w_v`, then the q, k, v temperature parameters.
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut p = vec![&self.w_q, &self.w_k, &self.w_v];
        p.extend(self.temp_q.parameters());
        p.extend(self.temp_k.parameters());
        p.extend(self.temp_v.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![&mut self.w_q, &mut self.w_k, &mut self.w_v];
        p.extend(self.temp_q.parameters_mut());
        p.extend(self.temp_k.parameters_mut());
        p.extend(self.temp_v.parameters_mut());
        p
    }

    /// Registers parameters on the tape; `trainable = false` records constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        let vars: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        LayerVars::from_flat(self, &vars).expect("parameter count matches by construction")
    }

    /// `τ ⊙ X W` for one stream.
    pub fn project_on_tape(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        stream: Stream,
        x: Var,
        rows: RowInfo<'_>,
    ) -> Result<Var> {
        let (w, tv) = match stream {
            Stream::Q => (vars.w_q, &vars.temp_q),
            Stream::K => (vars.w_k, &vars.temp_k),
            Stream::V => (vars.w_v, &vars.temp_v),
        };
        let proj = tape.matmul(x, w)?;
        match temperature_on_tape(tape, self.temp(stream), tv, x, proj, rows)? {
            Some(tau) => tape.row_scale(proj, tau),
            None => Ok(proj),
        }
    }

    /// Full selective attention on one sequence.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Var,
        rows: RowInfo<'_>,
        mode: MapMode,
    ) -> Result<AttentionVars> {
        let d = tape.value(x).cols();
        if d != self.head_dim() {
            return Err(Error::Shape {
                op: "attention input",
                left: tape.value(x).shape(),
                right: self.w_q.shape(),
            });
        }
        let q = self.project_on_tape(tape, vars, Stream::Q, x, rows)?;
        let k = self.project_on_tape(tape, vars, Stream::K, x, rows)?;
        let v = self.project_on_tape(tape, vars, Stream::V, x, rows)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
        let scores = tape.softmax(logits, mode.into())?;
        let output = tape.matmul(scores, v)?;
        Ok(AttentionVars { logits, scores, output })
    }

    /// Attention of the last position of each of `B` equal-length sequences.
    ///
    /// `x` stacks the sequences ((B·L)×d); `rows` describes all B·L rows.
    /// Returns B×L scores and the B×d outputs. Equivalent to the last row of
    /// [`Self::forward_on_tape`] applied to each sequence.
    pub fn last_query_on_tape(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Var,
        seq_len: usize,
        rows: RowInfo<'_>,
    ) -> Result<AttentionVars> {
        let (n, d) = tape.value(x).shape();
        if seq_len == 0 || n % seq_len != 0 || d != self.head_dim() {
            return Err(Error::Shape {
                op: "last_query attention",
                left: (n, d),
                right: (seq_len, self.head_dim()),
            });
        }
        let last: Vec<usize> = (0..n / seq_len).map(|b| b * seq_len + seq_len - 1).collect();
        let x_last = tape.gather_rows(x, &last)?;
        let last_pos: Vec<usize> = last.iter().map(|&i| rows.positions[i]).collect();
        let last_tok: Option<Vec<usize>> = rows.tokens.map(|t| last.iter().map(|&i| t[i]).collect());
        let q_rows = RowInfo {
            positions: &last_pos,
            tokens: last_tok.as_deref(),
        };
        let q = self.project_on_tape(tape, vars, Stream::Q, x_last, q_rows)?;
        let k = self.project_on_tape(tape, vars, Stream::K, x, rows)?;
        let v = self.project_on_tape(tape, vars, Stream::V, x, rows)?;
        let logits = tape.block_scores(q, k)?;
        let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
        let scores = tape.softmax(logits, Mask::Full)?;
        let output = tape.block_mix(scores, v)?;
        Ok(AttentionVars { logits, scores, output })
    }

    fn evaluate(&self, x: &Matrix, tokens: Option<&[usize]>, mode: MapMode) -> Result<(Matrix, Matrix)> {
        let positions: Vec<usize> = (1..=x.rows()).collect();
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let rows = RowInfo {
            positions: &positions,
            tokens,
        };
        let out = self.forward_on_tape(&mut tape, &vars, xv, rows, mode)?;
        Ok((tape.value(out.scores).clone(), tape.value(out.output).clone()))
    }

    /// Per-token temperatures of one stream for a sequence (positions 1..=L).
    pub fn temperatures(&self, stream: Stream, x: &Matrix, tokens: Option<&[usize]>) -> Result<Vec<f64>> {
        let positions: Vec<usize> = (1..=x.rows()).collect();
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (w, tv) = match stream {
            Stream::Q => (vars.w_q, &vars.temp_q),
            Stream::K => (vars.w_k, &vars.temp_k),
            Stream::V => (vars.w_v, &vars.temp_v),
        };
        let proj = tape.matmul(xv, w)?;
        let rows = RowInfo {
            positions: &positions,
            tokens,
        };
        Ok(match temperature_on_tape(&mut tape, self.temp(stream), tv, xv, proj, rows)? {
            Some(t) => tape.value(t).data().to_vec(),
            None => vec![1.0; x.rows()],
        })
    }
}

/// Per-token temperatures for a standalone spec (no weight sharing).
pub fn evaluate_temperatures(x: &Matrix, spec: &TemperatureSpec, tokens: Option<&[usize]>) -> Result<Vec<f64>> {
    if matches!(spec, TemperatureSpec::WeightShared { .. }) {
        return Err(Error::Usage(
            "weight-shared temperatures need a layer; use AttentionLayer::temperatures".into(),
        ));
    }
    let d = x.cols();
    let layer = AttentionLayer::new(Matrix::identity(d), Matrix::identity(d), Matrix::identity(d))?
        .with_temperature(Stream::Q, spec.clone())?;
    layer.temperatures(Stream::Q, x, tokens)
}

/// `causal_softmax((XW_q)(XW_k)ᵀ/√d)(XW_v)`, ignoring any temperatures on `layer`.
pub fn vanilla_attention(x: &Matrix, layer: &AttentionLayer) -> Result<Matrix> {
    let plain = AttentionLayer::new(layer.w_q.clone(), layer.w_k.clone(), layer.w_v.clone())?;
    Ok(plain.evaluate(x, None, MapMode::Causal)?.1)
}

/// Causal selective attention with the layer's temperatures.
pub fn selective_attention(x: &Matrix, layer: &AttentionLayer, tokens: Option<&[usize]>) -> Result<Matrix> {
    Ok(layer.evaluate(x, tokens, MapMode::Causal)?.1)
}

/// Post-softmax scores of the selective layer.
pub fn attention_map(
    x: &Matrix,
    layer: &AttentionLayer,
    tokens: Option<&[usize]>,
    mode: MapMode,
) -> Result<Matrix> {
    Ok(layer.evaluate(x, tokens, mode)?.0)
}

/// `‖s‖₁ / (‖s‖² · L)` for a probability vector; 1 for uniform, 1/L for one-hot.
pub fn spikiness(s: &[f64]) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Usage("spikiness of an empty vector".into()));
    }
    if s.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::Domain("spikiness needs non-negative entries".into()));
    }
    let l1: f64 = s.iter().sum();
    if (l1 - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("spikiness input sums to {l1}, not 1")));
    }
    let sq: f64 = s.iter().map(|x| x * x).sum();
    Ok(l1 / (sq * s.len() as f64))
}

/// `‖Wᵀq‖`.
pub fn specificity(w: &Matrix, q: &[f64]) -> Result<f64> {
    if w.rows() != q.len() {
        return Err(Error::Shape {
            op: "specificity",
            left: w.shape(),
            right: (q.len(), 1),
        });
    }
    let wtq = w.t_matmul(&Matrix::column(q))?;
    Ok(norm2(wtq.data()))
}

/// Softmax of `scores` restricted to the `keep` largest entries (ties broken
/// by lower index); the rest are exactly 0.
pub fn truncated_softmax(scores: &[f64], keep: usize) -> Result<Vec<f64>> {
    if keep == 0 || keep > scores.len() {
        return Err(Error::Domain(format!(
            "cannot keep {keep} of {} entries",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let kept = &order[..keep];
    let max = scores[kept[0]];
    let mut out = vec![0.0; scores.len()];
    let mut z = 0.0;
    for &i in kept {
        out[i] = (scores[i] - max).exp();
        z += out[i];
    }
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}
