//! Next-token prediction on a small graph, temperature ablations and the
//! norm / spikiness comparison.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::{
    attention_map, operator_norm, spikiness, AttentionLayer, LayerVars, MapMode, RowInfo, Stream, TemperatureSpec,
    ALPHA_INIT,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tasks::{err_map, min_max_rows, reference_graph, sample_graph_batch, transition_matrix, Graph, GraphBatch};
use crate::tensor::Matrix;
use crate::training::report::Table;
use crate::training::{Adam, AdamConfig, CurveLog, CurvePoint, ExperimentReport};

/// How the attention output becomes a next-token distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// The last query's attention weights, read as probabilities of the
    /// tokens they attend to.
    Copy,
    /// `softmax(C · output)` with a trainable K×d matrix `C`.
    Linear,
}

/// Streams that carry a temperature in an ablation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    #[serde(rename = "none")]
    None,
    Q,
    K,
    V,
    QV,
    KQV,
}

impl Placement {
    pub const ALL: [Placement; 6] = [
        Placement::None,
        Placement::Q,
        Placement::K,
        Placement::V,
        Placement::QV,
        Placement::KQV,
    ];

    pub fn streams(self) -> &'static [Stream] {
        match self {
            Placement::None => &[],
            Placement::Q => &[Stream::Q],
            Placement::K => &[Stream::K],
            Placement::V => &[Stream::V],
            Placement::QV => &[Stream::Q, Stream::V],
            Placement::KQV => &[Stream::K, Stream::Q, Stream::V],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::Q => "Q",
            Placement::K => "K",
            Placement::V => "V",
            Placement::QV => "QV",
            Placement::KQV => "KQV",
        }
    }
}

/// Temperature parameterisation of an ablation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TempParam {
    Combined,
    PositionOnly,
    TokenOnly,
    Constant,
    FeatureBased,
    WeightShared,
}

impl TempParam {
    pub const ALL: [TempParam; 6] = [
        TempParam::Combined,
        TempParam::PositionOnly,
        TempParam::TokenOnly,
        TempParam::Constant,
        TempParam::FeatureBased,
        TempParam::WeightShared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TempParam::Combined => "combined",
            TempParam::PositionOnly => "position-only",
            TempParam::TokenOnly => "token-only",
            TempParam::Constant => "constant",
            TempParam::FeatureBased => "feature-based",
            TempParam::WeightShared => "weight-shared",
        }
    }

    /// Initial spec; `frequency` is the per-token table for the feature-based form.
    pub fn spec<R: Rng + ?Sized>(self, d: usize, frequency: &[f64], rng: &mut R) -> TemperatureSpec {
        match self {
            TempParam::Combined => TemperatureSpec::combined(d, rng),
            TempParam::PositionOnly => TemperatureSpec::position_aware(ALPHA_INIT),
            TempParam::TokenOnly => TemperatureSpec::token_aware(d, rng),
            TempParam::Constant => TemperatureSpec::constant(1.0),
            TempParam::FeatureBased => TemperatureSpec::feature_based(1.0, frequency.to_vec()),
            TempParam::WeightShared => TemperatureSpec::weight_shared(d),
        }
    }
}

/// Which temperatures the model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Vanilla,
    /// One query temperature per closed-neighbourhood size.
    GroupedQuery,
    Ablation { placement: Placement, param: TempParam },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Vanilla => "vanilla".into(),
            Variant::GroupedQuery => "ssa".into(),
            Variant::Ablation { placement, param } => format!("{}/{}", placement.name(), param.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub embed_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub head: Head,
    /// Use unit-norm embedding rows in the forward pass.
    pub normalize_embeddings: bool,
    /// Sequences used for the sampled expected cross-entropy.
    pub eval_batch: usize,
    pub log_every: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            embed_dim: 3,
            steps: 20_000,
            batch: 64,
            adam: AdamConfig::default(),
            head: Head::Copy,
            normalize_embeddings: true,
            eval_batch: 2048,
            log_every: 100,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.embed_dim == 0 || self.batch == 0 || self.eval_batch == 0 {
            return Err(Error::Usage("embed_dim, batch and eval_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable pieces of the graph model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    /// K×d token embeddings.
    pub embeddings: Matrix,
    pub layer: AttentionLayer,
    /// K×d readout for [`Head::Linear`].
    pub head: Option<Matrix>,
    pub normalize_embeddings: bool,
}

/// Tape handles of a [`GraphModel`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embeddings: Var,
    pub layer: LayerVars,
    pub head: Option<Var>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embeddings];
        v.extend(self.layer.all());
        v.extend(self.head);
        v
    }
}

impl GraphModel {
    /// Initial model. Embedding rows are unit-norm Gaussian, projections and
    /// the head are N(0, 1/d); each piece has its own stream so variants
    /// share everything they have in common.
    pub fn init(graph: &Graph, config: &GraphConfig, variant: Variant, seed: u64) -> Result<Self> {
        let (k, d) = (graph.k(), config.embed_dim);
        let mut e = Matrix::random_normal(k, d, 1.0, &mut stream(seed, "graph/embeddings"));
        for r in 0..k {
            let n = crate::tensor::norm2(e.row(r));
            e.row_mut(r).iter_mut().for_each(|x| *x /= n);
        }
        let std = 1.0 / (d as f64).sqrt();
        let mut layer = AttentionLayer::random(d, std, &mut stream(seed, "graph/layer"));
        let head = match config.head {
            Head::Copy => None,
            Head::Linear => Some(Matrix::random_normal(k, d, std, &mut stream(seed, "graph/head"))),
        };
        match variant {
            Variant::Vanilla => {}
            Variant::GroupedQuery => {
                layer = layer.with_temperature(Stream::Q, TemperatureSpec::grouped(graph.neighborhood_groups()))?;
            }
            Variant::Ablation { placement, param } => {
                let frequency = vec![1.0; k];
                for &s in placement.streams() {
                    let mut rng = stream(seed, &format!("graph/temperature/{s:?}"));
                    layer = layer.with_temperature(s, param.spec(d, &frequency, &mut rng))?;
                }
            }
        }
        Ok(GraphModel {
            embeddings: e,
            layer,
            head,
            normalize_embeddings: config.normalize_embeddings,
        })
    }

    pub fn k(&self) -> usize {
        self.embeddings.rows()
    }

    /// Embeddings, layer parameters, then the head.
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut p = vec![&self.embeddings];
        p.extend(self.layer.parameters());
        p.extend(self.head.as_ref());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![&mut self.embeddings];
        p.extend(self.layer.parameters_mut());
        p.extend(self.head.as_mut());
        p
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
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
        self.vars_from(&vars).expect("parameter count matches by construction")
    }

    /// Regroups a flat list given in [`Self::parameters`] order.
    pub fn vars_from(&self, vars: &[Var]) -> Result<ModelVars> {
        let n_layer = self.layer.parameters().len();
        let expected = 1 + n_layer + usize::from(self.head.is_some());
        if vars.len() != expected {
            return Err(Error::Usage(format!("model has {expected} parameters, got {}", vars.len())));
        }
        Ok(ModelVars {
            embeddings: vars[0],
            layer: LayerVars::from_flat(&self.layer, &vars[1..1 + n_layer])?,
            head: self.head.as_ref().map(|_| vars[1 + n_layer]),
        })
    }

    fn embeddings_on_tape(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        if self.normalize_embeddings {
            tape.row_normalize(e)
        } else {
            Ok(e)
        }
    }

    /// Embeddings as used by the forward pass.
    pub fn effective_embeddings(&self) -> Result<Matrix> {
        let mut tape = Tape::new();
        let e = tape.constant(self.embeddings.clone());
        let e = self.embeddings_on_tape(&mut tape, e)?;
        Ok(tape.value(e).clone())
    }

    /// Log-probabilities for each sequence (B rows) and, per sequence, the
    /// column holding each token.
    pub fn log_probs_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        batch: &GraphBatch,
    ) -> Result<(Var, Vec<Vec<usize>>)> {
        let l = batch.seq_len();
        let tokens = batch.flat_tokens();
        let positions: Vec<usize> = (0..tokens.len()).map(|i| i % l + 1).collect();
        let e = self.embeddings_on_tape(tape, vars.embeddings)?;
        let x = tape.gather_rows(e, &tokens)?;
        let rows = RowInfo {
            positions: &positions,
            tokens: Some(&tokens),
        };
        let att = self.layer.last_query_on_tape(tape, &vars.layer, x, l, rows)?;
        match vars.head {
            None => {
                let cols = batch
                    .sequences
                    .iter()
                    .map(|seq| {
                        let mut col = vec![0; self.k()];
                        for (i, &t) in seq.iter().enumerate() {
                            col[t] = i;
                        }
                        col
                    })
                    .collect();
                // log_softmax of the logits stays exact where softmax underflows
                let logp = tape.log_softmax(att.logits)?;
                Ok((logp, cols))
            }
            Some(c) => {
                let ct = tape.transpose(c)?;
                let logits = tape.matmul(att.output, ct)?;
                let logp = tape.log_softmax(logits)?;
                Ok((logp, vec![(0..self.k()).collect(); batch.len()]))
            }
        }
    }

    /// Mean cross-entropy of the batch labels.
    pub fn loss_on_tape(&self, tape: &mut Tape, vars: &ModelVars, batch: &GraphBatch) -> Result<Var> {
        let (logp, cols) = self.log_probs_on_tape(tape, vars, batch)?;
        let idx: Vec<(usize, usize)> = batch.labels.iter().enumerate().map(|(b, &y)| (b, cols[b][y])).collect();
        let picked = tape.select(logp, &idx)?;
        let mean = tape.mean(picked)?;
        tape.scale(mean, -1.0)
    }

    /// Cross-entropy against the full next-token distribution of each
    /// sequence's last token, averaged over the batch.
    pub fn expected_cross_entropy(&self, batch: &GraphBatch, p_star: &Matrix) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (logp, cols) = self.log_probs_on_tape(&mut tape, &vars, batch)?;
        let lp = tape.value(logp);
        let mut total = 0.0;
        for (b, q) in batch.queries().into_iter().enumerate() {
            for (y, &p) in p_star.row(q).iter().enumerate() {
                if p > 0.0 {
                    total -= p * lp.get(b, cols[b][y]);
                }
            }
        }
        Ok(total / batch.len() as f64)
    }

    /// Attention map over the vocabulary in identity order, every row seeing every column.
    pub fn vocab_map(&self) -> Result<Matrix> {
        let tokens: Vec<usize> = (0..self.k()).collect();
        attention_map(&self.effective_embeddings()?, &self.layer, Some(&tokens), MapMode::FullSquare)
    }

    /// `W_q W_kᵀ`.
    pub fn combined_weight(&self) -> Result<Matrix> {
        self.layer.w_q.matmul_t(&self.layer.w_k)
    }

    /// Whether the next-token distribution depends only on the last token.
    pub fn is_position_free(&self) -> bool {
        self.head.is_none()
            && !(self.layer.temp_q.uses_position() || self.layer.temp_k.uses_position() || self.layer.temp_v.uses_position())
    }
}

/// One trained model with its summary numbers.
#[derive(Clone, Debug)]
pub struct GraphRun {
    pub variant: Variant,
    pub model: GraphModel,
    pub p_hat: Matrix,
    pub curve: Vec<CurvePoint>,
    pub metrics: BTreeMap<String, f64>,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl GraphRun {
    pub fn get(&self, name: &str) -> Result<f64> {
        self.metrics
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("run has no metric `{name}`")))
    }

    fn record_into(&self, report: &mut ExperimentReport, prefix: &str) {
        for (k, v) in &self.metrics {
            report.metric(format!("{prefix}.{k}"), *v);
        }
        for (k, v) in &self.arrays {
            report.arrays.insert(format!("{prefix}.{k}"), v.clone());
        }
        report.curves.insert(format!("{prefix}.loss"), self.curve.clone());
        report.matrices.insert(format!("{prefix}.p_hat"), self.p_hat.clone());
        report
            .matrices
            .insert(format!("{prefix}.p_hat_normalized"), min_max_rows(&self.p_hat));
    }
}

/// Trains one variant on the reference graph.
pub fn train_graph(config: &GraphConfig, variant: Variant, seed: u64) -> Result<GraphRun> {
    config.validate()?;
    let graph = reference_graph();
    let p_star = transition_matrix(&graph);
    let mut model = GraphModel::init(&graph, config, variant, seed)?;
    let mut adam = Adam::new(config.adam, &model.parameters());
    let mut data = stream(seed, "graph/data");
    let mut log = CurveLog::new(config.log_every, config.steps);
    for step in 0..config.steps {
        let batch = sample_graph_batch(&p_star, config.batch, &mut data)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let loss = model.loss_on_tape(&mut tape, &vars, &batch)?;
        log.record(step, tape.scalar(loss))?;
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
        adam.step(&mut model.parameters_mut(), &g, step)?;
    }
    summarize(model, variant, log.points, &graph, p_star.matrix(), config, seed)
}

fn summarize(
    model: GraphModel,
    variant: Variant,
    curve: Vec<CurvePoint>,
    graph: &Graph,
    p_star: &Matrix,
    config: &GraphConfig,
    seed: u64,
) -> Result<GraphRun> {
    let k = graph.k();
    let mut metrics = BTreeMap::new();
    let mut arrays = BTreeMap::new();
    let p_hat = model.vocab_map()?;

    let entropy: f64 = (0..k)
        .map(|q| -p_star.row(q).iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        .sum::<f64>()
        / k as f64;
    let eval = sample_graph_batch(&transition_matrix(graph), config.eval_batch, &mut stream(seed, "graph/eval"))?;
    let sampled_ce = model.expected_cross_entropy(&eval, p_star)?;
    let ce = if model.is_position_free() {
        let mut total = 0.0;
        for q in 0..k {
            for (y, &p) in p_star.row(q).iter().enumerate() {
                if p > 0.0 {
                    total -= p * p_hat.get(q, y).ln();
                }
            }
        }
        total / k as f64
    } else {
        sampled_ce
    };
    metrics.insert("ce".into(), ce);
    metrics.insert("ce_sampled".into(), sampled_ce);
    metrics.insert("ce_floor".into(), entropy);
    metrics.insert("excess_ce".into(), ce - entropy);
    metrics.insert("final_loss".into(), curve.last().map_or(f64::NAN, |p| p.value));
    metrics.insert("err_map".into(), err_map(&p_hat, p_star)?);

    let w = model.combined_weight()?;
    let w_norm = operator_norm(&w)?;
    metrics.insert("w_norm".into(), w_norm);
    let spikes = (0..k).map(|r| spikiness(p_hat.row(r))).collect::<Result<Vec<f64>>>()?;
    metrics.insert("spikiness".into(), spikes.iter().sum::<f64>() / k as f64);
    arrays.insert("spikiness_rows".into(), spikes);

    let e = model.effective_embeddings()?;
    let tokens: Vec<usize> = (0..k).collect();
    for s in [Stream::Q, Stream::K, Stream::V] {
        if !model.layer.temp(s).is_identity() {
            let tau = model.layer.temperatures(s, &e, Some(&tokens))?;
            if s == Stream::Q {
                let eff: Vec<f64> = tau.iter().map(|t| t.abs() * w_norm).collect();
                metrics.insert("max_effective_norm".into(), eff.iter().cloned().fold(0.0, f64::max));
                arrays.insert("effective_norm_q".into(), eff);
            }
            arrays.insert(format!("tau_{}", format!("{s:?}").to_lowercase()), tau);
        }
    }
    if let TemperatureSpec::Grouped { log_tau, .. } = &model.layer.temp_q {
        let tau: Vec<f64> = log_tau.data().iter().map(|t| t.exp()).collect();
        arrays.insert("group_temperature".into(), tau.iter().map(|t| 1.0 / t).collect());
        arrays.insert("group_tau".into(), tau);
        let sizes: Vec<f64> = (1..=log_tau.rows()).map(|s| s as f64).collect();
        arrays.insert("group_neighbourhood_size".into(), sizes);
    }

    Ok(GraphRun {
        variant,
        model,
        p_hat,
        curve,
        metrics,
        arrays,
    })
}

/// Whether `v` is strictly increasing.
pub fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Vanilla and grouped-query models trained on the same data.
pub fn graph_experiment(config: &GraphConfig, seed: u64) -> Result<(ExperimentReport, GraphRun, GraphRun)> {
    let vanilla = train_graph(config, Variant::Vanilla, seed)?;
    let ssa = train_graph(config, Variant::GroupedQuery, seed)?;
    let mut report = ExperimentReport::new("graph", seed, config)?;
    vanilla.record_into(&mut report, "vanilla");
    ssa.record_into(&mut report, "ssa");
    report
        .matrices
        .insert("p_star".into(), transition_matrix(&reference_graph()).matrix().clone());
    for m in ["ce", "excess_ce", "err_map", "w_norm", "spikiness"] {
        report.metric(format!("ratio.{m}"), ssa.get(m)? / vanilla.get(m)?);
    }
    let monotone = ssa
        .arrays
        .get("group_temperature")
        .is_some_and(|t| strictly_increasing(t));
    report.metric("ssa.group_temperature_monotone", f64::from(u8::from(monotone)));
    Ok((report, vanilla, ssa))
}

/// Operator norm of `W_q W_kᵀ` and mean spikiness of the vocabulary map for both models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpikiness {
    pub vanilla_norm: f64,
    pub ssa_norm: f64,
    pub vanilla_spikiness: f64,
    pub ssa_spikiness: f64,
    pub ssa_max_effective_norm: f64,
    pub ssa_max_tau: f64,
}

pub fn norm_spikiness_study(vanilla: &GraphRun, ssa: &GraphRun) -> Result<NormSpikiness> {
    let tau = ssa.arrays.get("tau_q").cloned().unwrap_or_else(|| vec![1.0]);
    Ok(NormSpikiness {
        vanilla_norm: vanilla.get("w_norm")?,
        ssa_norm: ssa.get("w_norm")?,
        vanilla_spikiness: vanilla.get("spikiness")?,
        ssa_spikiness: ssa.get("spikiness")?,
        ssa_max_effective_norm: ssa.metrics.get("max_effective_norm").copied().unwrap_or(ssa.get("w_norm")?),
        ssa_max_tau: tau.iter().map(|t| t.abs()).fold(0.0, f64::max),
    })
}

/// Trains both graph models and reports only the norm / spikiness comparison.
pub fn norm_study_experiment(config: &GraphConfig, seed: u64) -> Result<ExperimentReport> {
    let (_, vanilla, ssa) = graph_experiment(config, seed)?;
    let s = norm_spikiness_study(&vanilla, &ssa)?;
    let mut report = ExperimentReport::new("norm-study", seed, config)?;
    report.metric("vanilla.w_norm", s.vanilla_norm);
    report.metric("ssa.w_norm", s.ssa_norm);
    report.metric("vanilla.spikiness", s.vanilla_spikiness);
    report.metric("ssa.spikiness", s.ssa_spikiness);
    report.metric("ssa.max_tau", s.ssa_max_tau);
    report.metric("ssa.max_effective_norm", s.ssa_max_effective_norm);
    report.metric("ratio.w_norm", s.ssa_norm / s.vanilla_norm);
    report.metric("ratio.spikiness", s.ssa_spikiness / s.vanilla_spikiness);
    report.check(
        "effective_norm_bounded",
        s.ssa_max_effective_norm <= s.ssa_max_tau * s.ssa_norm * (1.0 + 1e-12),
    );
    report.curves.insert("vanilla.loss".into(), vanilla.curve);
    report.curves.insert("ssa.loss".into(), ssa.curve);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub graph: GraphConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            graph: GraphConfig {
                head: Head::Linear,
                steps: 5000,
                ..GraphConfig::default()
            },
        }
    }
}

/// Every placement × parameterisation cell; the `none` placement is trained
/// once and shared by all parameterisations.
pub fn ablation(config: &AblationConfig, seed: u64, threads: usize) -> Result<ExperimentReport> {
    let mut cells = vec![Variant::Vanilla];
    for placement in &Placement::ALL[1..] {
        for param in TempParam::ALL {
            cells.push(Variant::Ablation {
                placement: *placement,
                param,
            });
        }
    }
    let runs = run_parallel(&cells, threads, |v| train_graph(&config.graph, *v, seed))?;

    let mut report = ExperimentReport::new("ablate", seed, config)?;
    let columns = [
        "placement",
        "parameterization",
        "ce",
        "excess_ce",
        "err_map",
        "w_norm",
        "spikiness",
        "final_loss",
    ];
    let mut table = Table::new(columns);
    let row = |placement: Placement, param: TempParam, run: &GraphRun| -> Result<Vec<Value>> {
        let mut r = vec![Value::from(placement.name()), Value::from(param.name())];
        for m in &columns[2..] {
            r.push(Value::from(run.get(m)?));
        }
        Ok(r)
    };
    let baseline = &runs[0];
    for param in TempParam::ALL {
        table.push(row(Placement::None, param, baseline)?)?;
    }
    for (cell, run) in cells.iter().zip(&runs).skip(1) {
        if let Variant::Ablation { placement, param } = cell {
            table.push(row(*placement, *param, run)?)?;
            report.metric(format!("{}.{}.ce", placement.name(), param.name()), run.get("ce")?);
        }
    }
    report.metric("none.ce", baseline.get("ce")?);
    report.tables.insert("ablation".into(), table);
    Ok(report)
}

/// Runs `f` on each item with at most `threads` workers; results keep input order.
pub fn run_parallel<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
