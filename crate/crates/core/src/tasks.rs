//! Synthetic data: graph next-token sequences, the two-token mixture and
//! noisy-signal denoising, with their reference estimators.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::tensor::{dot, norm2, Matrix};
use crate::theory::{ImbalancedInstance, Token};

/// Undirected graph without stored self-loops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: Vec<Vec<bool>>,
}

impl Graph {
    pub fn new(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![vec![false; k]; k];
        for &(a, b) in edges {
            if a >= k || b >= k {
                return Err(Error::Lookup(format!("edge ({a}, {b}) outside {k} nodes")));
            }
            if a == b {
                return Err(Error::Domain(format!("self-loop at node {a}")));
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        Ok(Graph { adjacency })
    }

    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.k()).filter(|&j| self.adjacency[i][j]).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|x| **x).count()
    }

    /// `|{i} ∪ N(i)|`.
    pub fn closed_neighborhood_size(&self, i: usize) -> usize {
        self.degree(i) + 1
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k()).all(|i| (0..self.k()).all(|j| self.adjacency[i][j] == self.adjacency[j][i]))
    }

    /// Group id per node, `closed_neighborhood_size − 1`, so groups are dense
    /// when every size from 1 up is present.
    pub fn neighborhood_groups(&self) -> Vec<usize> {
        (0..self.k()).map(|i| self.degree(i)).collect()
    }
}

/// Eight nodes whose closed neighbourhoods have sizes 4 (node 0), 3 (nodes
/// 1–3), 2 (nodes 4–6) and 1 (node 7): a star on 0–3 with one pendant leaf
/// on each of 1–3, plus an isolated node.
pub fn reference_graph() -> Graph {
    Graph::new(8, &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6)]).expect("valid edges")
}

/// Row-stochastic K×K matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    p: Matrix,
}

impl TransitionMatrix {
    pub fn new(p: Matrix) -> Result<Self> {
        if p.rows() != p.cols() {
            return Err(Error::Shape {
                op: "TransitionMatrix",
                left: p.shape(),
                right: (p.rows(), p.rows()),
            });
        }
        for r in 0..p.rows() {
            let row = p.row(r);
            if row.iter().any(|x| *x < 0.0) {
                return Err(Error::Domain(format!("row {r} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("row {r} sums to {s}")));
            }
        }
        Ok(TransitionMatrix { p })
    }

    pub fn k(&self) -> usize {
        self.p.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.p.row(i)
    }

    /// Entropy of each row in nats.
    pub fn row_entropies(&self) -> Vec<f64> {
        (0..self.k())
            .map(|r| -self.row(r).iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .collect()
    }
}

/// Uniform over the closed neighbourhood of each node.
pub fn transition_matrix(g: &Graph) -> TransitionMatrix {
    let k = g.k();
    let mut p = Matrix::zeros(k, k);
    for i in 0..k {
        let w = 1.0 / g.closed_neighborhood_size(i) as f64;
        p.set(i, i, w);
        for j in g.neighbors(i) {
            p.set(i, j, w);
        }
    }
    TransitionMatrix::new(p).expect("closed-neighbourhood rows are stochastic")
}

/// Permutation sequences with next-token labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphBatch {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl GraphBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.len())
    }

    /// All tokens, sequence after sequence.
    pub fn flat_tokens(&self) -> Vec<usize> {
        self.sequences.iter().flatten().copied().collect()
    }

    /// Last token of each sequence.
    pub fn queries(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s[s.len() - 1]).collect()
    }

    /// One CSV row per token: sequence, position, token, then the label of
    /// that sequence.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sequence", "position", "token", "label"])?;
        for (s, seq) in self.sequences.iter().enumerate() {
            for (i, t) in seq.iter().enumerate() {
                w.write_record([s.to_string(), (i + 1).to_string(), t.to_string(), self.labels[s].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform random permutations of `[K]`; the label follows `P★` from the last token.
pub fn sample_graph_batch<R: Rng + ?Sized>(p_star: &TransitionMatrix, batch: usize, rng: &mut R) -> Result<GraphBatch> {
    if batch == 0 {
        return Err(Error::Usage("batch must be at least 1".into()));
    }
    let k = p_star.k();
    let rows: Vec<WeightedIndex<f64>> = (0..k)
        .map(|r| WeightedIndex::new(p_star.row(r)).map_err(|e| Error::Domain(format!("row {r}: {e}"))))
        .collect::<Result<_>>()?;
    let mut sequences = Vec::with_capacity(batch);
    let mut labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut seq: Vec<usize> = (0..k).collect();
        seq.shuffle(rng);
        labels.push(rows[seq[k - 1]].sample(rng));
        sequences.push(seq);
    }
    Ok(GraphBatch { sequences, labels })
}

/// [`sample_graph_batch`] on the stream `(seed, "graph-batch")`.
pub fn sample_graph_batch_seeded(p_star: &TransitionMatrix, batch: usize, seed: u64) -> Result<GraphBatch> {
    sample_graph_batch(p_star, batch, &mut stream(seed, "graph-batch"))
}

/// `‖P̂ − P★‖₁ / K` (entrywise).
pub fn err_map(p_hat: &Matrix, p_star: &Matrix) -> Result<f64> {
    if p_hat.shape() != p_star.shape() {
        return Err(Error::Shape {
            op: "err_map",
            left: p_hat.shape(),
            right: p_star.shape(),
        });
    }
    let l1: f64 = p_hat.data().iter().zip(p_star.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(l1 / p_star.rows() as f64)
}

/// Per-row min-max scaling to `[0, 1]`; constant rows become 0.
pub fn min_max_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for x in row.iter_mut() {
            *x = if hi > lo { (*x - lo) / (hi - lo) } else { 0.0 };
        }
    }
    out
}

/// How minority (`a`) and majority (`b`) tokens are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternSpec {
    /// `a b b` repeated `L/8` times, then `b` to the end.
    Conforming,
    /// `a b a b …`
    Alternating,
    /// One leading `a`, then `b` to the end.
    LeadingA,
    Custom(Vec<Token>),
}

impl PatternSpec {
    pub fn assignment(&self, l: usize) -> Result<Vec<Token>> {
        Ok(match self {
            PatternSpec::Conforming => {
                let mut v = Vec::with_capacity(l);
                for _ in 0..l / 8 {
                    v.extend([Token::A, Token::B, Token::B]);
                }
                v.resize(l, Token::B);
                v
            }
            PatternSpec::Alternating => (0..l).map(|i| if i % 2 == 0 { Token::A } else { Token::B }).collect(),
            PatternSpec::LeadingA => (0..l).map(|i| if i == 0 { Token::A } else { Token::B }).collect(),
            PatternSpec::Custom(v) => {
                if v.len() != l {
                    return Err(Error::Shape {
                        op: "custom pattern",
                        left: (l, 1),
                        right: (v.len(), 1),
                    });
                }
                v.clone()
            }
        })
    }
}

/// Random orthonormal pair in ℝ^d by Gram–Schmidt on Gaussian draws.
pub fn random_orthonormal_pair<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if d < 2 {
        return Err(Error::Domain("need d >= 2 for two orthonormal tokens".into()));
    }
    loop {
        let a: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let na = norm2(&a);
        if na < 1e-6 {
            continue;
        }
        let a: Vec<f64> = a.iter().map(|x| x / na).collect();
        let proj = dot(&a, &b);
        let b: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - proj * y).collect();
        let nb = norm2(&b);
        if nb < 1e-6 {
            continue;
        }
        let b = b.iter().map(|x| x / nb).collect();
        return Ok((a, b));
    }
}

/// Mixture instance of length `L` (a multiple of 8) in dimension `d`.
pub fn make_imbalanced_instance(
    l: usize,
    pattern: &PatternSpec,
    alpha_target: f64,
    d: usize,
    seed: u64,
) -> Result<ImbalancedInstance> {
    if l == 0 || !l.is_multiple_of(8) {
        return Err(Error::Domain(format!("L = {l} must be a positive multiple of 8")));
    }
    let (a, b) = random_orthonormal_pair(d, &mut stream(seed, "imbalanced-tokens"))?;
    ImbalancedInstance::new(a, b, pattern.assignment(l)?, alpha_target)
}

/// One denoising sequence: signal tokens are `e_q + z_i`, the rest pure `z_i`.
#[derive(Clone, Debug)]
pub struct DenoisingSample {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// 0-based indices of signal tokens; always contains `L − 1`.
    pub signal_set: Vec<usize>,
    pub q: usize,
    pub sigma: f64,
    pub alpha_frac: f64,
}

/// `batch` denoising sequences with `d = K`.
pub fn make_denoising_batch<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    sigma: f64,
    alpha_frac: f64,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<DenoisingSample>> {
    if !(alpha_frac > 0.0 && alpha_frac < 1.0) {
        return Err(Error::Domain(format!("alpha_frac {alpha_frac} outside (0, 1)")));
    }
    if k == 0 || l == 0 || sigma < 0.0 {
        return Err(Error::Domain("need K >= 1, L >= 1 and sigma >= 0".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let q = rng.random_range(0..k);
        let mut x = Matrix::zeros(l, k);
        let mut signal_set = Vec::new();
        for i in 0..l {
            let signal = i == l - 1 || rng.random_bool(alpha_frac);
            let row = x.row_mut(i);
            for v in row.iter_mut() {
                *v = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            if signal {
                row[q] += 1.0;
                signal_set.push(i);
            }
        }
        let mut y = vec![0.0; k];
        y[q] = 1.0;
        out.push(DenoisingSample {
            x,
            y,
            signal_set,
            q,
            sigma,
            alpha_frac,
        });
    }
    Ok(out)
}

/// Denoising batch on the stream `(seed, "denoise-batch")`.
pub fn make_denoising_batch_seeded(
    k: usize,
    l: usize,
    sigma: f64,
    alpha_frac: f64,
    batch: usize,
    seed: u64,
) -> Result<Vec<DenoisingSample>> {
    let mut rng: StreamRng = stream(seed, "denoise-batch");
    make_denoising_batch(k, l, sigma, alpha_frac, batch, &mut rng)
}

/// Mean of all tokens.
pub fn naive_average(x: &Matrix) -> Vec<f64> {
    mean_rows(x, (0..x.rows()).collect::<Vec<_>>().as_slice())
}

/// Mean of the true signal tokens.
pub fn bayes_optimal(sample: &DenoisingSample) -> Vec<f64> {
    mean_rows(&sample.x, &sample.signal_set)
}

/// Token `i` is kept iff its largest coordinate is at least ½.
pub fn threshold_mask(x: &Matrix) -> Vec<bool> {
    (0..x.rows())
        .map(|i| x.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= 0.5)
        .collect()
}

fn mean_rows(x: &Matrix, idx: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; x.cols()];
    for &i in idx {
        for (o, v) in m.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    let n = idx.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}
