//! Closed-form bounds and constructions for temperature-scaled attention.
//!
//! * norm lower bound for a fixed-weight map that separates two token counts
//! * two-token approximation bounds, with and without per-query temperature
//! * the imbalanced-mixture task: optimal position temperatures, the optimal
//!   weight construction, and the flat-temperature risk floor
//! * the temperature / top-k sparsity equivalence under power-law scores

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{least_norm_solve, operator_norm};
use crate::tensor::{dot, norm2, Matrix};
use crate::training::{Adam, AdamConfig};

/// `(L_a − L_b) / ‖a − b‖`.
pub fn norm_lower_bound(l_a: f64, l_b: f64, a: &[f64], b: &[f64]) -> Result<f64> {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d = norm2(&diff);
    if a.len() != b.len() || d == 0.0 {
        return Err(Error::Domain("norm bound needs two distinct vectors of equal length".into()));
    }
    Ok((l_a - l_b) / d)
}

/// `Γ = |ln((1 − γ)/γ)|`.
pub fn gamma_gap(gamma: f64) -> f64 {
    ((1.0 - gamma) / gamma).ln().abs()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The two-token approximation problem: unit embeddings `e1, e2` with
/// correlation `rho` and target map `[[1−γ, γ], [0, 1]]` to accuracy `eps`
/// (largest entrywise error).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoTokenProblem {
    pub gamma: f64,
    pub rho: f64,
    pub eps: f64,
}

/// A weight matrix (and per-query temperatures, for the selective case)
/// reaching the target map.
#[derive(Clone, Debug, Serialize)]
pub struct TwoTokenSolution {
    pub w: Matrix,
    pub taus: [f64; 2],
    /// `max_i |τ_i| · ‖W‖`.
    pub effective_norm: f64,
    pub error: f64,
    pub steps: usize,
}

impl TwoTokenProblem {
    pub fn new(gamma: f64, rho: f64, eps: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("gamma {gamma} outside (0, 1)")));
        }
        if rho.abs() >= 1.0 {
            return Err(Error::Domain(format!("|rho| = {} makes the embeddings degenerate", rho.abs())));
        }
        if !(eps > 0.0 && eps <= 0.5 * gamma.min(1.0 - gamma)) {
            return Err(Error::Domain(format!(
                "eps {eps} outside (0, min(gamma, 1-gamma)/2]"
            )));
        }
        Ok(TwoTokenProblem { gamma, rho, eps })
    }

    /// `e2 = (1, 0)`, `e1 = (ρ, √(1−ρ²))`.
    pub fn embeddings(&self) -> Matrix {
        let s = (1.0 - self.rho * self.rho).sqrt();
        Matrix::from_rows(&[[self.rho, s], [1.0, 0.0]]).expect("2x2")
    }

    pub fn target(&self) -> Matrix {
        Matrix::from_rows(&[[1.0 - self.gamma, self.gamma], [0.0, 1.0]]).expect("2x2")
    }

    fn diff_norm(&self) -> f64 {
        (2.0 - 2.0 * self.rho).sqrt()
    }

    /// Norm every plain `W` reaching the target must exceed.
    pub fn lower_bound(&self) -> f64 {
        (1.0 / self.diff_norm()) / (2.0 - 2.0 * self.rho * self.rho).sqrt()
            * ((1.0 / (4.0 * self.eps)).ln() - gamma_gap(self.gamma))
    }

    /// Claimed attainable effective norm with per-query temperature.
    pub fn upper_bound(&self) -> f64 {
        (1.0 / self.diff_norm())
            * (1.0 / self.eps).ln().max(gamma_gap(self.gamma) / (1.0 - self.rho * self.rho).sqrt())
    }

    /// Largest entrywise error of `softmax(diag(τ) E W Eᵀ)` against the target.
    pub fn error_of(&self, w: &Matrix, taus: [f64; 2]) -> Result<f64> {
        let e = self.embeddings();
        let logits = e.matmul(w)?.matmul_t(&e)?.row_scaled(&taus)?;
        let p = softmax_rows(&logits, Mask::Full);
        Ok(p.max_abs_diff(&self.target()))
    }

    /// Feasible logit gaps: row 1 `e1ᵀW(e1−e2) ∈ [lo, hi]`, row 2 `e2ᵀW(e2−e1) ≥ ell`.
    /// A hair inside the ε window so rounding cannot push the error over.
    fn gap_window(&self) -> (f64, f64, f64) {
        let eps = self.eps * (1.0 - 1e-9);
        let lo = logit(1.0 - self.gamma - eps);
        let hi = logit(1.0 - self.gamma + eps);
        (lo, hi, logit(1.0 - eps))
    }

    /// Smallest `‖W‖` of any plain (τ ≡ 1) solution.
    ///
    /// Only `z = W(e1 − e2)` enters the map, and the cheapest `W` with a given
    /// `z` has norm `‖z‖/‖e1 − e2‖`; the feasible `z` form a convex polygon
    /// whose closest point to the origin is found among the edge projections
    /// and vertices.
    pub fn min_plain_norm(&self) -> f64 {
        let (lo, hi, ell) = self.gap_window();
        let e = self.embeddings();
        let (e1, e2) = (e.row(0).to_vec(), e.row(1).to_vec());
        let feasible = |z: &[f64]| {
            let g1 = dot(&e1, z);
            let g2 = -dot(&e2, z);
            g1 >= lo - 1e-12 && g1 <= hi + 1e-12 && g2 >= ell - 1e-12
        };
        let mut candidates: Vec<Vec<f64>> = vec![
            vec![-ell * e2[0], -ell * e2[1]],
            vec![lo * e1[0], lo * e1[1]],
            vec![hi * e1[0], hi * e1[1]],
        ];
        for g1 in [lo, hi] {
            // e1·z = g1, e2·z = −ell
            let det = e1[0] * e2[1] - e1[1] * e2[0];
            let z0 = (g1 * e2[1] - e1[1] * (-ell)) / det;
            let z1 = (e1[0] * (-ell) - g1 * e2[0]) / det;
            candidates.push(vec![z0, z1]);
        }
        candidates
            .iter()
            .filter(|z| feasible(z))
            .map(|z| norm2(z))
            .fold(f64::INFINITY, f64::min)
            / self.diff_norm()
    }

    /// Fits a plain `W` from zero with Adam on the row cross-entropies and
    /// stops at the first iterate within `eps` of the target.
    pub fn fit_plain(&self, lr: f64, max_steps: usize) -> Result<TwoTokenSolution> {
        let e = self.embeddings();
        let target = self.target();
        let mut w = Matrix::zeros(2, 2);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: lr,
                ..AdamConfig::default()
            },
            &[&w],
        );
        for step in 0..=max_steps {
            let error = self.error_of(&w, [1.0, 1.0])?;
            if error <= self.eps {
                return Ok(TwoTokenSolution {
                    effective_norm: operator_norm(&w)?,
                    w,
                    taus: [1.0, 1.0],
                    error,
                    steps: step,
                });
            }
            if step == max_steps {
                break;
            }
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let ev = tape.constant(e.clone());
            let et = tape.constant(e.transpose());
            let ew = tape.matmul(ev, wv)?;
            let logits = tape.matmul(ew, et)?;
            let logp = tape.log_softmax(logits)?;
            let weights = tape.constant(target.clone());
            let prod = tape.mul(logp, weights)?;
            let total = tape.sum(prod)?;
            let loss = tape.scale(total, -1.0)?;
            let g = tape.backward(loss)?.wrt(wv);
            adam.step(&mut [&mut w], &[g], step)?;
        }
        Err(Error::Numeric(format!(
            "plain fit did not reach eps = {} within {max_steps} steps",
            self.eps
        )))
    }

    /// Cheapest selective solution of the form `W = w (e1−e2)ᵀ/‖e1−e2‖²`
    /// with per-query temperatures, minimising `max_i |τ_i| ‖W‖` over the
    /// direction of the unit vector `w`.
    pub fn best_selective(&self) -> Result<TwoTokenSolution> {
        let (lo, hi, ell) = self.gap_window();
        let g1 = if lo > 0.0 {
            lo
        } else if hi < 0.0 {
            hi
        } else {
            0.0
        };
        let e = self.embeddings();
        let (e1, e2) = (e.row(0).to_vec(), e.row(1).to_vec());
        let u = [e1[0] - e2[0], e1[1] - e2[1]];
        let un = norm2(&u);
        let cost = |theta: f64| {
            let w = [theta.cos(), theta.sin()];
            let c1 = dot(&e1, &w).abs();
            let c2 = dot(&e2, &w).abs();
            let t1 = if g1 == 0.0 { 0.0 } else { g1.abs() / c1 };
            (t1.max(ell / c2)) / un
        };

        let n = 20_000;
        let step = std::f64::consts::PI / n as f64;
        let best = (0..n)
            .map(|i| i as f64 * step)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .expect("non-empty grid");
        let theta = golden_min(cost, best - step, best + step, 200);

        let w = [theta.cos(), theta.sin()];
        let mut wm = Matrix::zeros(2, 2);
        for r in 0..2 {
            for c in 0..2 {
                wm.set(r, c, w[r] * u[c] / (un * un));
            }
        }
        let tau1 = g1 / dot(&e1, &w);
        let tau2 = -ell / dot(&e2, &w);
        let norm_w = operator_norm(&wm)?;
        let taus = [tau1, tau2];
        Ok(TwoTokenSolution {
            error: self.error_of(&wm, taus)?,
            effective_norm: tau1.abs().max(tau2.abs()) * norm_w,
            w: wm,
            taus,
            steps: 0,
        })
    }
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

/// Lower bound for arbitrary unit `e1, e2`; `ρ = e1·e2`.
pub fn approx_lower_bound(eps: f64, gamma: f64, e1: &[f64], e2: &[f64]) -> Result<f64> {
    Ok(TwoTokenProblem::new(gamma, unit_correlation(e1, e2)?, eps)?.lower_bound())
}

/// Upper bound for arbitrary unit `e1, e2`; `ρ = e1·e2`.
pub fn approx_upper_bound(eps: f64, gamma: f64, e1: &[f64], e2: &[f64]) -> Result<f64> {
    Ok(TwoTokenProblem::new(gamma, unit_correlation(e1, e2)?, eps)?.upper_bound())
}

fn unit_correlation(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::Shape {
            op: "embedding correlation",
            left: (e1.len(), 1),
            right: (e2.len(), 1),
        });
    }
    for e in [e1, e2] {
        if (norm2(e) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("embeddings must have unit norm".into()));
        }
    }
    Ok(dot(e1, e2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    A,
    B,
}

/// Two-token mixture sequence: minority `a`, majority `b`, target
/// `y = α a + (1 − α) b` at every position from the burn-in `n0` on.
#[derive(Clone, Debug, Serialize)]
pub struct ImbalancedInstance {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub assignment: Vec<Token>,
    pub alpha_target: f64,
    /// 1-based first position where both tokens have appeared.
    pub n0: usize,
    /// `κ_n = (n − n_a)/n_a` for 1-based `n` (index `n − 1`); infinite while `n_a = 0`.
    pub kappa: Vec<f64>,
}

impl ImbalancedInstance {
    pub fn new(a: Vec<f64>, b: Vec<f64>, assignment: Vec<Token>, alpha_target: f64) -> Result<Self> {
        if a.len() != b.len() || a.len() < 2 {
            return Err(Error::Shape {
                op: "imbalanced instance",
                left: (a.len(), 1),
                right: (b.len(), 1),
            });
        }
        let rho = unit_correlation(&a, &b)?;
        if rho.abs() > 1.0 - 1e-12 {
            return Err(Error::Domain("a and b must be linearly independent".into()));
        }
        if !(alpha_target > 0.0 && alpha_target < 1.0) {
            return Err(Error::Domain(format!("alpha {alpha_target} outside (0, 1)")));
        }
        let kappa = kappa_of(&assignment);
        let n0 = first_mixed(&assignment)
            .ok_or_else(|| Error::Domain("assignment never contains both tokens".into()))?;
        Ok(ImbalancedInstance {
            a,
            b,
            assignment,
            alpha_target,
            n0,
            kappa,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Token embeddings as rows (L×d).
    pub fn x(&self) -> Matrix {
        let rows: Vec<&[f64]> = self
            .assignment
            .iter()
            .map(|t| match t {
                Token::A => self.a.as_slice(),
                Token::B => self.b.as_slice(),
            })
            .collect();
        Matrix::from_rows(&rows).expect("equal lengths")
    }

    pub fn y(&self) -> Vec<f64> {
        let al = self.alpha_target;
        self.a.iter().zip(&self.b).map(|(a, b)| al * a + (1.0 - al) * b).collect()
    }

    /// `κ_n` at 1-based position `n`.
    pub fn kappa_at(&self, n: usize) -> f64 {
        self.kappa[n - 1]
    }

    /// Checks the counting conditions the flat-temperature floor relies on:
    /// `α = ½`, orthonormal tokens, at least `L/8` b-queries in `[n0, L/2]`
    /// with `1 ≤ κ_n ≤ 2`, and at least `L/5` b-queries after `L/2` with
    /// `κ_n ≥ 4`.
    pub fn check_conforming(&self) -> Result<()> {
        let l = self.len();
        if (self.alpha_target - 0.5).abs() > 1e-12 {
            return Err(Error::Precondition(format!("alpha must be 1/2, got {}", self.alpha_target)));
        }
        if dot(&self.a, &self.b).abs() > 1e-9 {
            return Err(Error::Precondition("a and b must be orthogonal".into()));
        }
        let mut mid = 0usize;
        let mut late = 0usize;
        for n in self.n0..=l {
            if self.assignment[n - 1] != Token::B {
                continue;
            }
            let k = self.kappa_at(n);
            if 2 * n <= l && (1.0..=2.0).contains(&k) {
                mid += 1;
            }
            if 2 * n > l && k >= 4.0 {
                late += 1;
            }
        }
        if 8 * mid < l {
            return Err(Error::Precondition(format!(
                "{mid} b-queries with 1 <= kappa <= 2 in the first half; need L/8 = {}",
                l as f64 / 8.0
            )));
        }
        if 5 * late < l {
            return Err(Error::Precondition(format!(
                "{late} b-queries with kappa >= 4 in the second half; need L/5 = {}",
                l as f64 / 5.0
            )));
        }
        Ok(())
    }
}

/// `κ_n` for every prefix; infinite while no `a` has appeared.
pub fn kappa_of(assignment: &[Token]) -> Vec<f64> {
    let mut n_a = 0usize;
    assignment
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if *t == Token::A {
                n_a += 1;
            }
            let n = i + 1;
            if n_a == 0 {
                f64::INFINITY
            } else {
                (n - n_a) as f64 / n_a as f64
            }
        })
        .collect()
}

fn first_mixed(assignment: &[Token]) -> Option<usize> {
    let mut seen_a = false;
    let mut seen_b = false;
    for (i, t) in assignment.iter().enumerate() {
        match t {
            Token::A => seen_a = true,
            Token::B => seen_b = true,
        }
        if seen_a && seen_b {
            return Some(i + 1);
        }
    }
    None
}

/// `ln κ + ln(α/(1−α))`.
pub fn optimal_position_temperature(kappa: f64, alpha: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa must be positive and finite, got {kappa}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(kappa.ln() + (alpha / (1.0 - alpha)).ln())
}

/// Optimal temperature at every position from `n0` on; positions before the
/// burn-in do not enter the risk and get 0.
pub fn optimal_temperatures(inst: &ImbalancedInstance) -> Result<Vec<f64>> {
    (1..=inst.len())
        .map(|n| {
            if n < inst.n0 {
                Ok(0.0)
            } else {
                optimal_position_temperature(inst.kappa_at(n), inst.alpha_target)
            }
        })
        .collect()
}

/// Least-norm `W` with `bᵀW = 0`, `aᵀWa = 1`, `aᵀWb = 1`.
///
/// With scores `x_iᵀ W x_n` every query then gives logit 1 to `a` keys and 0
/// to `b` keys.
#[allow(non_snake_case)]
pub fn construct_optimal_W(a: &[f64], b: &[f64]) -> Result<Matrix> {
    let d = a.len();
    if b.len() != d || d < 2 {
        return Err(Error::Shape {
            op: "construct_optimal_W",
            left: (d, 1),
            right: (b.len(), 1),
        });
    }
    let cos = dot(a, b) / (norm2(a) * norm2(b));
    if !(cos.abs() < 1.0 - 1e-12) {
        return Err(Error::Domain("a and b are parallel; the constraints are rank deficient".into()));
    }
    let mut rows = Vec::with_capacity(d + 2);
    for j in 0..d {
        let mut r = vec![0.0; d * d];
        for i in 0..d {
            r[i * d + j] = b[i];
        }
        rows.push(r);
    }
    let mut raa = vec![0.0; d * d];
    let mut rab = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            raa[i * d + j] = a[i] * a[j];
            rab[i * d + j] = a[i] * b[j];
        }
    }
    rows.push(raa);
    rows.push(rab);
    let system = Matrix::from_rows(&rows)?;
    let mut rhs = vec![0.0; d];
    rhs.extend([1.0, 1.0]);
    let w = least_norm_solve(&system, &rhs).map_err(|_| Error::Domain("constraints are rank deficient".into()))?;
    Matrix::new(d, d, w)
}

/// Largest violation of the three defining constraints.
#[allow(non_snake_case)]
pub fn optimal_W_residual(w: &Matrix, a: &[f64], b: &[f64]) -> Result<f64> {
    let bt_w = Matrix::row_vector(b).matmul(w)?;
    let at_w = Matrix::row_vector(a).matmul(w)?;
    let aa = dot(at_w.data(), a) - 1.0;
    let ab = dot(at_w.data(), b) - 1.0;
    Ok(bt_w.max_abs().max(aa.abs()).max(ab.abs()))
}

/// Records the mixture risk on a tape.
///
/// Scores are `x_iᵀ W x_n` (key `i`, query `n`), scaled per query by `τ_n`,
/// causally normalised; the risk averages `‖y − Xᵀ s_n‖²` over `n ≥ n0` and
/// divides by `L`.
pub fn imbalanced_risk_on_tape(tape: &mut Tape, w: Var, taus: Var, inst: &ImbalancedInstance) -> Result<Var> {
    let l = inst.len();
    let x = inst.x();
    let xv = tape.constant(x.clone());
    let xt = tape.constant(x.transpose());
    let wt = tape.transpose(w)?;
    let xw = tape.matmul(xv, wt)?;
    let scores = tape.matmul(xw, xt)?;
    let scaled = tape.row_scale(scores, taus)?;
    let s = tape.causal_softmax(scaled)?;
    let out = tape.matmul(s, xv)?;
    let y = inst.y();
    let ym = Matrix::from_rows(&vec![y; l])?;
    let yv = tape.constant(ym);
    let diff = tape.sub(out, yv)?;
    let keep: Vec<f64> = (1..=l).map(|n| if n >= inst.n0 { 1.0 } else { 0.0 }).collect();
    let keep = tape.constant(Matrix::column(&keep));
    let diff = tape.row_scale(diff, keep)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / l as f64)
}

pub fn imbalanced_risk(w: &Matrix, inst: &ImbalancedInstance, temps: &[f64]) -> Result<f64> {
    if temps.len() != inst.len() {
        return Err(Error::Shape {
            op: "imbalanced_risk temperatures",
            left: (inst.len(), 1),
            right: (temps.len(), 1),
        });
    }
    let mut tape = Tape::new();
    let wv = tape.constant(w.clone());
    let tv = tape.constant(Matrix::column(temps));
    let r = imbalanced_risk_on_tape(&mut tape, wv, tv, inst)?;
    Ok(tape.scalar(r))
}

/// Risk floor claimed for any flat-temperature model.
pub const FLAT_RISK_FLOOR: f64 = 0.002;

/// The flat-temperature risk bound as a function of the single free ratio `M`.
///
/// With `τ ≡ 1` every `b` query puts weight `1/(1 + M κ_n)` on `a`, where `M`
/// is the same for all of them; each such query costs `2(½ − 1/(1 + M κ_n))²`.
pub fn flat_risk_at(inst: &ImbalancedInstance, m: f64) -> f64 {
    let mut total = 0.0;
    for n in inst.n0..=inst.len() {
        if inst.assignment[n - 1] == Token::B {
            let p = 1.0 / (1.0 + m * inst.kappa_at(n));
            total += 2.0 * (0.5 - p) * (0.5 - p);
        }
    }
    total / inst.len() as f64
}

/// Minimum of [`flat_risk_at`] over `M` on a 1000-point log grid in
/// `[1e-3, 1e3]`, refined by golden section around the best grid point.
pub fn flat_temperature_floor(inst: &ImbalancedInstance) -> Result<f64> {
    inst.check_conforming()?;
    let grid: Vec<f64> = (0..1000).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 999.0)).collect();
    let (best_i, best) = grid
        .iter()
        .enumerate()
        .map(|(i, m)| (i, flat_risk_at(inst, *m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let lo = grid[best_i.saturating_sub(1)].ln();
    let hi = grid[(best_i + 1).min(grid.len() - 1)].ln();
    let m = golden_min(|t| flat_risk_at(inst, t.exp()), lo, hi, 100).exp();
    Ok(best.min(flat_risk_at(inst, m)))
}

/// Power-law relevance scores: `n^{1−pow}` salient entries score `c + γ`,
/// the rest `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawScores {
    pub n: usize,
    pub pow: f64,
    pub gamma: f64,
    pub c: f64,
}

impl PowerLawScores {
    pub fn new(n: usize, pow: f64, gamma: f64, c: f64) -> Result<Self> {
        check_power_law(n, pow, gamma)?;
        Ok(PowerLawScores { n, pow, gamma, c })
    }

    /// `round(n^{1−pow})`, at least 1.
    pub fn salient_count(&self) -> usize {
        ((self.n as f64).powf(1.0 - self.pow).round() as usize).clamp(1, self.n)
    }

    pub fn scores(&self) -> Vec<f64> {
        let s = self.salient_count();
        (0..self.n)
            .map(|i| if i < s { self.c + self.gamma } else { self.c })
            .collect()
    }
}

fn check_power_law(n: usize, pow: f64, gamma: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!("n must be at least 2, got {n}")));
    }
    if !(pow > 0.0) {
        return Err(Error::Domain(format!("pow must be positive, got {pow}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// Fraction of entries a top-k truncation must keep to match the top entry of
/// a softmax at inverse temperature `tau`:
/// `κ = (1 − n^{−pow}) e^{−γ(τ−1)} + n^{−pow}`.
pub fn sparsity_for_temperature(tau: f64, n: usize, pow: f64, gamma: f64) -> Result<f64> {
    check_power_law(n, pow, gamma)?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let f = (n as f64).powf(-pow);
    Ok((1.0 - f) * (-gamma * (tau - 1.0)).exp() + f)
}

/// Inverse of [`sparsity_for_temperature`].
pub fn temperature_for_sparsity(kappa: f64, n: usize, pow: f64, gamma: f64) -> Result<f64> {
    check_power_law(n, pow, gamma)?;
    let f = (n as f64).powf(-pow);
    if !(kappa > f) {
        return Err(Error::Domain(format!(
            "kappa {kappa} must exceed the salient fraction {f}"
        )));
    }
    let tau = 1.0 - ((kappa - f) / (1.0 - f)).ln() / gamma;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("kappa {kappa} needs a non-positive tau")));
    }
    Ok(tau)
}

/// Top softmax entry of the power-law scores scaled by `tau`.
pub fn top_entry_scaled(n: usize, pow: f64, gamma: f64, tau: f64) -> Result<f64> {
    check_power_law(n, pow, gamma)?;
    let nf = n as f64;
    Ok(1.0 / (nf.powf(1.0 - pow) + nf * (1.0 - nf.powf(-pow)) * (-gamma * tau).exp()))
}

/// Top entry after keeping the top `κ n` scores (unit temperature) and renormalising.
pub fn top_entry_sparse(n: usize, pow: f64, gamma: f64, kappa: f64) -> Result<f64> {
    check_power_law(n, pow, gamma)?;
    let nf = n as f64;
    let salient = nf.powf(1.0 - pow);
    let kept = kappa * nf;
    if kept < salient * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "kappa {kappa} keeps fewer than the {salient} salient entries"
        )));
    }
    Ok(1.0 / (salient + (kept - salient) * (-gamma).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_bound_examples() {
        assert_eq!(norm_lower_bound(3.0, 3.0, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(norm_lower_bound(2.0, 1.0, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        let v = norm_lower_bound(1.0, 0.0, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(norm_lower_bound(1.0, 0.0, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gamma_half_has_no_gap() {
        assert_eq!(gamma_gap(0.5), 0.0);
    }

    #[test]
    fn lower_bound_decreases_in_eps() {
        let mut prev = f64::INFINITY;
        for eps in [1e-6, 1e-4, 1e-2, 0.1] {
            let b = TwoTokenProblem::new(0.3, 0.2, eps).unwrap().lower_bound();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn degenerate_correlation_is_rejected() {
        assert!(TwoTokenProblem::new(0.3, 1.0, 0.01).is_err());
        assert!(TwoTokenProblem::new(0.3, 0.0, 0.2).is_err());
    }

    #[test]
    fn optimal_temperature_examples() {
        assert_eq!(optimal_position_temperature(1.0, 0.5).unwrap(), 0.0);
        assert!((optimal_position_temperature(std::f64::consts::E, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(optimal_position_temperature(0.0, 0.5).is_err());
        assert!(optimal_position_temperature(1.0, 1.0).is_err());
    }

    #[test]
    fn orthonormal_construction_is_a_times_a_plus_b() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let w = construct_optimal_W(&a, &b).unwrap();
        let expected = Matrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(w.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn parallel_tokens_are_rejected() {
        assert!(construct_optimal_W(&[1.0, 0.0], &[2.0, 0.0]).is_err());
    }

    #[test]
    fn kappa_examples() {
        use Token::*;
        let k = kappa_of(&[A, B, A, B]);
        assert_eq!(k, vec![0.0, 1.0, 0.5, 1.0]);
        let k = kappa_of(&[A, B, B, B]);
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(kappa_of(&[B, A])[0].is_infinite());
    }

    #[test]
    fn floor_checkpoint_term() {
        // One quarter of the queries at κ = 2 with M = 1/3.
        let term: f64 = 0.25 * (0.5_f64 - 1.0 / (1.0 + 2.0 / 3.0)).powi(2);
        assert!((term - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn sparsity_limits() {
        let (n, pow, gamma) = (100, 0.5, 2.0);
        assert!((sparsity_for_temperature(1.0, n, pow, gamma).unwrap() - 1.0).abs() < 1e-15);
        let k = sparsity_for_temperature(1e4, n, pow, gamma).unwrap();
        assert!((k - 0.1).abs() < 1e-12);
        assert!(sparsity_for_temperature(1.0, 1, pow, gamma).is_err());
        let top = top_entry_scaled(n, pow, gamma, 1e4).unwrap();
        assert!((top - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sparse_top_entry_rejects_too_few_kept() {
        assert!(top_entry_sparse(100, 0.5, 1.0, 0.05).is_err());
    }

    #[test]
    fn salient_count_rounds_with_minimum_one() {
        assert_eq!(PowerLawScores::new(100, 0.5, 1.0, 0.0).unwrap().salient_count(), 10);
        assert_eq!(PowerLawScores::new(4, 5.0, 1.0, 0.0).unwrap().salient_count(), 1);
    }
}
