//! Estimation of the stratum normalizers and of the debiasing weights.
//!
//! The self-consistency system `Gamma(W) = 1` is the stationarity condition of
//! the convex potential
//!
//! ```text
//! D(u) = (1/n) sum_z log( sum_k exp(u_k) omega_k(z) ) - sum_k lambda_k u_k
//! ```
//!
//! under the change of variables `u_k = log(lambda_k / W_k)`, with
//! `D'(u)_k = lambda_k (Gamma_k(W) - 1)`. `D` is invariant along the all-ones
//! direction, so the last coordinate is pinned at `log(lambda_K)` (that is,
//! `W_K = 1`) and the remaining `K - 1` coordinates are optimized.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assumptions::empirical_strong_connectivity;
use crate::bias_model::PooledData;
use crate::distribution::DebiasedDistribution;
use crate::error::{Error, Result};

/// Point `u` in log-coordinates, `u_k = log(lambda_k / W_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCoordinates(Vec<f64>);

impl LogCoordinates {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if let Some(i) = u.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("log-coordinate {i} is {}", u[i])));
        }
        Ok(Self(u))
    }

    /// `u_k = log(lambda_k)`, i.e. `W = 1`.
    pub fn initial(pooled: &PooledData) -> Self {
        Self(pooled.rates().iter().map(|l| l.ln()).collect())
    }

    /// Coordinates of `W`, rescaled so that `W_K = 1`.
    pub fn from_w(w: &[f64], rates: &[f64]) -> Result<Self> {
        check_w(w, rates.len())?;
        let last = w[w.len() - 1].ln();
        Self::new(
            w.iter()
                .zip(rates)
                .map(|(wk, lk)| lk.ln() - (wk.ln() - last))
                .collect(),
        )
    }

    /// `W_k = lambda_k exp(-u_k)`, normalized so that `W_K = 1`.
    pub fn to_w(&self, rates: &[f64]) -> Vec<f64> {
        let k = self.0.len();
        let shift = rates[k - 1].ln() - self.0[k - 1];
        self.0
            .iter()
            .zip(rates)
            .map(|(u, l)| (l.ln() - u - shift).exp())
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    FixedStepGradient,
    QuasiNewton,
    /// Fixed-step gradient first, quasi-Newton from its last iterate if it
    /// stalls or runs out of iterations.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Target for `max_k |Gamma_k(W) - 1|`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Fixed step; `None` means `1 / M^2` with `M` the largest declared bound.
    pub step_size: Option<f64>,
    pub seed: u64,
    /// Half-width of a uniform perturbation of the free starting coordinates.
    pub init_jitter: f64,
    pub record_trace: bool,
    /// Finish with Newton steps on the free coordinates, driving the residual
    /// to rounding level. Skipped when the Hessian is singular.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Auto,
            grad_tol: 1e-9,
            max_iter: 10_000,
            step_size: None,
            seed: 0,
            init_jitter: 0.0,
            record_trace: false,
            polish: true,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if let Some(h) = self.step_size {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
            }
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::InvalidInput("init_jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    #[serde(rename = "W_hat")]
    pub w_hat: Vec<f64>,
    #[serde(rename = "Omega_hat")]
    pub omega_hat: Vec<f64>,
    /// Debiasing weights in pooled row order.
    pub weights: Vec<f64>,
    /// `Gamma_k(W_hat) - 1`.
    pub gamma_residual: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The stratum digraph is not strongly connected, so `W_hat` is one of
    /// several minimizers (or a boundary limit).
    pub non_unique: bool,
    /// Smallest eigenvalue of the Hessian restricted to the free coordinates.
    pub hessian_min_eig_at_solution: f64,
    pub objective: f64,
    pub method_used: SolverMethod,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<Vec<f64>>,
}

impl SolverResult {
    pub fn max_abs_residual(&self) -> f64 {
        max_abs(&self.gamma_residual)
    }

    pub fn log_coordinates(&self, pooled: &PooledData) -> LogCoordinates {
        LogCoordinates::from_w(&self.w_hat, pooled.rates()).expect("solver output is positive")
    }

    pub fn distribution(&self, pooled: &PooledData) -> DebiasedDistribution {
        DebiasedDistribution::from_parts_unchecked(pooled.observations().cloned().collect(), self.weights.clone())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_w(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k {
        return Err(Error::InvalidInput(format!("W has {} entries, expected {k}", w.len())));
    }
    match w.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        Some(index) => Err(Error::NonPositiveW { index, value: w[index] }),
        None => Ok(()),
    }
}

fn check_u(u: &LogCoordinates, pooled: &PooledData) -> Result<()> {
    if u.0.len() != pooled.k() {
        return Err(Error::InvalidInput(format!(
            "u has {} entries, expected {}",
            u.0.len(),
            pooled.k()
        )));
    }
    Ok(())
}

/// Per-row softmax over contributing strata, with max subtraction.
/// Returns `log sum_k exp(u_k) omega_k(z)`; `probs` receives the softmax.
fn row_softmax(u: &[f64], log_bias: &[f64], probs: &mut [f64], row: usize) -> Result<f64> {
    let mut m = f64::NEG_INFINITY;
    for (t, (&uk, &lw)) in probs.iter_mut().zip(u.iter().zip(log_bias)) {
        *t = uk + lw;
        m = m.max(*t);
    }
    if m == f64::NEG_INFINITY {
        return Err(Error::LogOfZero { row });
    }
    let mut s = 0.0;
    for t in probs.iter_mut() {
        *t = if *t == f64::NEG_INFINITY { 0.0 } else { (*t - m).exp() };
        s += *t;
    }
    for t in probs.iter_mut() {
        *t /= s;
    }
    Ok(m + s.ln())
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    hess: Option<DMatrix<f64>>,
}

fn evaluate(u: &[f64], pooled: &PooledData, with_hess: bool) -> Result<Evaluation> {
    let k = pooled.k();
    let n = pooled.n();
    let mut probs = vec![0.0; k];
    let mut lse_sum = 0.0;
    let mut p_sum = vec![0.0; k];
    let mut pp_sum = if with_hess { Some(DMatrix::zeros(k, k)) } else { None };
    for r in 0..n {
        lse_sum += row_softmax(u, pooled.log_bias_row(r), &mut probs, r)?;
        for (acc, p) in p_sum.iter_mut().zip(&probs) {
            *acc += p;
        }
        if let Some(h) = pp_sum.as_mut() {
            for a in 0..k {
                if probs[a] == 0.0 {
                    continue;
                }
                for b in 0..k {
                    h[(a, b)] += probs[a] * probs[b];
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let rates = pooled.rates();
    let linear: f64 = rates.iter().zip(u).map(|(l, x)| l * x).sum();
    let grad = p_sum.iter().zip(rates).map(|(s, l)| s * inv_n - l).collect();
    let hess = pp_sum.map(|pp| {
        let mut h = -pp * inv_n;
        for a in 0..k {
            h[(a, a)] += p_sum[a] * inv_n;
        }
        h
    });
    Ok(Evaluation {
        value: lse_sum * inv_n - linear,
        grad,
        hess,
    })
}

/// The convex potential `D(u)`.
pub fn objective_d(u: &LogCoordinates, pooled: &PooledData) -> Result<f64> {
    check_u(u, pooled)?;
    Ok(evaluate(&u.0, pooled, false)?.value)
}

/// `D'(u)_l = (1/n) sum_z softmax_l(z) - lambda_l`; components sum to zero.
pub fn gradient_d(u: &LogCoordinates, pooled: &PooledData) -> Result<Vec<f64>> {
    check_u(u, pooled)?;
    Ok(evaluate(&u.0, pooled, false)?.grad)
}

/// `D''(u) = (1/n) sum_z [diag(p(z)) - p(z) p(z)^T]`: symmetric, positive
/// semidefinite, rows summing to zero.
pub fn hessian_d(u: &LogCoordinates, pooled: &PooledData) -> Result<DMatrix<f64>> {
    check_u(u, pooled)?;
    Ok(evaluate(&u.0, pooled, true)?.hess.expect("requested"))
}

/// `sum_l (lambda_l / W_l) omega_l(z)` for every pooled row.
fn mixture_density(w: &[f64], pooled: &PooledData) -> Result<Vec<f64>> {
    check_w(w, pooled.k())?;
    let coef: Vec<f64> = pooled.rates().iter().zip(w).map(|(l, wk)| l / wk).collect();
    (0..pooled.n())
        .map(|r| {
            let d: f64 = pooled.bias_row(r).iter().zip(&coef).map(|(o, c)| o * c).sum();
            if d > 0.0 {
                Ok(d)
            } else {
                Err(Error::LogOfZero { row: r })
            }
        })
        .collect()
}

/// Empirical `Gamma_k(W) = (1/(n W_k)) sum_z omega_k(z) / sum_l (lambda_l/W_l) omega_l(z)`.
/// Homogeneous of degree zero in `W`.
pub fn gamma_hat(w: &[f64], pooled: &PooledData) -> Result<Vec<f64>> {
    let dens = mixture_density(w, pooled)?;
    let k = pooled.k();
    let mut acc = vec![0.0; k];
    for (r, d) in dens.iter().enumerate() {
        for (a, o) in acc.iter_mut().zip(pooled.bias_row(r)) {
            *a += o / d;
        }
    }
    let n = pooled.n() as f64;
    Ok(acc.iter().zip(w).map(|(a, wk)| a / (n * wk)).collect())
}

/// `Omega_l = W_l / [ (1/n) sum_z 1 / sum_k lambda_k omega_k(z) / W_k ]`.
pub fn estimate_omega(w: &[f64], pooled: &PooledData) -> Result<Vec<f64>> {
    let dens = mixture_density(w, pooled)?;
    let mean_inv = dens.iter().map(|d| 1.0 / d).sum::<f64>() / pooled.n() as f64;
    Ok(w.iter().map(|wk| wk / mean_inv).collect())
}

fn weight_vector(w: &[f64], pooled: &PooledData) -> Result<Vec<f64>> {
    let inv: Vec<f64> = mixture_density(w, pooled)?.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.iter().map(|x| x / total).collect())
}

/// Debiasing weights `pi_{k,i}` proportional to
/// `1 / sum_l (n_l / (n W_l)) omega_l(Z_{k,i})`, normalized to one.
pub fn compute_weights(w: &[f64], pooled: &PooledData) -> Result<DebiasedDistribution> {
    let weights = weight_vector(w, pooled)?;
    Ok(DebiasedDistribution::from_parts_unchecked(
        pooled.observations().cloned().collect(),
        weights,
    ))
}

/// `max_k |D'_k / lambda_k|`, which equals `max_k |Gamma_k - 1|`.
fn scaled_residual(grad: &[f64], rates: &[f64]) -> f64 {
    grad.iter().zip(rates).fold(0.0, |m, (g, l)| m.max((g / l).abs()))
}

const STALL_REL_DECREASE: f64 = 1e-14;
const STALL_WINDOW: usize = 20;

/// Objective restricted to the free coordinates, with `u_K` pinned.
struct Reduced<'a> {
    pooled: &'a PooledData,
    pinned: f64,
}

struct Point {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    residual: f64,
}

impl Reduced<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = x.to_vec();
        u.push(self.pinned);
        u
    }

    fn at(&self, x: Vec<f64>) -> Result<Point> {
        let e = evaluate(&self.full(&x), self.pooled, false)?;
        let residual = scaled_residual(&e.grad, self.pooled.rates());
        let mut grad = e.grad;
        grad.pop();
        Ok(Point {
            x,
            value: e.value,
            grad,
            residual,
        })
    }
}

struct RunOutcome {
    point: Point,
    iterations: usize,
    converged: bool,
}

fn fixed_step(
    f: &Reduced<'_>,
    start: Point,
    step: f64,
    tol: f64,
    max_iter: usize,
    trace: &mut Option<Vec<Vec<f64>>>,
) -> Result<RunOutcome> {
    let mut cur = start;
    let mut stalled = 0;
    for it in 0..max_iter {
        if cur.residual <= tol {
            return Ok(RunOutcome { point: cur, iterations: it, converged: true });
        }
        let x: Vec<f64> = cur.x.iter().zip(&cur.grad).map(|(x, g)| x - step * g).collect();
        let next = f.at(x)?;
        if let Some(t) = trace.as_mut() {
            t.push(f.full(&next.x));
        }
        // Objective decreases hit rounding well before the residual does, so a
        // step only counts as stalled when the residual stops shrinking too.
        let rel = (cur.value - next.value) / cur.value.abs().max(f64::MIN_POSITIVE);
        let flat = rel < STALL_REL_DECREASE && next.residual >= cur.residual;
        stalled = if flat { stalled + 1 } else { 0 };
        cur = next;
        if stalled >= STALL_WINDOW {
            let converged = cur.residual <= tol;
            return Ok(RunOutcome { point: cur, iterations: it + 1, converged });
        }
    }
    let converged = cur.residual <= tol;
    Ok(RunOutcome { point: cur, iterations: max_iter, converged })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense BFGS with backtracking (Armijo) line search. Near the optimum the
/// objective differences drop below rounding, so a step is also accepted
/// when the objective is flat to working precision and the residual shrinks.
fn quasi_newton(
    f: &Reduced<'_>,
    start: Point,
    tol: f64,
    max_iter: usize,
    trace: &mut Option<Vec<Vec<f64>>>,
) -> Result<RunOutcome> {
    let m = start.x.len();
    let identity = |scale: f64| {
        let mut h = vec![0.0; m * m];
        for i in 0..m {
            h[i * m + i] = scale;
        }
        h
    };
    let mut hinv = identity(1.0);
    let mut cur = start;
    let mut fresh = true;

    for it in 0..max_iter {
        if cur.residual <= tol {
            return Ok(RunOutcome { point: cur, iterations: it, converged: true });
        }
        let mut dir: Vec<f64> = (0..m)
            .map(|i| -(0..m).map(|j| hinv[i * m + j] * cur.grad[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&dir, &cur.grad);
        if !(slope < 0.0) {
            hinv = identity(1.0);
            fresh = true;
            dir = cur.grad.iter().map(|g| -g).collect();
            slope = dot(&dir, &cur.grad);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let x: Vec<f64> = cur.x.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let cand = f.at(x)?;
            let armijo = cand.value <= cur.value + 1e-4 * t * slope;
            let flat = (cand.value - cur.value).abs() <= 4.0 * f64::EPSILON * cur.value.abs().max(1.0)
                && cand.residual < cur.residual;
            if cand.value.is_finite() && (armijo || flat) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // line search exhausted: no further progress is representable
            let converged = cur.residual <= tol;
            return Ok(RunOutcome { point: cur, iterations: it, converged });
        };
        if let Some(tr) = trace.as_mut() {
            tr.push(f.full(&next.x));
        }

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if fresh {
                hinv = identity(sy / dot(&y, &y));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..m)
                .map(|i| (0..m).map(|j| hinv[i * m + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..m {
                for j in 0..m {
                    hinv[i * m + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        cur = next;
    }
    let converged = cur.residual <= tol;
    Ok(RunOutcome { point: cur, iterations: max_iter, converged })
}

const POLISH_STEPS: usize = 6;
const POLISH_TARGET: f64 = 1e-15;

/// Newton steps from a converged point; each must reduce the residual.
fn newton_polish(f: &Reduced<'_>, mut cur: Point, trace: &mut Option<Vec<Vec<f64>>>) -> Result<(Point, usize)> {
    let m = cur.x.len();
    let mut steps = 0;
    while steps < POLISH_STEPS && cur.residual > POLISH_TARGET {
        let u = LogCoordinates::new(f.full(&cur.x))?;
        let h = hessian_d(&u, f.pooled)?.view((0, 0), (m, m)).into_owned();
        let Some(chol) = h.cholesky() else { break };
        let d = chol.solve(&DVector::from_column_slice(&cur.grad));
        let next = f.at(cur.x.iter().zip(d.iter()).map(|(x, d)| x - d).collect())?;
        if !(next.residual < cur.residual) {
            break;
        }
        if let Some(t) = trace.as_mut() {
            t.push(f.full(&next.x));
        }
        cur = next;
        steps += 1;
    }
    Ok((cur, steps))
}

/// Solve `Gamma(W) = 1` with `W_K = 1` by minimizing `D` over the free
/// coordinates, then form `Omega_hat` and the debiasing weights.
///
/// When the stratum digraph is not strongly connected the minimizer is not
/// unique (or only reached in the limit); the returned result then carries
/// `non_unique = true`.
pub fn solve_w(pooled: &PooledData, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    let k = pooled.k();
    let rates = pooled.rates();
    let (_, strongly_connected) = empirical_strong_connectivity(pooled);

    let mut u0 = LogCoordinates::initial(pooled).into_vec();
    if config.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for x in u0.iter_mut().take(k - 1) {
            *x += config.init_jitter * rng.random_range(-1.0..1.0);
        }
    }
    let pinned = u0[k - 1];
    let reduced = Reduced { pooled, pinned };
    // The loop stops a little inside the tolerance so that the final residual,
    // recomputed through Gamma directly, stays within it.
    let inner_tol = 0.5 * config.grad_tol;
    let mut trace = config.record_trace.then(|| vec![u0.clone()]);

    let start = reduced.at(u0[..k - 1].to_vec())?;
    let step = config.step_size.unwrap_or_else(|| 1.0 / pooled.upper_bound().powi(2));

    let (outcome, method_used, iterations) = match config.method {
        SolverMethod::FixedStepGradient => {
            let o = fixed_step(&reduced, start, step, inner_tol, config.max_iter, &mut trace)?;
            let it = o.iterations;
            (o, SolverMethod::FixedStepGradient, it)
        }
        SolverMethod::QuasiNewton => {
            let o = quasi_newton(&reduced, start, inner_tol, config.max_iter, &mut trace)?;
            let it = o.iterations;
            (o, SolverMethod::QuasiNewton, it)
        }
        SolverMethod::Auto => {
            let first = fixed_step(&reduced, start, step, inner_tol, config.max_iter, &mut trace)?;
            if first.converged {
                let it = first.iterations;
                (first, SolverMethod::FixedStepGradient, it)
            } else {
                let spent = first.iterations;
                let second = quasi_newton(&reduced, first.point, inner_tol, config.max_iter, &mut trace)?;
                let it = spent + second.iterations;
                (second, SolverMethod::QuasiNewton, it)
            }
        }
    };

    let (point, iterations) = if config.polish && strongly_connected && k > 1 && outcome.converged {
        let (p, extra) = newton_polish(&reduced, outcome.point, &mut trace)?;
        (p, iterations + extra)
    } else {
        (outcome.point, iterations)
    };
    let u = LogCoordinates::new(reduced.full(&point.x))?;
    let w_hat = u.to_w(rates);
    let gamma_residual: Vec<f64> = gamma_hat(&w_hat, pooled)?.iter().map(|g| g - 1.0).collect();
    let residual = max_abs(&gamma_residual);
    if residual > config.grad_tol {
        return Err(Error::NotConverged {
            w_hat,
            residual,
            iterations,
        });
    }

    let omega_hat = estimate_omega(&w_hat, pooled)?;
    let weights = weight_vector(&w_hat, pooled)?;
    let hessian_min_eig_at_solution = if k == 1 {
        0.0
    } else {
        let h = hessian_d(&u, pooled)?;
        h.view((0, 0), (k - 1, k - 1))
            .into_owned()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    };

    Ok(SolverResult {
        w_hat,
        omega_hat,
        weights,
        gamma_residual,
        iterations,
        converged: true,
        non_unique: !strongly_connected,
        hessian_min_eig_at_solution,
        objective: point.value,
        method_used,
        trace: trace.unwrap_or_default(),
    })
}
