//! Weighted empirical risk and the two built-in linear learners.
//!
//! Any learner that accepts per-sample weights can consume the debiasing
//! weights directly; least squares and logistic regression are provided here
//! so the pipeline runs end to end.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bias_model::Observation;
use crate::distribution::DebiasedDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Regression => write!(f, "regression"),
            Task::BinaryClassification => write!(f, "binary-classification"),
        }
    }
}

/// Anything that maps features to a real score.
pub trait Predictor {
    fn task(&self) -> Task;
    /// Regression output, or the classification margin whose sign is the label.
    fn score(&self, features: &[f64]) -> f64;
}

/// Affine predictor; the last coefficient is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub task: Task,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, task: Task) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("coefficients must be non-empty and finite".into()));
        }
        Ok(Self { coefficients, task })
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[self.coefficients.len() - 1]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[..self.coefficients.len() - 1]
    }

    /// Regression value, or the predicted label (+1 when the margin is >= 0).
    pub fn predict(&self, features: &[f64]) -> f64 {
        let s = self.score(features);
        match self.task {
            Task::Regression => s,
            Task::BinaryClassification => {
                if s >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

impl Predictor for LinearModel {
    fn task(&self) -> Task {
        self.task
    }

    fn score(&self, features: &[f64]) -> f64 {
        self.slopes()
            .iter()
            .zip(features)
            .map(|(b, x)| b * x)
            .sum::<f64>()
            + self.intercept()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    /// Evaluated only, never optimized.
    ZeroOne,
    LogisticSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
}

impl LossSpec {
    pub const SQUARED: LossSpec = LossSpec { kind: LossKind::SquaredError };
    pub const ZERO_ONE: LossSpec = LossSpec { kind: LossKind::ZeroOne };
    pub const LOGISTIC: LossSpec = LossSpec { kind: LossKind::LogisticSurrogate };

    fn mismatch<P: Predictor + ?Sized>(&self, model: &P) -> Error {
        Error::TaskMismatch {
            loss: format!("{:?}", self.kind),
            task: model.task().to_string(),
        }
    }

    /// `psi(z, theta)`; nonnegative.
    pub fn evaluate<P: Predictor + ?Sized>(&self, model: &P, z: &Observation) -> Result<f64> {
        match self.kind {
            LossKind::SquaredError => {
                let y = match (model.task(), z.real_target()) {
                    (Task::Regression, Some(y)) => y,
                    _ => return Err(self.mismatch(model)),
                };
                let r = y - model.score(&z.features);
                Ok(r * r)
            }
            LossKind::ZeroOne | LossKind::LogisticSurrogate => {
                let y = match (model.task(), z.label()) {
                    (Task::BinaryClassification, Some(y)) => f64::from(y),
                    _ => return Err(self.mismatch(model)),
                };
                let margin = y * model.score(&z.features);
                Ok(match self.kind {
                    LossKind::ZeroOne => {
                        let pred = if margin == 0.0 {
                            // ties go to the +1 class
                            y > 0.0
                        } else {
                            margin > 0.0
                        };
                        if pred {
                            0.0
                        } else {
                            1.0
                        }
                    }
                    _ => softplus(-margin),
                })
            }
        }
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Debiased risk `sum_i pi_i psi(Z_i, theta)`.
pub fn weighted_risk<P: Predictor + ?Sized>(model: &P, dist: &DebiasedDistribution, loss: LossSpec) -> Result<f64> {
    let mut acc = 0.0;
    for (z, w) in dist.iter() {
        acc += w * loss.evaluate(model, z)?;
    }
    Ok(acc)
}

/// Fraction of weighted mass classified correctly.
pub fn weighted_accuracy<P: Predictor + ?Sized>(model: &P, dist: &DebiasedDistribution) -> Result<f64> {
    Ok(1.0 - weighted_risk(model, dist, LossSpec::ZERO_ONE)?)
}

fn augmented(z: &Observation) -> DVector<f64> {
    let d = z.dim();
    DVector::from_fn(d + 1, |i, _| if i < d { z.features[i] } else { 1.0 })
}

/// Weighted least squares with intercept, `min sum_i pi_i (y_i - x_i^T beta)^2`.
///
/// Solved through the normal equations by Cholesky. A singular weighted Gram
/// matrix falls back to the minimum-norm solution (SVD of the
/// `sqrt(pi)`-scaled design); a design with no information at all is
/// [`Error::RankDeficient`].
pub fn fit_weighted_least_squares(dist: &DebiasedDistribution) -> Result<LinearModel> {
    let p = dist.observations()[0].dim() + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (z, w) in dist.iter() {
        let y = z.real_target().ok_or_else(|| Error::TaskMismatch {
            loss: "SquaredError".into(),
            task: "observation without real target".into(),
        })?;
        if w == 0.0 {
            continue;
        }
        let x = augmented(z);
        gram.syger(w, &x, &x, 1.0);
        rhs.axpy(w * y, &x, 1.0);
    }

    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l();
        let diag = l.diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
        if (lo / hi).powi(2) > 1e-13 {
            let beta = chol.solve(&rhs);
            return LinearModel::new(beta.iter().copied().collect(), Task::Regression);
        }
    }
    min_norm_least_squares(dist, p)
}

fn min_norm_least_squares(dist: &DebiasedDistribution, p: usize) -> Result<LinearModel> {
    let rows: Vec<(DVector<f64>, f64)> = dist
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(z, w)| {
            let s = w.sqrt();
            (augmented(z) * s, z.real_target().unwrap_or(0.0) * s)
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::RankDeficient);
    }
    let a = DMatrix::from_fn(rows.len(), p, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(Error::RankDeficient);
    }
    let eps = f64::EPSILON * smax * rows.len().max(p) as f64;
    let beta = svd.solve(&b, eps).map_err(|_| Error::RankDeficient)?;
    LinearModel::new(beta.iter().copied().collect(), Task::Regression)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Target sup-norm of the gradient.
    pub tol: f64,
    /// Coefficient norm beyond which the classes are declared separable.
    pub norm_cap: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            norm_cap: 1e6,
        }
    }
}

struct LogisticState {
    loss: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn logistic_state(rows: &[(DVector<f64>, f64, f64)], beta: &DVector<f64>, with_hess: bool) -> LogisticState {
    let p = beta.len();
    let mut loss = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(if with_hess { p } else { 0 }, if with_hess { p } else { 0 });
    for (x, y, w) in rows {
        let m = y * x.dot(beta);
        loss += w * softplus(-m);
        let s = sigmoid(-m);
        grad.axpy(-w * y * s, x, 1.0);
        if with_hess {
            hess.syger(w * s * (1.0 - s), x, x, 1.0);
        }
    }
    LogisticState { loss, grad, hess }
}

/// Weighted logistic regression with intercept, by damped Newton.
///
/// Labels must be -1/+1. If the positively weighted points are perfectly
/// separated, no finite minimizer exists and [`Error::Separable`] is returned.
pub fn fit_weighted_logistic(dist: &DebiasedDistribution, opts: LogisticOptions) -> Result<LinearModel> {
    let mut rows = Vec::with_capacity(dist.len());
    for (z, w) in dist.iter() {
        let y = z.label().ok_or_else(|| Error::TaskMismatch {
            loss: "LogisticSurrogate".into(),
            task: "observation without binary label".into(),
        })?;
        if w > 0.0 {
            rows.push((augmented(z), f64::from(y), w));
        }
    }
    let p = dist.observations()[0].dim() + 1;
    if rows.iter().all(|r| r.1 > 0.0) || rows.iter().all(|r| r.1 < 0.0) {
        return Err(Error::Separable { norm: f64::INFINITY });
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut state = logistic_state(&rows, &beta, true);
    let mut converged = false;
    for _ in 0..opts.max_iter {
        if state.grad.amax() <= opts.tol {
            converged = true;
            break;
        }
        let dir = match state.hess.clone().cholesky() {
            Some(ch) => -ch.solve(&state.grad),
            None => -state.grad.clone(),
        };
        let slope = dir.dot(&state.grad);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &beta + &dir * t;
            let s = logistic_state(&rows, &cand, false);
            let flat = (s.loss - state.loss).abs() <= 4.0 * f64::EPSILON * state.loss.max(1.0)
                && s.grad.amax() < state.grad.amax();
            if s.loss <= state.loss + 1e-4 * t * slope || flat {
                next = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(b) = next else { break };
        beta = b;
        if beta.norm() > opts.norm_cap {
            return Err(Error::Separable { norm: beta.norm() });
        }
        state = logistic_state(&rows, &beta, true);
    }
    if !converged {
        converged = state.grad.amax() <= opts.tol;
    }

    let separated = rows.iter().all(|(x, y, _)| y * x.dot(&beta) > 0.0);
    if separated || !converged {
        return Err(Error::Separable { norm: beta.norm() });
    }
    LinearModel::new(beta.iter().copied().collect(), Task::BinaryClassification)
}

/// Gradient of the weighted logistic loss at `model`.
pub fn logistic_gradient(model: &LinearModel, dist: &DebiasedDistribution) -> Result<Vec<f64>> {
    let beta = DVector::from_column_slice(&model.coefficients);
    let mut rows = Vec::with_capacity(dist.len());
    for (z, w) in dist.iter() {
        let y = z.label().ok_or_else(|| Error::TaskMismatch {
            loss: "LogisticSurrogate".into(),
            task: "observation without binary label".into(),
        })?;
        rows.push((augmented(z), f64::from(y), w));
    }
    Ok(logistic_state(&rows, &beta, false).grad.iter().copied().collect())
}

/// `max_theta |weighted_risk(theta) - reference(theta)|` over a finite grid.
pub fn sup_deviation<F>(
    dist: &DebiasedDistribution,
    reference: F,
    theta_grid: &[LinearModel],
    loss: LossSpec,
) -> Result<f64>
where
    F: Fn(&LinearModel) -> f64,
{
    if theta_grid.is_empty() {
        return Err(Error::InvalidInput("theta grid is empty".into()));
    }
    let mut worst: f64 = 0.0;
    for theta in theta_grid {
        worst = worst.max((weighted_risk(theta, dist, loss)? - reference(theta)).abs());
    }
    Ok(worst)
}
