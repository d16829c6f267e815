//! Observations, biasing functions and the pooled multi-sample dataset.
//!
//! Every stratum `k` is described by a known biasing function `omega_k`:
//! the stratum distribution has density `omega_k / Omega_k` with respect to
//! the target distribution. [`PooledData`] stacks the `K` samples in
//! sample-major order and caches `omega_l(z)` for every pooled point `z` and
//! every stratum `l`, which is all the solver ever needs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distribution::DebiasedDistribution;
use crate::error::{Error, Result};

/// Response attached to an observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Real(f64),
    /// Binary label, always -1 or +1.
    Label(i8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub target: Option<Target>,
}

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Self {
            features,
            target: None,
        }
    }

    pub fn with_real(features: Vec<f64>, y: f64) -> Self {
        Self {
            features,
            target: Some(Target::Real(y)),
        }
    }

    /// Labels other than -1 / +1 are rejected.
    pub fn with_label(features: Vec<f64>, label: i8) -> Result<Self> {
        if label != -1 && label != 1 {
            return Err(Error::InvalidInput(format!(
                "binary label must be -1 or +1, got {label}"
            )));
        }
        Ok(Self {
            features,
            target: Some(Target::Label(label)),
        })
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(z: f64) -> Self {
        Self::new(vec![z])
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn real_target(&self) -> Option<f64> {
        match self.target {
            Some(Target::Real(y)) => Some(y),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<i8> {
        match self.target {
            Some(Target::Label(l)) => Some(l),
            _ => None,
        }
    }

    pub fn norm(&self) -> f64 {
        self.features.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    IndicatorOfRegion,
    CensorThreshold,
    CustomEvaluator,
}

type Evaluator = Arc<dyn Fn(&Observation) -> f64 + Send + Sync>;

/// A known biasing function `omega: Z -> [0, M]`.
///
/// Outputs are validated when the bias matrix is built, not here: custom
/// evaluators have unbounded domains.
#[derive(Clone)]
pub struct BiasingFunction {
    kind: BiasKind,
    evaluator: Evaluator,
    upper_bound: f64,
    declared_lower: f64,
    label: String,
}

impl fmt::Debug for BiasingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BiasingFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .field("upper_bound", &self.upper_bound)
            .field("declared_lower", &self.declared_lower)
            .finish()
    }
}

impl BiasingFunction {
    /// Indicator of an arbitrary region; `M = 1`.
    pub fn indicator<F>(label: impl Into<String>, region: F) -> Self
    where
        F: Fn(&Observation) -> bool + Send + Sync + 'static,
    {
        Self {
            kind: BiasKind::IndicatorOfRegion,
            evaluator: Arc::new(move |z| if region(z) { 1.0 } else { 0.0 }),
            upper_bound: 1.0,
            declared_lower: 1.0,
            label: label.into(),
        }
    }

    /// Right-censoring stratum `1{T <= tau}` on the real target `T`.
    /// A missing target evaluates to NaN and is rejected at matrix build time.
    pub fn censor(tau: f64) -> Self {
        Self {
            kind: BiasKind::CensorThreshold,
            evaluator: Arc::new(move |z| match z.real_target() {
                Some(t) if t <= tau => 1.0,
                Some(_) => 0.0,
                None => f64::NAN,
            }),
            upper_bound: 1.0,
            declared_lower: 1.0,
            label: format!("censor(tau={tau})"),
        }
    }

    pub fn custom<F>(label: impl Into<String>, upper_bound: f64, declared_lower: f64, f: F) -> Result<Self>
    where
        F: Fn(&Observation) -> f64 + Send + Sync + 'static,
    {
        if !(upper_bound > 0.0 && upper_bound.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "upper bound must be positive and finite, got {upper_bound}"
            )));
        }
        if !(declared_lower >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "declared lower bound must be nonnegative, got {declared_lower}"
            )));
        }
        Ok(Self {
            kind: BiasKind::CustomEvaluator,
            evaluator: Arc::new(f),
            upper_bound,
            declared_lower,
            label: label.into(),
        })
    }

    pub fn whole_space() -> Self {
        Self::indicator("whole_space", |_| true)
    }

    pub fn kind(&self) -> BiasKind {
        self.kind
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn declared_lower(&self) -> f64 {
        self.declared_lower
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Raw evaluation, without range validation.
    pub fn eval(&self, z: &Observation) -> f64 {
        (self.evaluator)(z)
    }

    fn is_binary(&self) -> bool {
        matches!(self.kind, BiasKind::IndicatorOfRegion | BiasKind::CensorThreshold)
    }

    /// Evaluation with the range contract enforced.
    pub fn eval_checked(&self, z: &Observation) -> std::result::Result<f64, f64> {
        let v = self.eval(z);
        let ok = if self.is_binary() {
            v == 0.0 || v == 1.0
        } else {
            v.is_finite() && (0.0..=self.upper_bound).contains(&v)
        };
        if ok {
            Ok(v)
        } else {
            Err(v)
        }
    }
}

/// Declarative biasing function, as found in config documents and scenario
/// presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasDef {
    /// `1{|x| <= r}`
    NormBall { r: f64 },
    /// `1{|x| >= r}`
    NormShell { r: f64 },
    /// `1{|x_j| < c}`
    ComponentBand { j: usize, c: f64 },
    /// `1{x_j > c}`
    ComponentAbove { j: usize, c: f64 },
    /// `1{x_j < c}`
    ComponentBelow { j: usize, c: f64 },
    /// `1{T <= tau}` on the real target.
    Censor { tau: f64 },
    WholeSpace,
}

impl BiasDef {
    pub fn build(&self) -> BiasingFunction {
        match *self {
            BiasDef::NormBall { r } => {
                BiasingFunction::indicator(format!("norm_ball(r={r})"), move |z| z.norm() <= r)
            }
            BiasDef::NormShell { r } => {
                BiasingFunction::indicator(format!("norm_shell(r={r})"), move |z| z.norm() >= r)
            }
            BiasDef::ComponentBand { j, c } => {
                BiasingFunction::indicator(format!("component_band(j={j}, c={c})"), move |z| {
                    z.features.get(j).is_some_and(|x| x.abs() < c)
                })
            }
            BiasDef::ComponentAbove { j, c } => {
                BiasingFunction::indicator(format!("component_above(j={j}, c={c})"), move |z| {
                    z.features.get(j).is_some_and(|&x| x > c)
                })
            }
            BiasDef::ComponentBelow { j, c } => {
                BiasingFunction::indicator(format!("component_below(j={j}, c={c})"), move |z| {
                    z.features.get(j).is_some_and(|&x| x < c)
                })
            }
            BiasDef::Censor { tau } => BiasingFunction::censor(tau),
            BiasDef::WholeSpace => BiasingFunction::whole_space(),
        }
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self, BiasDef::WholeSpace)
    }
}

/// The `K` biased samples together with their cached bias matrix.
#[derive(Debug, Clone)]
pub struct PooledData {
    samples: Vec<Vec<Observation>>,
    functions: Vec<BiasingFunction>,
    sizes: Vec<usize>,
    rates: Vec<f64>,
    /// Row-major `n x K`, entry `omega_l(Z_{k,i})`.
    bias: Vec<f64>,
    /// `ln omega`, `-inf` where `omega = 0`.
    log_bias: Vec<f64>,
    dim: usize,
}

/// Build the pooled dataset and its bias matrix.
///
/// Rows are ordered sample-major (`k` ascending, then `i` ascending).
pub fn evaluate_bias_matrix(
    samples: Vec<Vec<Observation>>,
    functions: Vec<BiasingFunction>,
) -> Result<PooledData> {
    let k = samples.len();
    if k == 0 {
        return Err(Error::InvalidInput("at least one sample is required".into()));
    }
    if functions.len() != k {
        return Err(Error::InvalidInput(format!(
            "{k} samples but {} biasing functions",
            functions.len()
        )));
    }
    if let Some(empty) = samples.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidInput(format!("sample {empty} is empty")));
    }
    let dim = samples[0][0].dim();
    for (s, sample) in samples.iter().enumerate() {
        for (i, z) in sample.iter().enumerate() {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: z.dim(),
                    sample: s,
                    index: i,
                });
            }
        }
    }

    let sizes: Vec<usize> = samples.iter().map(Vec::len).collect();
    let n: usize = sizes.iter().sum();
    let mut bias = Vec::with_capacity(n * k);
    for (s, sample) in samples.iter().enumerate() {
        for (i, z) in sample.iter().enumerate() {
            for (l, f) in functions.iter().enumerate() {
                let v = f.eval_checked(z).map_err(|value| Error::EvaluatorOutOfRange {
                    function: l,
                    value,
                    upper: f.upper_bound(),
                    sample: s,
                    index: i,
                })?;
                bias.push(v);
            }
            if bias[bias.len() - k + s] <= 0.0 {
                return Err(Error::OwnWeightZero { sample: s, index: i });
            }
        }
    }
    let log_bias = bias.iter().map(|w| w.ln()).collect();

    Ok(PooledData {
        rates: sample_rates(&sizes),
        samples,
        functions,
        sizes,
        bias,
        log_bias,
        dim,
    })
}

/// `n_k / n`, with the last entry closing the sum to exactly one.
fn sample_rates(sizes: &[usize]) -> Vec<f64> {
    let n = sizes.iter().sum::<usize>() as f64;
    let mut rates: Vec<f64> = sizes.iter().map(|&s| s as f64 / n).collect();
    let k = rates.len();
    if k > 1 {
        let head: f64 = rates[..k - 1].iter().sum();
        let closed = 1.0 - head;
        // only accept the closing value when it is a rounding-level correction
        if (closed - rates[k - 1]).abs() <= 4.0 * f64::EPSILON && head + closed == 1.0 {
            rates[k - 1] = closed;
        }
    }
    rates
}

impl PooledData {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn n(&self) -> usize {
        self.bias.len() / self.k()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn samples(&self) -> &[Vec<Observation>] {
        &self.samples
    }

    pub fn functions(&self) -> &[BiasingFunction] {
        &self.functions
    }

    /// Largest declared upper bound `M` over the strata.
    pub fn upper_bound(&self) -> f64 {
        self.functions
            .iter()
            .map(BiasingFunction::upper_bound)
            .fold(0.0, f64::max)
    }

    /// `omega_l(z)` for every stratum `l`, for pooled row `row`.
    pub fn bias_row(&self, row: usize) -> &[f64] {
        let k = self.k();
        &self.bias[row * k..(row + 1) * k]
    }

    pub(crate) fn log_bias_row(&self, row: usize) -> &[f64] {
        let k = self.k();
        &self.log_bias[row * k..(row + 1) * k]
    }

    pub fn bias_matrix(&self) -> &[f64] {
        &self.bias
    }

    pub fn omega(&self, row: usize, l: usize) -> f64 {
        self.bias[row * self.k() + l]
    }

    /// Pooled observations in row order.
    pub fn observations(&self) -> impl Iterator<Item = &Observation> + '_ {
        self.samples.iter().flatten()
    }

    /// `(sample, index)` for each pooled row, in row order.
    pub fn row_origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &nk)| (0..nk).map(move |i| (k, i)))
    }

    /// First pooled row of sample `k`.
    pub fn sample_offset(&self, k: usize) -> usize {
        self.sizes[..k].iter().sum()
    }

    /// Pooled empirical measure: weight `1/n` on every observation.
    pub fn pooled_empirical_measure(&self) -> DebiasedDistribution {
        pooled_empirical_measure(self)
    }
}

/// The raw, biased baseline: every pooled observation weighted `1/n`.
pub fn pooled_empirical_measure(pooled: &PooledData) -> DebiasedDistribution {
    let n = pooled.n();
    DebiasedDistribution::from_parts_unchecked(
        pooled.observations().cloned().collect(),
        vec![1.0 / n as f64; n],
    )
}
