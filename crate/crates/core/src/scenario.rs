//! Synthetic biased-sampling experiments and Monte Carlo rate checks.
//!
//! A [`ScenarioSpec`] describes a base distribution, one declarative biasing
//! function per stratum, stratum sizes and a prediction target. Each run draws
//! every stratum by rejection sampling from the base distribution, solves for
//! the debiasing weights and fits the configured learners three ways:
//! uniform weights on the pooled sample, debiasing weights, and uniform
//! weights on the unbiased stratum alone (when one exists).
//!
//! Runs execute in parallel, each with its own RNG stream derived from
//! `(seed, run_index)`; results are assembled in run order, so reports are
//! bit-identical for identical inputs.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::bias_model::{evaluate_bias_matrix, BiasDef, BiasingFunction, Observation, PooledData, Target};
use crate::distribution::DebiasedDistribution;
use crate::erm::{
    fit_weighted_least_squares, fit_weighted_logistic, sup_deviation, weighted_accuracy, weighted_risk,
    LinearModel, LogisticOptions, LossSpec, Task,
};
use crate::error::{Error, Result};
use crate::solver::{solve_w, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDistribution {
    #[serde(rename = "standard-gaussian-3d")]
    StandardGaussian3d,
    /// Uniform draws (with replacement) from the rows of a CSV file in the
    /// observation format.
    CustomCsv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    /// `y = |x|`
    Norm,
    /// `y = x_j`
    Component { j: usize },
    /// Keep the target stored with the base observation.
    Supplied,
    /// `y = +1` with probability `sigmoid(coefficients . x + intercept)`.
    LogisticLabel { coefficients: Vec<f64>, intercept: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Learner {
    #[serde(rename = "LR")]
    LinearRegression,
    #[serde(rename = "LogReg")]
    LogisticRegression,
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::LinearRegression => "LR",
            Learner::LogisticRegression => "LogReg",
        }
    }

    pub fn metric(&self) -> &'static str {
        match self {
            Learner::LinearRegression => "mse",
            Learner::LogisticRegression => "accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Standard,
    Debiased,
    UnbiasedOnly,
}

impl Treatment {
    pub fn name(&self) -> &'static str {
        match self {
            Treatment::Standard => "standard",
            Treatment::Debiased => "debiased",
            Treatment::UnbiasedOnly => "unbiased_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub base_distribution: BaseDistribution,
    #[serde(alias = "biasing")]
    pub biasing_defs: Vec<BiasDef>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    pub target: TargetKind,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_learners")]
    pub learners: Vec<Learner>,
}

fn default_test_size() -> usize {
    300
}

fn default_runs() -> usize {
    100
}

fn default_learners() -> Vec<Learner> {
    vec![Learner::LinearRegression]
}

pub const PRESET_NAMES: &[&str] = &[
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "censor", "strat_class",
];

impl ScenarioSpec {
    fn gaussian(name: &str, strata: Vec<(BiasDef, usize)>) -> Self {
        let (biasing_defs, sample_sizes) = strata.into_iter().unzip();
        Self {
            name: name.into(),
            base_distribution: BaseDistribution::StandardGaussian3d,
            biasing_defs,
            sample_sizes,
            test_size: default_test_size(),
            target: TargetKind::Norm,
            n_runs: default_runs(),
            seed: 0,
            learners: default_learners(),
        }
    }

    /// Named preset. Norm-biased scenarios `a`-`f`, first-component-biased
    /// scenarios `g`-`l`, a right-censoring example and a stratified
    /// classification example. Sizes sum to 1000 with a 300-point test set.
    pub fn preset(name: &str) -> Result<Self> {
        use BiasDef::*;
        let ball = NormBall { r: 0.8 };
        let band = ComponentBand { j: 0, c: 0.1 };
        let below = ComponentBelow { j: 0, c: 0.0 };
        let above = ComponentAbove { j: 0, c: 0.0 };
        let spec = match name {
            "a" => Self::gaussian(name, vec![(NormBall { r: 1.6 }, 500), (NormShell { r: 1.4 }, 500)]),
            "b" => Self::gaussian(name, vec![(ball.clone(), 900), (WholeSpace, 100)]),
            "c" => Self::gaussian(name, vec![(ball.clone(), 500), (WholeSpace, 500)]),
            "d" => Self::gaussian(name, vec![(ball.clone(), 500), (NormShell { r: 0.5 }, 500)]),
            "e" => Self::gaussian(name, vec![(ball.clone(), 100), (NormShell { r: 0.5 }, 900)]),
            "f" => Self::gaussian(
                name,
                vec![(ball.clone(), 500), (NormShell { r: 0.5 }, 200), (WholeSpace, 300)],
            ),
            "g" => Self::gaussian(name, vec![(band.clone(), 900), (WholeSpace, 100)]),
            "h" => Self::gaussian(name, vec![(band.clone(), 500), (WholeSpace, 500)]),
            "i" => Self::gaussian(name, vec![(ComponentAbove { j: 0, c: 1.5 }, 500), (WholeSpace, 500)]),
            "j" => Self::gaussian(name, vec![(band.clone(), 100), (below.clone(), 450), (above.clone(), 450)]),
            "k" => Self::gaussian(name, vec![(band.clone(), 600), (below.clone(), 200), (above.clone(), 200)]),
            "l" => Self::gaussian(
                name,
                vec![(band, 500), (below, 150), (above, 150), (WholeSpace, 200)],
            ),
            "censor" => Self::gaussian(name, vec![(Censor { tau: 1.2 }, 800), (WholeSpace, 200)]),
            "strat_class" => {
                let mut s = Self::gaussian(name, vec![(ComponentAbove { j: 0, c: 0.5 }, 800), (WholeSpace, 200)]);
                s.target = TargetKind::LogisticLabel {
                    coefficients: vec![2.0, -1.0, 0.5],
                    intercept: 0.3,
                };
                s.learners = vec![Learner::LogisticRegression];
                s
            }
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.biasing_defs.len()
    }

    pub fn total_size(&self) -> usize {
        self.sample_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.biasing_defs.is_empty() {
            return Err(Error::Config("scenario needs at least one stratum".into()));
        }
        if self.biasing_defs.len() != self.sample_sizes.len() {
            return Err(Error::Config(format!(
                "{} biasing functions but {} sample sizes",
                self.biasing_defs.len(),
                self.sample_sizes.len()
            )));
        }
        if self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.test_size == 0 || self.n_runs == 0 {
            return Err(Error::Config("test_size and n_runs must be positive".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("at least one learner is required".into()));
        }
        Ok(())
    }

    /// Same proportions, total size close to `n`.
    pub fn scaled_to(&self, n: usize) -> Self {
        let total = self.total_size() as f64;
        let mut s = self.clone();
        s.sample_sizes = self
            .sample_sizes
            .iter()
            .map(|&m| ((m as f64 * n as f64 / total).round() as usize).max(1))
            .collect();
        s
    }

    /// Index of the first whole-space stratum.
    pub fn unbiased_stratum(&self) -> Option<usize> {
        self.biasing_defs.iter().position(BiasDef::is_whole_space)
    }

    pub fn functions(&self) -> Vec<BiasingFunction> {
        self.biasing_defs.iter().map(BiasDef::build).collect()
    }

    pub fn sampler(&self) -> Result<BaseSampler> {
        BaseSampler::new(&self.base_distribution, &self.target)
    }
}

/// Draws unbiased observations (features plus target) from the base law.
#[derive(Debug, Clone)]
pub struct BaseSampler {
    points: Option<Vec<Observation>>,
    target: TargetKind,
}

impl BaseSampler {
    pub fn new(base: &BaseDistribution, target: &TargetKind) -> Result<Self> {
        let points = match base {
            BaseDistribution::StandardGaussian3d => {
                if matches!(target, TargetKind::Supplied) {
                    return Err(Error::Config("a supplied target needs a custom_csv base distribution".into()));
                }
                None
            }
            BaseDistribution::CustomCsv { path } => {
                let data = crate::io::read_observation_table(path, crate::io::TargetColumn::Real)?;
                if data.rows.is_empty() {
                    return Err(Error::Config(format!("{} has no rows", path.display())));
                }
                Some(data.rows.into_iter().map(|r| r.observation).collect())
            }
        };
        Self::build(points, target.clone())
    }

    /// Empirical base distribution from in-memory observations.
    pub fn from_points(points: Vec<Observation>, target: TargetKind) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty base sample".into()));
        }
        Self::build(Some(points), target)
    }

    fn build(points: Option<Vec<Observation>>, target: TargetKind) -> Result<Self> {
        if let TargetKind::Component { j } = target {
            let dim = points.as_ref().map_or(3, |p| p[0].dim());
            if j >= dim {
                return Err(Error::Config(format!("component {j} out of range for dimension {dim}")));
            }
        }
        Ok(Self { points, target })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let (features, supplied) = match &self.points {
            None => ((0..3).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>(), None),
            Some(p) => {
                let z = &p[rng.random_range(0..p.len())];
                (z.features.clone(), z.target)
            }
        };
        let target = match &self.target {
            TargetKind::Norm => Some(Target::Real(features.iter().map(|x| x * x).sum::<f64>().sqrt())),
            TargetKind::Component { j } => Some(Target::Real(features[*j])),
            TargetKind::Supplied => supplied,
            TargetKind::LogisticLabel { coefficients, intercept } => {
                let s: f64 = coefficients.iter().zip(&features).map(|(b, x)| b * x).sum::<f64>() + intercept;
                let p = 1.0 / (1.0 + (-s).exp());
                Some(Target::Label(if rng.random::<f64>() < p { 1 } else { -1 }))
            }
        };
        Observation { features, target }
    }

    pub fn is_standard_gaussian(&self) -> bool {
        self.points.is_none()
    }
}

/// Window over which the acceptance rate is monitored.
const REJECTION_WINDOW: usize = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Draw `m` observations from the base law conditioned by (weighted with)
/// `omega`: accept a proposal with probability `omega(z) / M`, which is exact
/// for indicators.
pub fn rejection_sample<R: Rng + ?Sized>(
    sampler: &BaseSampler,
    omega: &BiasingFunction,
    m: usize,
    stratum: usize,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let upper = omega.upper_bound();
    let mut out = Vec::with_capacity(m);
    let mut attempts = 0usize;
    let mut window_accepted = 0usize;
    while out.len() < m {
        let z = sampler.draw(rng);
        attempts += 1;
        let w = omega.eval(&z);
        let accept = if w >= upper {
            true
        } else if w > 0.0 {
            rng.random::<f64>() * upper < w
        } else {
            false
        };
        if accept {
            debug_assert!(w > 0.0);
            out.push(z);
            window_accepted += 1;
        }
        if attempts.is_multiple_of(REJECTION_WINDOW) {
            if (window_accepted as f64) < MIN_ACCEPTANCE * REJECTION_WINDOW as f64 {
                return Err(Error::RejectionStall {
                    stratum,
                    accepted: out.len(),
                    attempts,
                });
            }
            window_accepted = 0;
        }
    }
    Ok(out)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent RNG stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

/// Draw the `K` biased samples and an unbiased test set for one run.
pub fn generate_scenario(spec: &ScenarioSpec, run_index: u64) -> Result<(PooledData, Vec<Observation>)> {
    spec.validate()?;
    let sampler = spec.sampler()?;
    generate_with(spec, &sampler, &spec.functions(), run_index)
}

fn generate_with(
    spec: &ScenarioSpec,
    sampler: &BaseSampler,
    functions: &[BiasingFunction],
    run_index: u64,
) -> Result<(PooledData, Vec<Observation>)> {
    let mut rng = stream_rng(spec.seed, run_index);
    let mut samples = Vec::with_capacity(spec.k());
    for (k, (f, &m)) in functions.iter().zip(&spec.sample_sizes).enumerate() {
        samples.push(rejection_sample(sampler, f, m, k, &mut rng)?);
    }
    let test = (0..spec.test_size).map(|_| sampler.draw(&mut rng)).collect();
    let pooled = evaluate_bias_matrix(samples, functions.to_vec())?;
    Ok((pooled, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub learner: Learner,
    pub treatment: Treatment,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub learner: Learner,
    pub treatment: Treatment,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub n_runs: usize,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, learner: Learner, treatment: Treatment) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.learner == learner && c.treatment == treatment)
    }

    /// Per-run values of one cell, indexed by run (`None` where the run failed).
    pub fn values(&self, learner: Learner, treatment: Treatment) -> Vec<Option<f64>> {
        let mut v = vec![None; self.n_runs];
        for r in &self.runs {
            if r.learner == learner && r.treatment == treatment {
                v[r.run] = r.value;
            }
        }
        v
    }

    /// Summary table, one row per learner x treatment.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["scenario", "learner", "treatment", "metric", "mean", "std", "n_ok", "n_failed"])
            .map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                self.scenario.clone(),
                c.learner.name().to_string(),
                c.treatment.name().to_string(),
                c.metric.clone(),
                c.mean.to_string(),
                c.std.to_string(),
                c.n_ok.to_string(),
                c.n_failed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Raw per-run values.
    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["scenario", "run", "learner", "treatment", "value", "error"])
            .map_err(csv_err)?;
        for r in &self.runs {
            w.write_record([
                self.scenario.clone(),
                r.run.to_string(),
                r.learner.name().to_string(),
                r.treatment.name().to_string(),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Fit `learner` on `train` and score it on the unbiased test set.
pub fn fit_and_score(learner: Learner, train: &DebiasedDistribution, test: &DebiasedDistribution) -> Result<f64> {
    match learner {
        Learner::LinearRegression => {
            let m = fit_weighted_least_squares(train)?;
            weighted_risk(&m, test, LossSpec::SQUARED)
        }
        Learner::LogisticRegression => {
            let m = fit_weighted_logistic(train, LogisticOptions::default())?;
            weighted_accuracy(&m, test)
        }
    }
}

/// The training distributions compared in every run.
pub fn treatments(
    spec: &ScenarioSpec,
    pooled: &PooledData,
    debiasing_weights: &[f64],
) -> Result<Vec<(Treatment, DebiasedDistribution)>> {
    let obs: Vec<Observation> = pooled.observations().cloned().collect();
    let mut out = vec![
        (Treatment::Standard, DebiasedDistribution::uniform(obs.clone())?),
        (Treatment::Debiased, DebiasedDistribution::new(obs, debiasing_weights.to_vec())?),
    ];
    if let Some(k) = spec.unbiased_stratum() {
        out.push((Treatment::UnbiasedOnly, DebiasedDistribution::uniform(pooled.samples()[k].clone())?));
    }
    Ok(out)
}

/// Run `spec.n_runs` replicates and aggregate test metrics per learner and
/// treatment. Failed runs are recorded with their error and excluded from
/// the summary.
pub fn run_experiment(spec: &ScenarioSpec, solver: &SolverConfig) -> Result<ExperimentReport> {
    spec.validate()?;
    let sampler = spec.sampler()?;
    let functions = spec.functions();
    let mut cells: Vec<(Learner, Treatment)> = Vec::new();
    for &l in &spec.learners {
        cells.push((l, Treatment::Standard));
        cells.push((l, Treatment::Debiased));
        if spec.unbiased_stratum().is_some() {
            cells.push((l, Treatment::UnbiasedOnly));
        }
    }

    let per_run: Vec<Vec<RunRecord>> = (0..spec.n_runs)
        .into_par_iter()
        .map(|run| {
            let attempt = || -> Result<Vec<(Treatment, DebiasedDistribution)>> {
                let (pooled, test) = generate_with(spec, &sampler, &functions, run as u64)?;
                let res = solve_w(&pooled, solver)?;
                let mut t = treatments(spec, &pooled, &res.weights)?;
                t.push((Treatment::Standard, DebiasedDistribution::uniform(test)?));
                Ok(t)
            };
            match attempt() {
                Err(e) => cells
                    .iter()
                    .map(|&(learner, treatment)| RunRecord {
                        run,
                        learner,
                        treatment,
                        value: None,
                        error: Some(e.to_string()),
                    })
                    .collect(),
                Ok(mut dists) => {
                    let test = dists.pop().expect("test set pushed last").1;
                    cells
                        .iter()
                        .map(|&(learner, treatment)| {
                            let train = &dists.iter().find(|(t, _)| *t == treatment).expect("treatment present").1;
                            let res = fit_and_score(learner, train, &test);
                            RunRecord {
                                run,
                                learner,
                                treatment,
                                value: res.as_ref().ok().copied(),
                                error: res.err().map(|e| e.to_string()),
                            }
                        })
                        .collect()
                }
            }
        })
        .collect();
    let runs: Vec<RunRecord> = per_run.into_iter().flatten().collect();

    let cells = cells
        .iter()
        .map(|&(learner, treatment)| {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.learner == learner && r.treatment == treatment)
                .filter_map(|r| r.value)
                .collect();
            let (mean, std) = mean_std(&vals);
            CellSummary {
                learner,
                treatment,
                metric: learner.metric().into(),
                mean,
                std,
                n_ok: vals.len(),
                n_failed: spec.n_runs - vals.len(),
            }
        })
        .collect();

    Ok(ExperimentReport {
        scenario: spec.name.clone(),
        n_runs: spec.n_runs,
        cells,
        runs,
    })
}

/// `E[|X|] = 2 sqrt(2/pi)` for a standard Gaussian vector in three dimensions.
pub fn mean_norm_gaussian_3d() -> f64 {
    2.0 * (2.0 / std::f64::consts::PI).sqrt()
}

/// Closed-form `Omega = E[omega(Z)]` under the standard Gaussian base, where
/// one exists (the norm of a 3-d standard Gaussian follows the chi(3) law).
pub fn closed_form_omega(def: &BiasDef, target: &TargetKind) -> Option<f64> {
    let chi2 = ChiSquared::new(3.0).expect("valid");
    let normal = Normal::new(0.0, 1.0).expect("valid");
    match (def, target) {
        (BiasDef::WholeSpace, _) => Some(1.0),
        (BiasDef::NormBall { r }, _) => Some(if *r < 0.0 { 0.0 } else { chi2.cdf(r * r) }),
        (BiasDef::NormShell { r }, _) => Some(if *r <= 0.0 { 1.0 } else { chi2.sf(r * r) }),
        (BiasDef::ComponentBand { j, c }, _) if *j < 3 => Some(if *c <= 0.0 { 0.0 } else { 2.0 * normal.cdf(*c) - 1.0 }),
        (BiasDef::ComponentAbove { j, c }, _) if *j < 3 => Some(normal.sf(*c)),
        (BiasDef::ComponentBelow { j, c }, _) if *j < 3 => Some(normal.cdf(*c)),
        (BiasDef::Censor { tau }, TargetKind::Norm) => Some(if *tau < 0.0 { 0.0 } else { chi2.cdf(tau * tau) }),
        (BiasDef::Censor { tau }, TargetKind::Component { j }) if *j < 3 => Some(normal.cdf(*tau)),
        _ => None,
    }
}

/// Monte Carlo estimate of every `Omega_k` from `samples` unbiased draws.
pub fn monte_carlo_omega(spec: &ScenarioSpec, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = spec.sampler()?;
    let functions = spec.functions();
    const CHUNK: usize = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let m = CHUNK.min(samples - c * CHUNK);
            let mut acc = vec![0.0; functions.len()];
            for _ in 0..m {
                let z = sampler.draw(&mut rng);
                for (a, f) in acc.iter_mut().zip(&functions) {
                    *a += f.eval(&z);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; functions.len()];
    for s in sums {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    Ok(total.iter().map(|t| t / samples as f64).collect())
}

/// Number of base draws used when `Omega` or a true risk has no closed form.
pub const GROUND_TRUTH_SAMPLES: usize = 10_000_000;

/// True normalizers: closed form under the Gaussian base when available,
/// otherwise a large Monte Carlo estimate.
pub fn true_omega(spec: &ScenarioSpec) -> Result<Vec<f64>> {
    if spec.base_distribution == BaseDistribution::StandardGaussian3d {
        let closed: Option<Vec<f64>> = spec
            .biasing_defs
            .iter()
            .map(|d| closed_form_omega(d, &spec.target))
            .collect();
        if let Some(v) = closed {
            return Ok(v);
        }
    }
    monte_carlo_omega(spec, GROUND_TRUTH_SAMPLES, spec.seed ^ 0x5EED)
}

/// The 16 linear predictors over which maximal risk deviations are measured:
/// slope on `x_0` in {-0.5, 0, 0.25, 0.5} times intercept in {0.5, 1, 1.5, 2}.
pub fn theta_grid(dim: usize, task: Task) -> Vec<LinearModel> {
    let mut grid = Vec::with_capacity(16);
    for slope in [-0.5, 0.0, 0.25, 0.5] {
        for intercept in [0.5, 1.0, 1.5, 2.0] {
            let mut c = vec![0.0; dim + 1];
            c[0] = slope;
            c[dim] = intercept;
            grid.push(LinearModel { coefficients: c, task });
        }
    }
    grid
}

/// Squared-error risk of an affine predictor for `y = |x|`, `x ~ N(0, I_3)`:
/// `E|x|^2 + |beta|^2 + b^2 - 2 b E|x|` (the cross term `E[|x| x]` vanishes).
pub fn gaussian_norm_risk(model: &LinearModel) -> f64 {
    let slopes: f64 = model.slopes().iter().map(|b| b * b).sum();
    let b = model.intercept();
    3.0 + slopes + b * b - 2.0 * b * mean_norm_gaussian_3d()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub mean_omega_error: f64,
    pub mean_sup_deviation: f64,
    pub replicates_ok: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckReport {
    pub scenario: String,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log(mean |Omega_hat - Omega|)` against `log n`;
    /// `None` when some error is exactly zero (degenerate).
    pub omega_slope: Option<f64>,
    pub sup_deviation_slope: Option<f64>,
}

impl RateCheckReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["scenario", "n", "mean_omega_error", "mean_sup_deviation", "replicates_ok", "failures"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                self.scenario.clone(),
                r.n.to_string(),
                r.mean_omega_error.to_string(),
                r.mean_sup_deviation.to_string(),
                r.replicates_ok.to_string(),
                r.failures.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let slope = |s: Option<f64>| s.map_or_else(|| "degenerate".to_string(), |v| v.to_string());
        w.write_record([self.scenario.clone(), "slope".into(), slope(self.omega_slope), slope(self.sup_deviation_slope), String::new(), String::new()])
            .map_err(csv_err)?;
        finish_csv(w)
    }
}

/// Least-squares slope of `log y` on `log x`; `None` if any `y <= 0`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Check the `1/sqrt(n)` behaviour of the normalizer estimates and of the
/// debiased risk.
///
/// For each total size in `n_grid` the template's proportions are kept and
/// `replicates` independent datasets are drawn. Reported per size: the mean
/// Euclidean error `|Omega_hat - Omega|` and the mean of the maximal risk
/// deviation over [`theta_grid`]; then the log-log slopes of both.
pub fn rate_check(
    template: &ScenarioSpec,
    n_grid: &[usize],
    replicates: usize,
    solver: &SolverConfig,
) -> Result<RateCheckReport> {
    template.validate()?;
    if n_grid.is_empty() || replicates == 0 {
        return Err(Error::Config("rate check needs sizes and at least one replicate".into()));
    }
    let omega = true_omega(template)?;
    let sampler = template.sampler()?;
    let functions = template.functions();

    let (task, loss) = match template.target {
        TargetKind::LogisticLabel { .. } => (Task::BinaryClassification, LossSpec::ZERO_ONE),
        _ => (Task::Regression, LossSpec::SQUARED),
    };
    let dim = sampler.draw(&mut stream_rng(0, 0)).dim();
    let grid = theta_grid(dim, task);
    let reference: Vec<f64> = if sampler.is_standard_gaussian() && template.target == TargetKind::Norm {
        grid.iter().map(gaussian_norm_risk).collect()
    } else {
        let mut rng = stream_rng(template.seed ^ 0x7157, u64::MAX);
        let big: Vec<Observation> = (0..GROUND_TRUTH_SAMPLES / 10).map(|_| sampler.draw(&mut rng)).collect();
        let big = DebiasedDistribution::uniform(big)?;
        grid.iter()
            .map(|m| weighted_risk(m, &big, loss))
            .collect::<Result<_>>()?
    };
    let reference_of = |m: &LinearModel| {
        let i = grid.iter().position(|g| g == m).expect("grid member");
        reference[i]
    };

    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let mut spec = template.scaled_to(n);
        spec.seed = template.seed.wrapping_add(splitmix64(gi as u64 + 1));
        let outcomes: Vec<Option<(f64, f64)>> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let (pooled, _) = generate_with(&spec, &sampler, &functions, rep as u64).ok()?;
                let res = solve_w(&pooled, solver).ok()?;
                let err = res
                    .omega_hat
                    .iter()
                    .zip(&omega)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let dist = res.distribution(&pooled);
                let dev = sup_deviation(&dist, reference_of, &grid, loss).ok()?;
                Some((err, dev))
            })
            .collect();
        let ok: Vec<(f64, f64)> = outcomes.iter().flatten().copied().collect();
        let m = ok.len().max(1) as f64;
        rows.push(RateRow {
            n: spec.total_size(),
            mean_omega_error: ok.iter().map(|o| o.0).sum::<f64>() / m,
            mean_sup_deviation: ok.iter().map(|o| o.1).sum::<f64>() / m,
            replicates_ok: ok.len(),
            failures: replicates - ok.len(),
        });
    }

    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let degenerate_floor = 1e-14;
    let omega_err: Vec<f64> = rows.iter().map(|r| r.mean_omega_error).collect();
    let omega_slope = if omega_err.iter().all(|e| *e > degenerate_floor) {
        log_log_slope(&ns, &omega_err)
    } else {
        None
    };
    let devs: Vec<f64> = rows.iter().map(|r| r.mean_sup_deviation).collect();
    Ok(RateCheckReport {
        scenario: template.name.clone(),
        rows,
        omega_slope,
        sup_deviation_slope: log_log_slope(&ns, &devs),
    })
}
