//! Command-line front end.
//!
//! Exit codes: 0 success, 1 parse/schema/config error, 2 assumption failure,
//! 3 solver non-convergence. Files written under `--out` have fixed names:
//! `report.json`, `assumptions.json`, `weights.csv`, `model.json`,
//! `predictions.csv`, `experiment.csv`, `runs.csv`, `rate_check.csv`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::assumptions::{assess, AssumptionReport, DEFAULT_KAPPA};
use crate::bias_model::PooledData;
use crate::distribution::DebiasedDistribution;
use crate::erm::{fit_weighted_least_squares, fit_weighted_logistic, LinearModel, LogisticOptions, Task};
use crate::error::Error;
use crate::io::{self, ObservationTable, TargetColumn};
use crate::scenario::{rate_check, run_experiment, ScenarioSpec};
use crate::solver::{solve_w, SolverConfig, SolverMethod, SolverResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "debias", version, about = "Debiasing weights for multiple biased samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check support cover and strong connectivity of the stratum digraph.
    Validate(ValidateArgs),
    /// Solve for the debiasing weights; writes report.json and weights.csv.
    Solve(SolveArgs),
    /// Solve and write only weights.csv.
    Weights(SolveArgs),
    /// Fit a weighted linear or logistic model; writes model.json and predictions.csv.
    Fit(FitArgs),
    /// Run a scenario experiment; writes experiment.csv and runs.csv.
    Simulate(SimulateArgs),
    /// Monte Carlo convergence-rate check; writes rate_check.csv.
    RateCheck(RateCheckArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Observation CSV (x0.., optional y, sample_id).
    #[arg(long)]
    pub data: PathBuf,
    /// Biasing configuration (TOML or JSON).
    #[arg(long)]
    pub bias: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    FixedStep,
    QuasiNewton,
    Auto,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub solver_seed: Option<u64>,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        if let Some(m) = self.method {
            c.method = match m {
                MethodArg::FixedStep => SolverMethod::FixedStepGradient,
                MethodArg::QuasiNewton => SolverMethod::QuasiNewton,
                MethodArg::Auto => SolverMethod::Auto,
            };
        }
        if let Some(t) = self.grad_tol {
            c.grad_tol = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        c.step_size = self.step_size.or(c.step_size);
        if let Some(j) = self.jitter {
            c.init_jitter = j;
        }
        if let Some(s) = self.solver_seed {
            c.seed = s;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Proceed even when the stratum digraph is not strongly connected.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingArg {
    Debiased,
    Standard,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, value_enum, default_value = "regression")]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "debiased")]
    pub weighting: WeightingArg,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Named preset (a-l, censor, strat_class).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Scenario document (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl ScenarioArgs {
    fn spec(&self) -> Result<ScenarioSpec, Error> {
        let mut spec = match (&self.preset, &self.config) {
            (Some(p), _) => ScenarioSpec::preset(p)?,
            (None, Some(c)) => io::read_scenario_spec(c)?,
            (None, None) => return Err(Error::Config("either --preset or --config is required".into())),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RateCheckArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![500usize, 1000, 2000, 4000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Solve(a) => cmd_solve(&a, true),
        Command::Weights(a) => cmd_solve(&a, false),
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::RateCheck(a) => cmd_rate_check(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error that aborted a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        Error::LogOfZero { .. } => EXIT_ASSUMPTION,
        _ => EXIT_INPUT,
    }
}

type CmdResult = Result<i32, Error>;

fn out_dir(out: &Option<PathBuf>) -> Result<Option<&Path>, Error> {
    match out {
        Some(p) => {
            io::ensure_dir(p)?;
            Ok(Some(p.as_path()))
        }
        None => Ok(None),
    }
}

fn load(data: &DataArgs, target: TargetColumn) -> Result<(ObservationTable, PooledData, Vec<usize>), Error> {
    let defs = io::read_bias_config(&data.bias)?;
    let table = io::read_observation_table(&data.data, target)?;
    let (pooled, map) = table.to_pooled(&defs)?;
    Ok((table, pooled, map))
}

fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<(), Error> {
    match dir {
        Some(d) => io::write_text(&d.join(name), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_validate(a: &ValidateArgs) -> CmdResult {
    let dir = out_dir(&a.data.out)?;
    let (_, pooled, _) = load(&a.data, TargetColumn::Real)?;
    let report = assess(&pooled, a.kappa, None)?;
    let text = io::to_json_pretty(&report)?;
    print!("{text}");
    if let Some(d) = dir {
        io::write_text(&d.join("report.json"), &text)?;
    }
    Ok(if report.passes() { EXIT_OK } else { EXIT_ASSUMPTION })
}

#[derive(Serialize)]
struct NotConvergedDump<'a> {
    converged: bool,
    #[serde(rename = "W_hat")]
    w_hat: &'a [f64],
    max_abs_gamma_residual: f64,
    iterations: usize,
}

/// Gate on the assumptions, then solve. `Err(code)` carries an early exit.
fn checked_solve(
    a: &SolveArgs,
    pooled: &PooledData,
    dir: Option<&Path>,
) -> Result<Result<(AssumptionReport, SolverResult), i32>, Error> {
    let report = assess(pooled, DEFAULT_KAPPA, None)?;
    if let Some(d) = dir {
        io::write_text(&d.join("assumptions.json"), &io::to_json_pretty(&report)?)?;
    }
    if !report.passes() && !a.force {
        for m in &report.messages {
            eprintln!("assumption check failed: {m}");
        }
        eprintln!("rerun with --force to solve anyway");
        return Ok(Err(EXIT_ASSUMPTION));
    }
    match solve_w(pooled, &a.solver.config()) {
        Ok(res) => Ok(Ok((report, res))),
        Err(Error::NotConverged {
            w_hat,
            residual,
            iterations,
        }) => {
            let dump = NotConvergedDump {
                converged: false,
                w_hat: &w_hat,
                max_abs_gamma_residual: residual,
                iterations,
            };
            let text = io::to_json_pretty(&dump)?;
            match dir {
                Some(d) => io::write_text(&d.join("report.json"), &text)?,
                None => print!("{text}"),
            }
            eprintln!("error: solver did not converge (max |Gamma - 1| = {residual:e} after {iterations} iterations)");
            Ok(Err(EXIT_NOT_CONVERGED))
        }
        Err(e) => Err(e),
    }
}

fn cmd_solve(a: &SolveArgs, with_report: bool) -> CmdResult {
    let dir = out_dir(&a.data.out)?;
    let (_, pooled, map) = load(&a.data, TargetColumn::Real)?;
    let (_, res) = match checked_solve(a, &pooled, dir)? {
        Ok(v) => v,
        Err(code) => return Ok(code),
    };
    let weights = io::to_input_order(&res.weights, &map);
    if with_report {
        let text = io::to_json_pretty(&res)?;
        match dir {
            Some(d) => io::write_text(&d.join("report.json"), &text)?,
            None => print!("{text}"),
        }
    }
    let csv = io::weights_csv(&weights)?;
    match dir {
        Some(d) => io::write_text(&d.join("weights.csv"), &csv)?,
        None if !with_report => print!("{csv}"),
        None => {}
    }
    if res.non_unique {
        eprintln!("warning: stratum digraph is not strongly connected; weights are not unique");
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ModelDocument<'a> {
    task: Task,
    weighting: WeightingArg,
    /// Slopes for x0.. followed by the intercept.
    coefficients: &'a [f64],
    non_unique: bool,
}

fn cmd_fit(a: &FitArgs) -> CmdResult {
    let dir = out_dir(&a.solve.data.out)?;
    let target = match a.task {
        TaskArg::Regression => TargetColumn::Real,
        TaskArg::Classification => TargetColumn::Label,
    };
    let (table, pooled, _) = load(&a.solve.data, target)?;
    if !table.has_target {
        return Err(Error::Schema("fit requires a 'y' column".into()));
    }
    let (dist, non_unique) = match a.weighting {
        WeightingArg::Standard => (pooled.pooled_empirical_measure(), false),
        WeightingArg::Debiased => match checked_solve(&a.solve, &pooled, dir)? {
            Ok((_, res)) => (res.distribution(&pooled), res.non_unique),
            Err(code) => return Ok(code),
        },
    };
    let model = fit(a.task, &dist)?;
    let doc = ModelDocument {
        task: model.task,
        weighting: a.weighting,
        coefficients: &model.coefficients,
        non_unique,
    };
    let preds: Vec<f64> = table.rows.iter().map(|r| model.predict(&r.observation.features)).collect();
    let model_json = io::to_json_pretty(&doc)?;
    match dir {
        Some(d) => {
            io::write_text(&d.join("model.json"), &model_json)?;
            io::write_text(&d.join("predictions.csv"), &io::predictions_csv(&preds)?)?;
        }
        None => print!("{model_json}"),
    }
    Ok(EXIT_OK)
}

fn fit(task: TaskArg, dist: &DebiasedDistribution) -> Result<LinearModel, Error> {
    match task {
        TaskArg::Regression => fit_weighted_least_squares(dist),
        TaskArg::Classification => fit_weighted_logistic(dist, LogisticOptions::default()),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let dir = out_dir(&a.scenario.out)?;
    let mut spec = a.scenario.spec()?;
    if let Some(r) = a.runs {
        spec.n_runs = r;
    }
    let report = run_experiment(&spec, &a.scenario.solver.config())?;
    let summary = report.summary_csv()?;
    emit(dir, "experiment.csv", &summary)?;
    if let Some(d) = dir {
        io::write_text(&d.join("runs.csv"), &report.runs_csv()?)?;
        print!("{summary}");
    }
    Ok(EXIT_OK)
}

fn cmd_rate_check(a: &RateCheckArgs) -> CmdResult {
    let dir = out_dir(&a.scenario.out)?;
    let spec = a.scenario.spec()?;
    let report = rate_check(&spec, &a.sizes, a.replicates, &a.scenario.solver.config())?;
    let csv = report.to_csv()?;
    emit(dir, "rate_check.csv", &csv)?;
    if dir.is_some() {
        print!("{csv}");
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn solver_overrides_apply() {
        let cli = Cli::try_parse_from([
            "debias", "solve", "--data", "d.csv", "--bias", "b.toml", "--method", "quasi-newton", "--grad-tol", "1e-10",
        ])
        .unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        let c = a.solver.config();
        assert_eq!(c.method, SolverMethod::QuasiNewton);
        assert_eq!(c.grad_tol, 1e-10);
        assert_eq!(c.max_iter, SolverConfig::default().max_iter);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["debias", "simulate"]), EXIT_INPUT);
        assert_eq!(run(["debias", "nope"]), EXIT_INPUT);
        assert_eq!(run(["debias", "simulate", "--preset", "zz", "--runs", "1"]), EXIT_INPUT);
    }
}
