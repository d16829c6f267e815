//! Right censoring: most targets are only observed when |x| <= 1.2. The
//! biasing function acts on the target, not on the features.

use debias_erm::scenario::{run_experiment, ScenarioSpec};
use debias_erm::SolverConfig;

fn main() -> debias_erm::Result<()> {
    let mut spec = ScenarioSpec::preset("censor")?;
    spec.n_runs = 20;
    let report = run_experiment(&spec, &SolverConfig::default())?;
    print!("{}", report.summary_csv()?);
    Ok(())
}
