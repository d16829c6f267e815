//! Logistic regression when 80% of the labelled data comes from the region
//! x0 > 0.5. Reports test accuracy for each training distribution.

use debias_erm::scenario::{run_experiment, ScenarioSpec};
use debias_erm::SolverConfig;

fn main() -> debias_erm::Result<()> {
    let mut spec = ScenarioSpec::preset("strat_class")?;
    spec.n_runs = 20;
    let report = run_experiment(&spec, &SolverConfig::default())?;
    for c in &report.cells {
        println!(
            "{:>14}: accuracy {:.4} +/- {:.4} ({} runs)",
            c.treatment.name(),
            c.mean,
            c.std,
            c.n_ok
        );
    }
    Ok(())
}
