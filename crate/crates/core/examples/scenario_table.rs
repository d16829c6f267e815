//! Mean test MSE of least squares for every norm- and component-biased
//! preset. Pass a run count as the first argument (default 20).

use debias_erm::scenario::{run_experiment, Learner, ScenarioSpec, Treatment};
use debias_erm::SolverConfig;

fn main() -> debias_erm::Result<()> {
    let runs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    println!("{:>4} {:>10} {:>10} {:>10}", "", "standard", "debiased", "unbiased");
    for name in ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"] {
        let mut spec = ScenarioSpec::preset(name)?;
        spec.n_runs = runs;
        let report = run_experiment(&spec, &SolverConfig::default())?;
        let cell = |t| {
            report
                .cell(Learner::LinearRegression, t)
                .map_or_else(|| "-".to_string(), |c| format!("{:.3}", c.mean))
        };
        println!(
            "{name:>4} {:>10} {:>10} {:>10}",
            cell(Treatment::Standard),
            cell(Treatment::Debiased),
            cell(Treatment::UnbiasedOnly)
        );
    }
    Ok(())
}
