//! Two ways to hand the debiased distribution to a learner: pass the weights
//! directly, or draw a synthetic unweighted training set from it.

use debias_erm::distribution::DebiasedDistribution;
use debias_erm::erm::{fit_weighted_least_squares, weighted_risk, LossSpec};
use debias_erm::scenario::{generate_scenario, ScenarioSpec};
use debias_erm::{solve_w, SolverConfig};

fn main() -> debias_erm::Result<()> {
    let spec = ScenarioSpec::preset("b")?;
    let (pooled, test) = generate_scenario(&spec, 1)?;
    let test = DebiasedDistribution::uniform(test)?;
    let debiased = solve_w(&pooled, &SolverConfig::default())?.distribution(&pooled);

    let plug_in = fit_weighted_least_squares(&debiased)?;
    println!("weights:   test MSE {:.4}", weighted_risk(&plug_in, &test, LossSpec::SQUARED)?);

    for m in [500, 1000, 5000] {
        let sample = DebiasedDistribution::uniform(debiased.resample(m, 42)?)?;
        let model = fit_weighted_least_squares(&sample)?;
        println!("resampled m={m:>4}: test MSE {:.4}", weighted_risk(&model, &test, LossSpec::SQUARED)?);
    }
    Ok(())
}
