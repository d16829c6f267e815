//! One run of the 90/10 norm-biased scenario: most training points lie in
//! the ball |x| <= 0.8, so plain least squares underestimates |x| elsewhere.

use debias_erm::distribution::DebiasedDistribution;
use debias_erm::erm::{fit_weighted_least_squares, weighted_risk, LossSpec};
use debias_erm::scenario::{generate_scenario, treatments, ScenarioSpec};
use debias_erm::{solve_w, SolverConfig};

fn main() -> debias_erm::Result<()> {
    let spec = ScenarioSpec::preset("b")?;
    let (pooled, test) = generate_scenario(&spec, 0)?;
    let test = DebiasedDistribution::uniform(test)?;

    let res = solve_w(&pooled, &SolverConfig::default())?;
    println!("Omega_hat = {:?}", res.omega_hat);

    for (treatment, train) in treatments(&spec, &pooled, &res.weights)? {
        let model = fit_weighted_least_squares(&train)?;
        let mse = weighted_risk(&model, &test, LossSpec::SQUARED)?;
        println!("{:>14}: test MSE {mse:.4}, coefficients {:.3?}", treatment.name(), model.coefficients);
    }
    Ok(())
}
