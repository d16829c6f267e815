//! Two strata on the real line: one restricted to [0, 1], one unrestricted.
//! With stratum-constant biasing functions the weights have a closed form:
//! W_1 = (unbiased points inside [0, 1]) / (size of the unbiased sample).

use debias_erm::{evaluate_bias_matrix, solve_w, BiasingFunction, Observation, SolverConfig};

fn main() -> debias_erm::Result<()> {
    let inside = vec![Observation::scalar(0.2), Observation::scalar(0.7)];
    let anywhere = vec![Observation::scalar(0.5), Observation::scalar(1.5)];
    let unit = BiasingFunction::indicator("[0,1]", |z| (0.0..=1.0).contains(&z.features[0]));

    let pooled = evaluate_bias_matrix(vec![inside, anywhere], vec![unit, BiasingFunction::whole_space()])?;
    let res = solve_w(&pooled, &SolverConfig::default())?;

    println!("W_hat     = {:?}", res.w_hat);
    println!("Omega_hat = {:?}", res.omega_hat);
    for ((k, i), w) in pooled.row_origins().zip(&res.weights) {
        println!("sample {k} row {i}: weight {w:.6}");
    }
    println!("max |Gamma - 1| = {:e} after {} iterations", res.max_abs_residual(), res.iterations);
    Ok(())
}
