//! Compare the solver methods on one simulated dataset and inspect the
//! potential's curvature at the solution.

use debias_erm::scenario::{generate_scenario, ScenarioSpec};
use debias_erm::solver::{gradient_d, objective_d};
use debias_erm::{solve_w, SolverConfig, SolverMethod};

fn main() -> debias_erm::Result<()> {
    let spec = ScenarioSpec::preset("f")?;
    let (pooled, _) = generate_scenario(&spec, 0)?;

    for method in [SolverMethod::FixedStepGradient, SolverMethod::QuasiNewton, SolverMethod::Auto] {
        let config = SolverConfig {
            method,
            record_trace: true,
            ..SolverConfig::default()
        };
        match solve_w(&pooled, &config) {
            Ok(res) => {
                let u = res.log_coordinates(&pooled);
                let grad = gradient_d(&u, &pooled)?;
                println!(
                    "{method:?}: {} iterations, used {:?}, D = {:.12}, |grad| = {:.1e}, min Hessian eigenvalue {:.3e}",
                    res.iterations,
                    res.method_used,
                    objective_d(&u, &pooled)?,
                    grad.iter().fold(0.0f64, |m, g| m.max(g.abs())),
                    res.hessian_min_eig_at_solution,
                );
                println!("  W_hat = {:?}", res.w_hat);
                if let Some(last) = res.trace.last() {
                    println!("  trace has {} points, last {:?}", res.trace.len(), last);
                }
            }
            Err(e) => println!("{method:?}: {e}"),
        }
    }
    Ok(())
}
