//! Estimated normalizers and debiased risks approach the truth at rate
//! n^(-1/2): the fitted log-log slopes should sit near -0.5.

use debias_erm::scenario::{rate_check, ScenarioSpec};
use debias_erm::SolverConfig;

fn main() -> debias_erm::Result<()> {
    let spec = ScenarioSpec::preset("b")?;
    let report = rate_check(&spec, &[500, 1000, 2000, 4000], 40, &SolverConfig::default())?;
    for r in &report.rows {
        println!(
            "n = {:>5}: |Omega_hat - Omega| = {:.5}, sup risk deviation = {:.5}",
            r.n, r.mean_omega_error, r.mean_sup_deviation
        );
    }
    println!("slopes: Omega {:?}, risk {:?}", report.omega_slope, report.sup_deviation_slope);
    Ok(())
}
