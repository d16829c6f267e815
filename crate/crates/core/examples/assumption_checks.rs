//! Identifiability diagnostics: support cover, the overlap graph and the
//! stratum digraph, on an overlapping and on a disjoint design.

use debias_erm::assumptions::{assess, empirical_strong_connectivity, DEFAULT_KAPPA};
use debias_erm::{evaluate_bias_matrix, BiasingFunction, Observation};

fn points(xs: &[f64]) -> Vec<Observation> {
    xs.iter().copied().map(Observation::scalar).collect()
}

fn main() -> debias_erm::Result<()> {
    let left = || BiasingFunction::indicator("x<1", |z| z.features[0] < 1.0);
    let right = || BiasingFunction::indicator("x>0", |z| z.features[0] > 0.0);

    let overlapping = evaluate_bias_matrix(
        vec![points(&[-1.0, 0.5, 0.8]), points(&[0.3, 1.5, 2.0])],
        vec![left(), right()],
    )?;
    let disjoint = evaluate_bias_matrix(
        vec![points(&[-1.0, -0.5]), points(&[1.5, 2.0])],
        vec![left(), right()],
    )?;

    for (name, pooled) in [("overlapping", &overlapping), ("disjoint", &disjoint)] {
        let report = assess(pooled, DEFAULT_KAPPA, None)?;
        let (graph, _) = empirical_strong_connectivity(pooled);
        println!("{name}:");
        println!("  support cover       {}", report.support_cover_ok);
        println!("  overlap components  {}", report.laplacian_zero_multiplicity);
        println!("  strongly connected  {}", report.strongly_connected);
        println!("  digraph components  {:?}", graph.strongly_connected_components());
        for m in &report.messages {
            println!("  note: {m}");
        }
    }
    Ok(())
}
