mod common;

use common::*;
use debias_erm::solver::{
    compute_weights, estimate_omega, gamma_hat, gradient_d, hessian_d, objective_d, LogCoordinates,
};
use debias_erm::{evaluate_bias_matrix, solve_w, BiasingFunction, PooledData, SolverConfig, SolverMethod};
use rand::Rng;

/// `Gamma_2(W_1, 1) - 1` for one indicator stratum plus an unbiased one,
/// written out directly from the definition.
fn gamma2_minus_one(inst: &IntervalInstance, w1: f64) -> f64 {
    let n1 = inst.inside.len() as f64;
    let n2 = inst.unbiased.len() as f64;
    let n = n1 + n2;
    let (l1, l2) = (n1 / n, n2 / n);
    let s: f64 = inst
        .inside
        .iter()
        .chain(&inst.unbiased)
        .map(|&x| 1.0 / (l1 * inst.indicator(x) / w1 + l2))
        .sum();
    s / n - 1.0
}

/// Root of the scalar equation by bisection on `log W_1`, then
/// `Omega_1 = W_1 / mean(1 / sum_k lambda_k omega_k / W_k)`.
fn oracle_omega1(inst: &IntervalInstance) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma2_minus_one(inst, mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w1 = (0.5 * (lo + hi)).exp();
    let n1 = inst.inside.len() as f64;
    let n2 = inst.unbiased.len() as f64;
    let n = n1 + n2;
    let mean_inv: f64 = inst
        .inside
        .iter()
        .chain(&inst.unbiased)
        .map(|&x| 1.0 / ((n1 / n) * inst.indicator(x) / w1 + n2 / n))
        .sum::<f64>()
        / n;
    w1 / mean_inv
}

#[test]
fn two_strata_match_scalar_root() {
    let mut r = rng(20);
    for _ in 0..25 {
        let inst = IntervalInstance::random(&mut r);
        let res = solve_w(&inst.pooled(), &SolverConfig::default()).unwrap();
        let oracle = oracle_omega1(&inst);
        assert!((res.omega_hat[0] - oracle).abs() <= 1e-10, "{} vs {oracle}", res.omega_hat[0]);
        // Counting form for indicators: share of unbiased points inside.
        let m = inst.unbiased.iter().filter(|x| inst.indicator(**x) == 1.0).count() as f64;
        assert!((oracle - m / inst.unbiased.len() as f64).abs() <= 1e-10);
        assert!((res.omega_hat[1] - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn four_point_weights_exact() {
    let pooled = evaluate_bias_matrix(
        vec![scalars(&[0.2, 0.7]), scalars(&[0.5, 1.5])],
        vec![interval(0.0, 1.0), BiasingFunction::whole_space()],
    )
    .unwrap();
    for method in [SolverMethod::FixedStepGradient, SolverMethod::QuasiNewton, SolverMethod::Auto] {
        let res = solve_w(&pooled, &SolverConfig { method, ..Default::default() }).unwrap();
        for (w, e) in res.weights.iter().zip([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5]) {
            assert!((w - e).abs() <= 1e-12, "{method:?}: {:?}", res.weights);
        }
        assert!((res.w_hat[0] - 0.5).abs() <= 1e-12);
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_u(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> LogCoordinates {
    LogCoordinates::new((0..k).map(|_| r.random_range(-1.5..0.5)).collect()).unwrap()
}

fn shifted(u: &LogCoordinates, i: usize, h: f64) -> LogCoordinates {
    let mut v = u.as_slice().to_vec();
    v[i] += h;
    LogCoordinates::new(v).unwrap()
}

fn instances() -> Vec<PooledData> {
    let mut r = rng(4);
    let mut out = Vec::new();
    for i in 0..50 {
        let k = [2, 3, 5][i % 3];
        let n = [20, 200][(i / 3) % 2];
        out.push(smooth_instance(&mut r, k, n));
    }
    out
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(5);
    let h = 1e-6;
    for p in instances() {
        let u = random_u(&mut r, p.k());
        let g = gradient_d(&u, &p).unwrap();
        let fd: Vec<f64> = (0..p.k())
            .map(|i| {
                (objective_d(&shifted(&u, i, h), &p).unwrap() - objective_d(&shifted(&u, i, -h), &p).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let err = max_abs(g.iter().zip(&fd).map(|(a, b)| a - b));
        let scale = max_abs(g.iter().copied()).max(1e-2);
        assert!(err / scale < 1e-5, "relative error {}", err / scale);
    }
}

#[test]
fn hessian_matches_differenced_gradient() {
    let mut r = rng(6);
    let h = 1e-5;
    for p in instances() {
        let k = p.k();
        let u = random_u(&mut r, k);
        let hess = hessian_d(&u, &p).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..k {
            let gp = gradient_d(&shifted(&u, j, h), &p).unwrap();
            let gm = gradient_d(&shifted(&u, j, -h), &p).unwrap();
            for i in 0..k {
                err = err.max(((gp[i] - gm[i]) / (2.0 * h) - hess[(i, j)]).abs());
            }
        }
        let scale = hess.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-2);
        assert!(err / scale < 1e-4, "relative error {}", err / scale);
        let min_eig = hess.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-10, "{min_eig}");
    }
}

#[test]
fn converged_solutions_are_stationary() {
    for p in instances() {
        let res = solve_w(&p, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.max_abs_residual() <= 1e-9);
        let g = gamma_hat(&res.w_hat, &p).unwrap();
        assert!(max_abs(g.iter().map(|x| x - 1.0)) <= 1e-9);
    }
}

#[test]
fn degree_zero_homogeneity() {
    let mut r = rng(7);
    for p in instances().into_iter().take(20) {
        let w: Vec<f64> = (0..p.k()).map(|_| r.random_range(0.2..3.0)).collect();
        let g = gamma_hat(&w, &p).unwrap();
        let pi = compute_weights(&w, &p).unwrap();
        let om = estimate_omega(&w, &p).unwrap();
        for c in [1e-3, 0.37, 2.0, 1e4] {
            let cw: Vec<f64> = w.iter().map(|x| c * x).collect();
            let gc = gamma_hat(&cw, &p).unwrap();
            assert!(max_abs(g.iter().zip(&gc).map(|(a, b)| a - b)) <= 1e-12);
            let pic = compute_weights(&cw, &p).unwrap();
            assert!(max_abs(pi.weights().iter().zip(pic.weights()).map(|(a, b)| a - b)) <= 1e-12);
            let omc = estimate_omega(&cw, &p).unwrap();
            assert!(max_abs(om.iter().zip(&omc).map(|(a, b)| (a - b) / a)) <= 1e-12);
        }
    }
}

#[test]
fn weights_reproduce_normalizers() {
    for p in instances().into_iter().take(20) {
        let res = solve_w(&p, &SolverConfig::default()).unwrap();
        for k in 0..p.k() {
            let s: f64 = (0..p.n()).map(|r| res.weights[r] * p.omega(r, k)).sum();
            assert!((s - res.omega_hat[k]).abs() <= 1e-10, "{s} vs {}", res.omega_hat[k]);
        }
        assert!((res.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn solution_is_unique_across_starts() {
    for p in instances().into_iter().step_by(5) {
        let base = solve_w(&p, &SolverConfig::default()).unwrap();
        for seed in 0..4 {
            let cfg = SolverConfig {
                init_jitter: 1.0,
                seed,
                method: SolverMethod::QuasiNewton,
                ..Default::default()
            };
            let res = solve_w(&p, &cfg).unwrap();
            assert!(max_abs(res.omega_hat.iter().zip(&base.omega_hat).map(|(a, b)| a - b)) <= 1e-9);
        }
    }
}

#[test]
fn invariant_under_row_and_stratum_permutation() {
    let mut r = rng(8);
    let inst = IntervalInstance::random(&mut r);
    let base = solve_w(&inst.pooled(), &SolverConfig::default()).unwrap();

    let mut rev = inst.inside.clone();
    rev.reverse();
    let p = evaluate_bias_matrix(
        vec![scalars(&rev), scalars(&inst.unbiased)],
        vec![interval(inst.a, inst.b), BiasingFunction::whole_space()],
    )
    .unwrap();
    let res = solve_w(&p, &SolverConfig::default()).unwrap();
    assert!(max_abs(res.omega_hat.iter().zip(&base.omega_hat).map(|(a, b)| a - b)) <= 1e-12);

    let swapped = evaluate_bias_matrix(
        vec![scalars(&inst.unbiased), scalars(&inst.inside)],
        vec![BiasingFunction::whole_space(), interval(inst.a, inst.b)],
    )
    .unwrap();
    let res = solve_w(&swapped, &SolverConfig::default()).unwrap();
    assert!((res.omega_hat[0] - base.omega_hat[1]).abs() <= 1e-10);
    assert!((res.omega_hat[1] - base.omega_hat[0]).abs() <= 1e-10);
}
