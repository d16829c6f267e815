#![allow(dead_code)]

use debias_erm::{evaluate_bias_matrix, BiasingFunction, Observation, PooledData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scalars(xs: &[f64]) -> Vec<Observation> {
    xs.iter().copied().map(Observation::scalar).collect()
}

pub fn interval(a: f64, b: f64) -> BiasingFunction {
    BiasingFunction::indicator(format!("[{a},{b}]"), move |z| (a..=b).contains(&z.features[0]))
}

/// Instance with one indicator stratum on `[a, b]` and one unbiased stratum
/// on `[-2, 2]`, with at least one unbiased point inside `[a, b]`.
pub struct IntervalInstance {
    pub a: f64,
    pub b: f64,
    pub inside: Vec<f64>,
    pub unbiased: Vec<f64>,
}

impl IntervalInstance {
    pub fn random(r: &mut ChaCha8Rng) -> Self {
        let a = r.random_range(-1.5..0.5);
        let b = a + r.random_range(0.3..1.5);
        let n1 = r.random_range(3..60);
        let n2 = r.random_range(3..60);
        let inside: Vec<f64> = (0..n1).map(|_| r.random_range(a..b)).collect();
        let mut unbiased: Vec<f64> = (0..n2).map(|_| r.random_range(-2.0..2.0)).collect();
        if !unbiased.iter().any(|x| (a..=b).contains(x)) {
            unbiased[0] = 0.5 * (a + b);
        }
        Self { a, b, inside, unbiased }
    }

    pub fn pooled(&self) -> PooledData {
        evaluate_bias_matrix(
            vec![scalars(&self.inside), scalars(&self.unbiased)],
            vec![interval(self.a, self.b), BiasingFunction::whole_space()],
        )
        .unwrap()
    }

    pub fn indicator(&self, x: f64) -> f64 {
        if (self.a..=self.b).contains(&x) {
            1.0
        } else {
            0.0
        }
    }
}

/// Bump `exp(-(x - c)^2 / 2)` on the first coordinate, bounded by 1.
pub fn bump(c: f64) -> BiasingFunction {
    BiasingFunction::custom(format!("bump({c})"), 1.0, 0.0, move |z| {
        (-(z.features[0] - c).powi(2) / 2.0).exp()
    })
    .unwrap()
}

/// `K` strata with overlapping smooth biasing functions and `n` pooled rows.
pub fn smooth_instance(r: &mut ChaCha8Rng, k: usize, n: usize) -> PooledData {
    let centers: Vec<f64> = (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k.max(2) - 1) as f64).collect();
    let mut sizes = vec![n / k; k];
    sizes[0] += n - sizes.iter().sum::<usize>();
    let samples = sizes
        .iter()
        .zip(&centers)
        .map(|(&m, &c)| {
            (0..m)
                .map(|_| Observation::new(vec![c + r.random_range(-1.5..1.5), r.random_range(-1.0..1.0)]))
                .collect()
        })
        .collect();
    evaluate_bias_matrix(samples, centers.iter().map(|&c| bump(c)).collect()).unwrap()
}
