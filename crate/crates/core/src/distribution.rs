//! Weighted empirical distributions over pooled observations.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bias_model::Observation;
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Observations paired with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedDistribution {
    observations: Vec<Observation>,
    weights: Vec<f64>,
}

impl DebiasedDistribution {
    pub fn new(observations: Vec<Observation>, weights: Vec<f64>) -> Result<Self> {
        if observations.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} observations but {} weights",
                observations.len(),
                weights.len()
            )));
        }
        if observations.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                weights[i]
            )));
        }
        let s: f64 = weights.iter().sum();
        // Summation rounding grows with n.
        let tol = SUM_TOL.max(4.0 * f64::EPSILON * weights.len() as f64);
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!("weights sum to {s}, not 1")));
        }
        Ok(Self {
            observations,
            weights,
        })
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_unnormalized(observations: Vec<Observation>, weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidInput(format!("weights sum to {s}")));
        }
        Self::new(observations, weights.iter().map(|w| w / s).collect())
    }

    pub fn uniform(observations: Vec<Observation>) -> Result<Self> {
        let n = observations.len();
        Self::new(observations, vec![1.0 / n as f64; n])
    }

    pub(crate) fn from_parts_unchecked(observations: Vec<Observation>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(observations.len(), weights.len());
        Self {
            observations,
            weights,
        }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Observation, f64)> + '_ {
        self.observations.iter().zip(self.weights.iter().copied())
    }

    /// `sum_i w_i f(z_i)`
    pub fn expectation<F: Fn(&Observation) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(z, w)| w * f(z)).sum()
    }

    /// Keeps only the rows for which `keep` is true and renormalizes.
    pub fn restrict<F: Fn(usize) -> bool>(&self, keep: F) -> Result<Self> {
        let (obs, w): (Vec<_>, Vec<_>) = self
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (z, w))| (z.clone(), w))
            .unzip();
        Self::from_unnormalized(obs, &w)
    }

    /// Draw `m` i.i.d. observations from the categorical law with
    /// probabilities given by the weights. Deterministic given `seed`.
    pub fn resample(&self, m: usize, seed: u64) -> Result<Vec<Observation>> {
        Ok(self
            .resample_indices(m, seed)?
            .into_iter()
            .map(|i| self.observations[i].clone())
            .collect())
    }

    pub fn resample_indices(&self, m: usize, seed: u64) -> Result<Vec<usize>> {
        if m == 0 {
            return Err(Error::InvalidInput("resample size must be at least 1".into()));
        }
        let index = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::InvalidInput(format!("cannot sample from weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..m).map(|_| index.sample(&mut rng)).collect())
    }
}

/// Free-function form of [`DebiasedDistribution::resample`].
pub fn resample(dist: &DebiasedDistribution, m: usize, seed: u64) -> Result<Vec<Observation>> {
    dist.resample(m, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(n: usize) -> Vec<Observation> {
        (0..n).map(|i| Observation::scalar(i as f64)).collect()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DebiasedDistribution::new(pts(2), vec![0.5, 0.6]).is_err());
        assert!(DebiasedDistribution::new(pts(2), vec![1.5, -0.5]).is_err());
        assert!(DebiasedDistribution::new(pts(2), vec![1.0]).is_err());
    }

    #[test]
    fn point_mass_resamples_to_first() {
        let d = DebiasedDistribution::new(pts(4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let draws = d.resample_indices(1000, 3).unwrap();
        assert!(draws.iter().all(|&i| i == 0));
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let n = 20;
        let m = n * 10_000;
        let d = DebiasedDistribution::uniform(pts(n)).unwrap();
        let mut counts = vec![0usize; n];
        for i in d.resample_indices(m, 11).unwrap() {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (p * (1.0 - p) / m as f64).sqrt();
        for c in counts {
            assert!((c as f64 / m as f64 - p).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn resample_is_deterministic() {
        let d = DebiasedDistribution::from_unnormalized(pts(5), &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(d.resample_indices(100, 9).unwrap(), d.resample_indices(100, 9).unwrap());
        assert!(d.resample(0, 1).is_err());
    }

    #[test]
    fn restrict_renormalizes() {
        let d = DebiasedDistribution::uniform(pts(4)).unwrap();
        let r = d.restrict(|i| i >= 2).unwrap();
        assert_eq!(r.weights(), &[0.5, 0.5]);
        assert_eq!(r.observations()[0].features[0], 2.0);
    }
}
