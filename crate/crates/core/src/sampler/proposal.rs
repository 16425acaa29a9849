//! Adaptive random-walk proposal and acceptance-rate scaling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::stats;

/// Draws before the empirical covariance is used.
pub const ADAPTATION_THRESHOLD: usize = 100;
/// Probability of the scaled empirical-covariance component.
pub const SCALED_WEIGHT: f64 = 0.95;
const SMALL_SD: f64 = 0.1;

/// A proposed point and which mixture component produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub scaled: bool,
}

/// Symmetric Gaussian random walk mixing `N(0, c^2 Sigma_hat)` with `N(0, 0.1^2 / dim I)`.
///
/// The scale `c` starts at `2.38 / sqrt(dim)`; only delayed acceptance tunes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRw {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    /// Running co-moment, `dim x dim` row-major.
    comoment: Vec<f64>,
    pub scale: f64,
    pub frozen: bool,
}

impl AdaptiveRw {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            scale: 2.38 / (dim as f64).sqrt(),
            frozen: false,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Empirical covariance of the recorded draws, or the identity before any spread exists.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.count < 2 {
            return DMatrix::identity(self.dim, self.dim);
        }
        DMatrix::from_row_slice(self.dim, self.dim, &self.comoment) / (self.count - 1) as f64
    }

    /// Welford update with the chain's current point.
    pub fn record(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.comoment[i * self.dim + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Proposal {
        let z: DVector<f64> = DVector::from_fn(self.dim, |_, _| rng.sample(StandardNormal));
        let pick: f64 = rng.random();
        if self.count >= ADAPTATION_THRESHOLD && pick < SCALED_WEIGHT {
            let cov = self.covariance();
            let jitter = 1e-10 * (cov.trace() / self.dim as f64).max(1e-300);
            let chol = cov
                .clone()
                .cholesky()
                .or_else(|| (cov + DMatrix::identity(self.dim, self.dim) * jitter).cholesky());
            if let Some(ch) = chol {
                let step = ch.l() * z * self.scale;
                return Proposal {
                    x: x.iter().zip(step.iter()).map(|(a, s)| a + s).collect(),
                    scaled: true,
                };
            }
        }
        let sd = SMALL_SD / (self.dim as f64).sqrt();
        Proposal {
            x: x.iter().zip(z.iter()).map(|(a, s)| a + sd * s).collect(),
            scaled: false,
        }
    }
}

/// Robbins-Monro step constant for a target acceptance rate in `dim` dimensions.
pub fn scale_step_constant(target: f64, dim: usize) -> f64 {
    let m = dim as f64;
    let a = -stats::normal_quantile(target / 2.0);
    (1.0 - 1.0 / m) * (2.0 * std::f64::consts::PI).sqrt() * (a * a / 2.0).exp() / (2.0 * a)
        + 1.0 / (m * target * (1.0 - target))
}

/// One search-then-converge update of the proposal scale on the log scale.
pub fn adapt_scale(scale: f64, accepted: bool, iteration: usize, target: f64, dim: usize) -> f64 {
    let indicator = if accepted { 1.0 } else { 0.0 };
    let step = scale_step_constant(target, dim);
    (scale.ln() + step * (indicator - target) / iteration.max(1) as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn small_component_only_before_threshold() {
        let mut rw = AdaptiveRw::new(2);
        let mut r = rng::stream(1, &[]);
        for _ in 0..ADAPTATION_THRESHOLD - 1 {
            rw.record(&[0.0, 0.0]);
        }
        assert!((0..500).all(|_| !rw.propose(&[0.0, 0.0], &mut r).scaled));
        rw.record(&[0.0, 0.0]);
        assert!((0..500).any(|_| rw.propose(&[0.0, 0.0], &mut r).scaled));
    }

    #[test]
    fn scaled_step_in_one_dimension() {
        let mut rw = AdaptiveRw::new(1);
        let mut r = rng::stream(2, &[]);
        // Points +-1 alternate so the empirical variance tends to 1.
        for i in 0..10_000 {
            rw.record(&[if i % 2 == 0 { 1.0 } else { -1.0 }]);
        }
        let steps: Vec<f64> = (0..40_000)
            .map(|_| rw.propose(&[0.0], &mut r))
            .filter(|p| p.scaled)
            .map(|p| p.x[0])
            .collect();
        let frac = steps.len() as f64 / 40_000.0;
        assert!((frac - 0.95).abs() < 0.01);
        let sd = stats::variance(&steps).sqrt();
        assert!((sd - 2.38).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn freezing_stops_adaptation() {
        let mut rw = AdaptiveRw::new(1);
        rw.record(&[1.0]);
        rw.frozen = true;
        rw.record(&[5.0]);
        assert_eq!(rw.count(), 1);
    }

    #[test]
    fn scale_moves_with_acceptance() {
        let s0 = 1.0;
        let mut s = s0;
        for it in 1..50 {
            let next = adapt_scale(s, false, it, 0.2, 1);
            assert!(next < s);
            s = next;
        }
        assert!(adapt_scale(s0, true, 10, 0.2, 3) > s0);
        // One-dimensional constant is 1 / (p (1 - p)).
        assert!((scale_step_constant(0.2, 1) - 6.25).abs() < 1e-12);
        // Increments shrink like 1 / iteration.
        let late = adapt_scale(s0, true, 10_000, 0.2, 1);
        assert!((late.ln()).abs() < 1e-3);
    }
}
