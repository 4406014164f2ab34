//! Client-side differential privacy: gradient clipping, sensitivity of the
//! aggregated update, Gaussian perturbation, and the epsilon -> sigma
//! calibration used for reporting.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Clip norm C. `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    /// Noise multiplier sigma.
    pub sigma: f64,
    /// Expected clients per round.
    pub k: usize,
    /// Total clients.
    pub m: usize,
    /// When set, overrides the Lemma formula S = 2CK/M. Used by the theory
    /// suites, where clipping is disabled but a finite noise scale is needed.
    #[serde(default)]
    pub sensitivity_override: Option<f64>,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(CoreError::InvalidParameter("clip_norm must be > 0".into()));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(CoreError::InvalidParameter("sigma must be finite and >= 0".into()));
        }
        if self.k == 0 || self.k > self.m {
            return Err(CoreError::InvalidParameter("need 1 <= K <= M".into()));
        }
        Ok(())
    }

    pub fn sensitivity(&self) -> f64 {
        match self.sensitivity_override {
            Some(s) => s,
            None => sensitivity(self.clip_norm, self.k, self.m),
        }
    }

    /// Per-coordinate noise standard deviation sigma * S.
    pub fn noise_std(&self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma * self.sensitivity()
        }
    }
}

/// Scales `g` to norm at most `c`, preserving direction.
pub fn clip(g: &mut [f64], c: f64) {
    if !c.is_finite() {
        return;
    }
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c {
        let scale = c / norm;
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
}

/// Sensitivity of the averaged clipped update: S = 2CK/M.
pub fn sensitivity(c: f64, k: usize, m: usize) -> f64 {
    2.0 * c * k as f64 / m as f64
}

/// Adds i.i.d. Gaussian noise with per-coordinate std `sigma * s`. Draws
/// nothing when sigma is zero, so zero-noise runs consume no randomness.
pub fn perturb(g: &mut [f64], s: f64, sigma: f64, rng: &mut ChaCha12Rng) {
    if sigma == 0.0 {
        return;
    }
    let std = sigma * s;
    for x in g.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *x += std * n;
    }
}

/// sigma = sqrt(2 ln(1.25/delta)) / eps.
pub fn sigma_from_epsilon(eps: f64, delta: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(CoreError::InvalidParameter("eps must be > 0".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CoreError::InvalidParameter("delta must be in (0,1)".into()));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn clip_noop_when_small() {
        let mut g = vec![0.3, 0.4];
        clip(&mut g, 2.5);
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn clip_scales_to_c() {
        let mut g = vec![3.0, 4.0];
        clip(&mut g, 2.5);
        assert!((g[0] - 1.5).abs() < 1e-15);
        assert!((g[1] - 2.0).abs() < 1e-15);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 2.5).abs() < 1e-15);
    }

    #[test]
    fn clip_zero_vector() {
        let mut g = vec![0.0, 0.0];
        clip(&mut g, 1.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn clip_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut g: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            clip(&mut g, 1.0);
            let once = g.clone();
            clip(&mut g, 1.0);
            for (a, b) in g.iter().zip(&once) {
                assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sensitivity_values() {
        assert!((sensitivity(1.0, 1, 4) - 0.5).abs() < 1e-15);
        // K=20, M=9343 from the celebrity-faces benchmark scale
        assert!((sensitivity(1.0, 20, 9343) - 4.2813e-3).abs() < 1e-7);
        assert!((sensitivity(3.0, 7, 7) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn perturb_sigma_zero_is_identity_and_draws_nothing() {
        let s = RngStream::new(9);
        let mut rng = s.stream(Purpose::Noise, 0, 0);
        let before = rng.clone();
        let mut g = vec![1.0, -2.0];
        perturb(&mut g, 1.0, 0.0, &mut rng);
        assert_eq!(g, vec![1.0, -2.0]);
        assert_eq!(rng, before);
    }

    #[test]
    fn perturb_deterministic_per_path() {
        let s = RngStream::new(9);
        let mut g1 = vec![0.0; 4];
        let mut g2 = vec![0.0; 4];
        perturb(&mut g1, 2.0, 1.0, &mut s.stream(Purpose::Noise, 1, 5));
        perturb(&mut g2, 2.0, 1.0, &mut s.stream(Purpose::Noise, 1, 5));
        assert_eq!(g1, g2);
    }

    #[test]
    fn perturb_moments() {
        // sigma*S = 2: per-coordinate variance 4 within 1%, mean near 0
        let s = RngStream::new(1234);
        let n = 1_000_000usize;
        let mut rng = s.stream(Purpose::Noise, 0, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut g = [0.0];
            perturb(&mut g, 2.0, 1.0, &mut rng);
            sum += g[0];
            sum_sq += g[0] * g[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 4.0).abs() < 0.04, "var = {var}");
        assert!(mean.abs() < 4.0 * 2.0 / 1e3, "mean = {mean}");
    }

    #[test]
    fn sigma_calibration() {
        // published table: eps {45, 8, 2, 0.5} at delta = 1e-5
        let delta = 1e-5;
        assert!((sigma_from_epsilon(0.5, delta).unwrap() - 9.69).abs() < 0.01);
        assert!((sigma_from_epsilon(2.0, delta).unwrap() - 2.42).abs() < 0.01);
        assert!((sigma_from_epsilon(8.0, delta).unwrap() - 0.65).abs() < 0.05);
        assert!((sigma_from_epsilon(45.0, delta).unwrap() - 0.1077).abs() < 0.0001);
    }

    #[test]
    fn sigma_rejects_bad_inputs() {
        assert!(sigma_from_epsilon(0.0, 1e-5).is_err());
        assert!(sigma_from_epsilon(1.0, 0.0).is_err());
        assert!(sigma_from_epsilon(1.0, 1.0).is_err());
    }
}
