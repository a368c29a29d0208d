use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DsrlError, Result};

/// Ornstein-Uhlenbeck exploration: `x ← x + θ(μ − x) + σ ξ`, `ξ ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub mu: Vec<f64>,
    pub state: Vec<f64>,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
            return Err(DsrlError::Argument("OU parameters must be finite with theta, sigma ≥ 0".into()));
        }
        Ok(OuNoise { theta, sigma, mu: vec![0.0; dim], state: vec![0.0; dim] })
    }

    pub fn reset(&mut self) {
        self.state.clone_from(&self.mu);
    }

    /// Advances the process and returns the new state.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        for (x, mu) in self.state.iter_mut().zip(&self.mu) {
            let xi: f64 = rng.sample(StandardNormal);
            *x += self.theta * (mu - *x) + self.sigma * xi;
        }
        self.state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_stays_at_mean() {
        let mut ou = OuNoise::new(2, 0.15, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(ou.sample(&mut rng), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn reverts_toward_mean() {
        let mut ou = OuNoise::new(1, 0.5, 0.0).unwrap();
        ou.state = vec![4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ou.sample(&mut rng), vec![2.0]);
        ou.reset();
        assert_eq!(ou.state, vec![0.0]);
    }
}
