use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ornstein–Uhlenbeck exploration noise, Euler–Maruyama discretized:
///
/// ```text
/// n ← n + θ(μ − n)·dt + σ·√dt·ξ,   ξ ~ N(0, 1)
/// ```
///
/// [`OuNoise::sample`] returns `scale · n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    state: Vec<f64>,
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
    pub scale: f64,
}

impl OuNoise {
    pub fn new(dim: usize, mu: f64, theta: f64, sigma: f64, scale: f64) -> Result<Self> {
        if !(scale >= 0.0) || !theta.is_finite() || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::input("OU parameters must be finite with scale >= 0"));
        }
        Ok(Self {
            state: vec![mu; dim],
            mu,
            theta,
            sigma,
            scale,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) {
        self.state.copy_from_slice(state);
    }

    pub fn reset(&mut self) {
        self.state.fill(self.mu);
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(Error::input(format!("OU time step must be positive, got {dt}")));
        }
        let sd = self.sigma * dt.sqrt();
        for n in &mut self.state {
            let xi: f64 = if self.sigma != 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            *n += self.theta * (self.mu - *n) * dt + sd * xi;
        }
        Ok(self.state.iter().map(|n| self.scale * n).collect())
    }
}
