//! Exploration noise added to deterministic policy outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Ou,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Gaussian scale `λ`.
    pub gaussian_scale: f64,
    /// Fraction of the training episodes over which the noise amplitude
    /// decays linearly to zero.
    pub anneal_fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kind: NoiseKind::Ou, ou_theta: 0.15, ou_sigma: 0.2, gaussian_scale: 0.3, anneal_fraction: 0.75 }
    }
}

impl NoiseConfig {
    /// Amplitude multiplier for `episode` out of `total`.
    pub fn amplitude(&self, episode: usize, total: usize) -> f64 {
        let horizon = self.anneal_fraction * total as f64;
        if horizon <= 0.0 {
            return 0.0;
        }
        (1.0 - episode as f64 / horizon).max(0.0)
    }
}

/// Ornstein-Uhlenbeck or white Gaussian noise with its own seeded stream.
#[derive(Clone, Debug)]
pub struct NoiseProcess {
    pub cfg: NoiseConfig,
    /// Current OU state.
    pub state: f64,
    /// Amplitude multiplier applied to every sample.
    pub amplitude: f64,
    rng: ChaCha8Rng,
}

impl NoiseProcess {
    pub fn new(cfg: NoiseConfig, seed: u64) -> Self {
        Self { cfg, state: 0.0, amplitude: 1.0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Called at every episode start.
    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    /// A draw of the noise `k` steps after the latest sample, given the
    /// current state and a standard normal `z`, without advancing the process.
    pub fn forecast(&self, k: usize, z: f64) -> f64 {
        match self.cfg.kind {
            NoiseKind::Ou => {
                let decay = 1.0 - self.cfg.ou_theta;
                let mean = decay.powi(k as i32) * self.state;
                let var: f64 = (0..k).map(|i| decay.powi(2 * i as i32)).sum();
                self.amplitude * (mean + self.cfg.ou_sigma * var.sqrt() * z)
            }
            NoiseKind::Gaussian => self.amplitude * self.cfg.gaussian_scale * z,
        }
    }

    pub fn sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        match self.cfg.kind {
            NoiseKind::Ou => {
                self.state += -self.cfg.ou_theta * self.state + self.cfg.ou_sigma * z;
                self.amplitude * self.state
            }
            NoiseKind::Gaussian => self.amplitude * self.cfg.gaussian_scale * z,
        }
    }
}
