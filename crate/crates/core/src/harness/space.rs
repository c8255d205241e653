use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open `[lo, hi)` unless `lo == hi`, which always yields `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidConfig(format!("{name}: empty interval [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }

    fn sample_log(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        if self.lo == self.hi {
            self.lo
        } else {
            let (a, b) = (self.lo.ln(), self.hi.ln());
            (a + u * (b - a)).exp().clamp(self.lo, self.hi)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub units: Vec<usize>,
    pub spectral_radius: Interval,
    pub input_scaling: Interval,
    pub leak_rate: Interval,
    /// Sampled log-uniformly.
    pub lambda: Interval,
    pub mu: f64,
    pub sigma: Interval,
    pub eta: f64,
    pub epochs: Vec<usize>,
    pub n_trials: usize,
}

impl SearchSpace {
    /// Ranges used for the WESAD chest-device benchmark.
    pub fn wesad() -> Self {
        Self {
            units: vec![200, 300, 400],
            spectral_radius: Interval::new(0.3, 0.99),
            input_scaling: Interval::new(0.5, 1.0),
            leak_rate: Interval::new(0.1, 0.8),
            lambda: Interval::new(1e-4, 1.0),
            mu: 0.0,
            sigma: Interval::new(0.005, 0.15),
            eta: 0.01,
            epochs: vec![3, 5, 10],
            n_trials: 30,
        }
    }

    /// Ranges used for the HHAR Nexus4 benchmark.
    pub fn hhar() -> Self {
        Self { units: vec![100, 200, 300, 400, 500], leak_rate: Interval::new(0.1, 0.5), ..Self::wesad() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() || self.epochs.is_empty() {
            return Err(Error::InvalidConfig("units and epochs choice sets must be non-empty".into()));
        }
        if self.units.contains(&0) || self.epochs.contains(&0) {
            return Err(Error::InvalidConfig("units and epochs must be positive".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
        }
        self.spectral_radius.check("spectral_radius")?;
        self.input_scaling.check("input_scaling")?;
        self.leak_rate.check("leak_rate")?;
        self.lambda.check("lambda")?;
        self.sigma.check("sigma")?;
        if self.lambda.lo <= 0.0 {
            return Err(Error::InvalidConfig("lambda interval must be positive for log-uniform sampling".into()));
        }
        Ok(())
    }
}

/// One point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub units: usize,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub leak_rate: f64,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub eta: f64,
    pub epochs: usize,
}

/// Draws every field in a fixed order, plasticity fields included, so two
/// algorithms sampled from the same stream see the same shared settings.
pub fn sample_config(space: &SearchSpace, rng: &mut impl Rng) -> TrialConfig {
    let units = space.units[rng.random_range(0..space.units.len())];
    let spectral_radius = space.spectral_radius.sample(rng);
    let input_scaling = space.input_scaling.sample(rng);
    let leak_rate = space.leak_rate.sample(rng);
    let lambda = space.lambda.sample_log(rng);
    let sigma = space.sigma.sample(rng);
    let epochs = space.epochs[rng.random_range(0..space.epochs.len())];
    TrialConfig { units, spectral_radius, input_scaling, leak_rate, lambda, mu: space.mu, sigma, eta: space.eta, epochs }
}
