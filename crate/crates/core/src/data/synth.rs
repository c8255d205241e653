//! Synthetic multi-user activity data.
//!
//! Each class is a stochastic regime: an AR(2) process with complex poles
//! `r e^{±iω}` (so `φ1 = 2r cos ω`, `φ2 = -r²`), a sinusoid at a class
//! frequency and a per-feature class offset. Users perturb the regimes
//! (pole angle jitter, offset jitter) and apply their own per-feature gain and
//! offset to the sensor readings. A user's timeline is a sequence of
//! fixed-length segments; every round of `n_classes` segments visits each
//! class once in a random order.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{normalize_and_window, ClientDataset, RawSeries};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// AR(2) pole modulus.
    pub pole_radius: f64,
    /// AR(2) pole angle in radians.
    pub pole_angle: f64,
    /// Oscillation frequency in cycles per step.
    pub frequency: f64,
    pub amplitude: f64,
    /// Scale of the per-feature class offset.
    pub offset: f64,
}

impl Regime {
    pub fn ar_coefficients(&self) -> (f64, f64) {
        (2.0 * self.pole_radius * self.pole_angle.cos(), -self.pole_radius * self.pole_radius)
    }

    /// Default regimes: pole angles spread over `[0.3, 2.1]` rad and
    /// frequencies over `[0.01, 0.04]` cycles/step.
    pub fn defaults(n_classes: usize) -> Vec<Regime> {
        (0..n_classes)
            .map(|k| {
                let x = if n_classes > 1 { k as f64 / (n_classes - 1) as f64 } else { 0.0 };
                Regime {
                    pole_radius: 0.9,
                    pole_angle: 0.3 + 1.8 * x,
                    frequency: 0.01 + 0.03 * x,
                    amplitude: 0.5,
                    offset: 0.3,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub steps_per_user: usize,
    pub segment_len: usize,
    /// Innovation std of the AR(2) processes.
    pub noise: f64,
    /// Std of the per-user pole angle perturbation (radians).
    pub user_angle_jitter: f64,
    /// Std of the per-user class offset perturbation.
    pub user_offset_jitter: f64,
    /// Std of the log of the per-user sensor gain.
    pub user_gain_spread: f64,
    /// Std of the per-user sensor offset.
    pub user_bias_spread: f64,
    /// `None` uses [`Regime::defaults`].
    pub regimes: Option<Vec<Regime>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 5,
            n_classes: 4,
            n_features: 3,
            steps_per_user: 4000,
            segment_len: 200,
            noise: 0.3,
            user_angle_jitter: 0.15,
            user_offset_jitter: 0.2,
            user_gain_spread: 0.3,
            user_bias_spread: 1.0,
            regimes: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn regimes(&self) -> Vec<Regime> {
        self.regimes.clone().unwrap_or_else(|| Regime::defaults(self.n_classes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_classes == 0 || self.n_features == 0 || self.steps_per_user == 0 || self.segment_len == 0 {
            return Err(Error::InvalidConfig("synthetic dataset counts must be >= 1".into()));
        }
        if let Some(r) = &self.regimes {
            if r.len() != self.n_classes {
                return Err(Error::InvalidConfig(format!("{} regimes for {} classes", r.len(), self.n_classes)));
            }
        }
        let spreads = [self.noise, self.user_angle_jitter, self.user_offset_jitter, self.user_gain_spread, self.user_bias_spread];
        if spreads.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("noise and spread parameters must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn synth_har_raw(cfg: &SynthConfig) -> Result<Vec<RawSeries>> {
    cfg.validate()?;
    let regimes = cfg.regimes();
    let (k, m) = (cfg.n_classes, cfg.n_features);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // shared class structure
    let mut rng = seed::rng(seed::derive(cfg.seed, seed::STREAM_SYNTH, u64::MAX));
    let class_offsets: Vec<Vec<f64>> =
        (0..k).map(|c| (0..m).map(|_| regimes[c].offset * rng.random_range(-1.0..1.0)).collect()).collect();

    let width = (cfg.n_users.max(1) as f64).log10().floor() as usize + 1;
    (0..cfg.n_users)
        .map(|user| {
            let mut rng = seed::rng(seed::derive(cfg.seed, seed::STREAM_SYNTH, user as u64));
            let gains: Vec<f64> = (0..m).map(|_| (cfg.user_gain_spread * std_normal.sample(&mut rng)).exp()).collect();
            let biases: Vec<f64> = (0..m).map(|_| cfg.user_bias_spread * std_normal.sample(&mut rng)).collect();
            let coeffs: Vec<(f64, f64)> = regimes
                .iter()
                .map(|r| {
                    let angle = r.pole_angle + cfg.user_angle_jitter * std_normal.sample(&mut rng);
                    Regime { pole_angle: angle, ..r.clone() }.ar_coefficients()
                })
                .collect();
            let offsets: Vec<Vec<f64>> = class_offsets
                .iter()
                .map(|row| row.iter().map(|o| o + cfg.user_offset_jitter * std_normal.sample(&mut rng)).collect())
                .collect();

            let t_len = cfg.steps_per_user;
            let mut features = DMatrix::zeros(t_len, m);
            let mut labels = Vec::with_capacity(t_len);
            let mut ar = vec![(0.0f64, 0.0f64); m];
            let mut order: Vec<usize> = Vec::new();
            let mut phase = vec![0.0f64; m];
            let mut t = 0;
            while t < t_len {
                if order.is_empty() {
                    order = (0..k).collect();
                    order.shuffle(&mut rng);
                    order.reverse();
                }
                let class = order.pop().unwrap();
                for p in phase.iter_mut() {
                    *p = rng.random_range(0.0..std::f64::consts::TAU);
                }
                let r = &regimes[class];
                let (phi1, phi2) = coeffs[class];
                let end = (t + cfg.segment_len).min(t_len);
                for (s, tt) in (t..end).enumerate() {
                    for j in 0..m {
                        let (x1, x2) = ar[j];
                        let x = phi1 * x1 + phi2 * x2 + cfg.noise * std_normal.sample(&mut rng);
                        ar[j] = (x, x1);
                        let osc = r.amplitude * (std::f64::consts::TAU * r.frequency * s as f64 + phase[j]).sin();
                        features[(tt, j)] = gains[j] * (x + osc + offsets[class][j]) + biases[j];
                    }
                    labels.push(class);
                }
                t = end;
            }
            Ok(RawSeries { user_id: format!("user{user:0width$}"), features, labels, n_classes: k })
        })
        .collect()
}

/// Generated users, normalised and windowed.
pub fn synth_har(cfg: &SynthConfig, window_len: usize) -> Result<Vec<ClientDataset>> {
    synth_har_raw(cfg)?.iter().map(|r| normalize_and_window(r, window_len).map(|(d, _)| d)).collect()
}
