//! Intrinsic plasticity for tanh units.
//!
//! Each unit computes `y = tanh(g * x_net + b)`; the rules below move `g` and
//! `b` so the distribution of `y` approaches a Gaussian `N(mu, sigma^2)`.
//! Two bias rules are available:
//!
//! * [`RuleVariant::Ungrouped`] (the default), where the `1 - y² + μ y` terms
//!   sit outside the `y/σ²` factor:
//!   `Δb = -η (-μ/σ² + y/σ² + 1 - y² + μ y)`
//! * [`RuleVariant::CanonicalKL`], the exact negative gradient of the
//!   per-sample divergence `-ln g - ln(1 - y²) + (y - μ)² / (2σ²)`:
//!   `Δb = -η (-μ/σ² + (y/σ²)(2σ² + 1 - y² + μ y))`
//!
//! Both share the gain rule `Δg = η / g + Δb x_net`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::reservoir::{IPState, ReservoirParams, Step, GAIN_FLOOR};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleVariant {
    #[default]
    Ungrouped,
    CanonicalKL,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IPConfig {
    pub mu: f64,
    pub sigma: f64,
    pub eta: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub rule_variant: RuleVariant,
    /// Seeded per-epoch shuffle of the sequence order. `None` keeps dataset order.
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
}

fn default_batch() -> usize {
    32
}

impl Default for IPConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.1,
            eta: 0.01,
            epochs: 5,
            batch_size: default_batch(),
            rule_variant: RuleVariant::Ungrouped,
            shuffle_seed: None,
        }
    }
}

impl IPConfig {
    /// `eta = 0` is accepted so a run can be made inert.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma {} must be positive", self.sigma)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta {} must be non-negative", self.eta)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidConfig("mu must be finite".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IPUpdate {
    pub delta_gain: DVector<f64>,
    pub delta_bias: DVector<f64>,
}

/// `(Δg, Δb)` for one unit and one sample.
#[inline]
pub fn ip_delta_scalar(y: f64, x_net: f64, gain: f64, cfg: &IPConfig) -> (f64, f64) {
    let (mu, eta) = (cfg.mu, cfg.eta);
    let s2 = cfg.sigma * cfg.sigma;
    let db = match cfg.rule_variant {
        RuleVariant::Ungrouped => -eta * ((-mu / s2) + (y / s2 + 1.0 - y * y + mu * y)),
        RuleVariant::CanonicalKL => -eta * (-mu / s2 + (y / s2) * (2.0 * s2 + 1.0 - y * y + mu * y)),
    };
    let dg = eta / gain + db * x_net;
    (dg, db)
}

pub fn ip_delta(x_tilde: &DVector<f64>, x_net: &DVector<f64>, gain: &DVector<f64>, cfg: &IPConfig) -> Result<IPUpdate> {
    let n = x_tilde.len();
    for (ctx, len) in [("ip_delta x_net", x_net.len()), ("ip_delta gain", gain.len())] {
        if len != n {
            return Err(Error::Dimension { context: ctx, expected: n, actual: len });
        }
    }
    if let Some((unit, &value)) = gain.iter().enumerate().find(|(_, g)| g.is_nan() || **g < GAIN_FLOOR) {
        return Err(Error::GainBelowFloor { unit, value, floor: GAIN_FLOOR });
    }
    let mut delta_gain = DVector::zeros(n);
    let mut delta_bias = DVector::zeros(n);
    for i in 0..n {
        let (dg, db) = ip_delta_scalar(x_tilde[i], x_net[i], gain[i], cfg);
        delta_gain[i] = dg;
        delta_bias[i] = db;
    }
    Ok(IPUpdate { delta_gain, delta_bias })
}

/// Local epochs of intrinsic plasticity on one client's data.
///
/// Sequences are streamed from `x(0) = 0` with the current gain/bias. Deltas
/// are averaged over `batch_size` consecutive timesteps and applied after
/// each batch; a shorter trailing batch at the end of a sequence is applied
/// too. Gains are clamped to [`GAIN_FLOOR`] after every update.
pub fn local_ip_update(params: &ReservoirParams, data: &ClientDataset, cfg: &IPConfig) -> Result<IPState> {
    local_ip_update_from(params, &params.ip, data, cfg)
}

/// [`local_ip_update`] starting from `start` instead of `params.ip`.
pub fn local_ip_update_from(params: &ReservoirParams, start: &IPState, data: &ClientDataset, cfg: &IPConfig) -> Result<IPState> {
    cfg.validate()?;
    if data.sequences.is_empty() || data.n_timesteps() == 0 {
        return Err(Error::Empty("client dataset"));
    }
    start.validate(params.n_units())?;
    let n = params.n_units();
    let mut ip = start.clone();
    let mut step = Step { state: DVector::zeros(n), net: DVector::zeros(n), activation: DVector::zeros(n) };
    let mut x_prev = DVector::zeros(n);
    let mut u = DVector::zeros(params.n_inputs());
    let mut sum_dg = DVector::zeros(n);
    let mut sum_db = DVector::zeros(n);

    let mut order: Vec<usize> = (0..data.sequences.len()).collect();
    for epoch in 0..cfg.epochs {
        if let Some(s) = cfg.shuffle_seed {
            use rand::seq::SliceRandom;
            order = (0..data.sequences.len()).collect();
            order.shuffle(&mut seed::rng(seed::derive(s, seed::STREAM_SHUFFLE, epoch as u64)));
        }
        let mut batch = 0usize;
        for &k in &order {
            let seq = &data.sequences[k].inputs;
            if seq.ncols() != params.n_inputs() {
                return Err(Error::Dimension { context: "client sequence", expected: params.n_inputs(), actual: seq.ncols() });
            }
            x_prev.fill(0.0);
            let mut count = 0usize;
            for t in 0..seq.nrows() {
                u.copy_from(&seq.row(t).transpose());
                params.step_into(&ip, x_prev.as_view(), u.as_view(), &mut step);
                for i in 0..n {
                    let (dg, db) = ip_delta_scalar(step.activation[i], step.net[i], ip.gain[i], cfg);
                    sum_dg[i] += dg;
                    sum_db[i] += db;
                }
                std::mem::swap(&mut x_prev, &mut step.state);
                count += 1;
                if count == cfg.batch_size || t + 1 == seq.nrows() {
                    apply_batch(&mut ip, &mut sum_dg, &mut sum_db, count, epoch, batch)?;
                    count = 0;
                    batch += 1;
                }
            }
        }
    }
    Ok(ip)
}

fn apply_batch(
    ip: &mut IPState,
    sum_dg: &mut DVector<f64>,
    sum_db: &mut DVector<f64>,
    count: usize,
    epoch: usize,
    batch: usize,
) -> Result<()> {
    let inv = 1.0 / count as f64;
    for i in 0..ip.len() {
        ip.gain[i] += sum_dg[i] * inv;
        ip.bias[i] += sum_db[i] * inv;
    }
    sum_dg.fill(0.0);
    sum_db.fill(0.0);
    if ip.gain.iter().chain(ip.bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diverged { round: None, epoch, batch });
    }
    ip.clamp_gain();
    Ok(())
}

/// Mean and population standard deviation of `tanh(g * x_net + b)`, pooled
/// over all units and timesteps of `data`.
pub fn activation_stats(params: &ReservoirParams, ip: &IPState, data: &ClientDataset) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for s in &data.sequences {
        let traj = params.run_sequence_with(ip, &s.inputs, 0)?;
        for t in 0..traj.len() {
            for i in 0..params.n_units() {
                let y = (ip.gain[i] * traj.nets[(i, t)] + ip.bias[i]).tanh();
                sum += y;
                sum_sq += y * y;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("client dataset"));
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sequence;
    use crate::reservoir::{init_reservoir, ReservoirConfig};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn cfg(variant: RuleVariant) -> IPConfig {
        IPConfig { mu: 0.0, sigma: 0.1, eta: 0.01, epochs: 1, batch_size: 8, rule_variant: variant, shuffle_seed: None }
    }

    fn dataset(n_seq: usize, len: usize, seed_v: u64) -> ClientDataset {
        let mut rng = seed::rng(seed_v);
        let sequences = (0..n_seq)
            .map(|_| Sequence {
                inputs: DMatrix::from_fn(len, 2, |_, _| rng.random_range(-1.0..1.0)),
                labels: vec![0; len],
            })
            .collect();
        ClientDataset { user_id: "u".into(), sequences, n_classes: 1 }
    }

    fn reservoir() -> ReservoirParams {
        let mut c = ReservoirConfig::new(20, 2);
        c.seed = 4;
        init_reservoir(&c).unwrap()
    }

    #[test]
    fn canonical_at_origin() {
        let (dg, db) = ip_delta_scalar(0.0, 0.0, 1.0, &cfg(RuleVariant::CanonicalKL));
        assert_eq!(db, 0.0);
        assert_eq!(dg, 0.01);
    }

    #[test]
    fn ungrouped_rule_at_origin() {
        let (dg, db) = ip_delta_scalar(0.0, 0.0, 1.0, &cfg(RuleVariant::Ungrouped));
        assert_eq!(db, -0.01);
        assert_eq!(dg, 0.01);
    }

    #[test]
    fn ungrouped_rule_hand_values() {
        let c = IPConfig { mu: 0.2, sigma: 0.5, eta: 0.1, ..cfg(RuleVariant::Ungrouped) };
        // s2 = 0.25: -mu/s2 = -0.8; y/s2 = 1.2; 1 - y^2 = 0.91; mu*y = 0.06
        let (dg, db) = ip_delta_scalar(0.3, 2.0, 0.5, &c);
        let want_db = -0.1 * (-0.8 + (1.2 + 0.91 + 0.06));
        assert!((db - want_db).abs() < 1e-15);
        assert!((dg - (0.2 + want_db * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn vector_form_rejects_low_gain_and_bad_lengths() {
        let c = cfg(RuleVariant::Ungrouped);
        let v = DVector::zeros(3);
        let mut g = DVector::from_element(3, 1.0);
        assert!(ip_delta(&v, &v, &g, &c).is_ok());
        g[1] = 1e-4;
        assert!(matches!(ip_delta(&v, &v, &g, &c), Err(Error::GainBelowFloor { unit: 1, .. })));
        assert!(ip_delta(&v, &DVector::zeros(2), &DVector::from_element(3, 1.0), &c).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let p = reservoir();
        let mut c = cfg(RuleVariant::CanonicalKL);
        c.eta = 0.0;
        c.epochs = 3;
        let out = local_ip_update(&p, &dataset(3, 50, 1), &c).unwrap();
        assert_eq!(out, p.ip);
    }

    #[test]
    fn epochs_compose() {
        let p = reservoir();
        let d = dataset(3, 45, 2);
        let mut c = cfg(RuleVariant::Ungrouped);
        c.epochs = 2;
        let two = local_ip_update(&p, &d, &c).unwrap();
        c.epochs = 1;
        let once = local_ip_update(&p, &d, &c).unwrap();
        let twice = local_ip_update(&p.with_ip(once), &d, &c).unwrap();
        assert_eq!(two, twice);
    }

    #[test]
    fn weights_untouched_and_gain_floor_held() {
        let p = reservoir();
        let before = (p.w_in.clone(), p.w_rec.clone());
        let mut c = cfg(RuleVariant::Ungrouped);
        c.eta = 0.5;
        c.epochs = 3;
        let out = local_ip_update(&p, &dataset(2, 64, 3), &c).unwrap();
        assert_eq!((p.w_in, p.w_rec), before);
        assert!(out.gain.iter().all(|&g| g >= GAIN_FLOOR));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let p = reservoir();
        let d = ClientDataset { user_id: "e".into(), sequences: vec![], n_classes: 1 };
        assert!(matches!(local_ip_update(&p, &d, &cfg(RuleVariant::Ungrouped)), Err(Error::Empty(_))));
    }

    #[test]
    fn divergence_reports_position() {
        let p = reservoir();
        let mut c = cfg(RuleVariant::CanonicalKL);
        c.eta = 1e300;
        c.sigma = 1e-5;
        let err = local_ip_update(&p, &dataset(1, 20, 4), &c).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, batch: 0, .. }), "{err}");
    }

    #[test]
    fn shuffle_is_seeded() {
        let p = reservoir();
        let d = dataset(5, 16, 5);
        let mut c = cfg(RuleVariant::Ungrouped);
        c.shuffle_seed = Some(11);
        c.epochs = 2;
        let a = local_ip_update(&p, &d, &c).unwrap();
        let b = local_ip_update(&p, &d, &c).unwrap();
        assert_eq!(a, b);
        c.shuffle_seed = None;
        assert_ne!(local_ip_update(&p, &d, &c).unwrap(), a);
    }
}
