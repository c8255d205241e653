//! Leaky-integrator reservoirs with a per-unit gain/bias nonlinearity.
//!
//! The state update is
//!
//! ```text
//! x_net(t) = W_in u(t) + W_rec x(t-1)
//! x(t)     = (1 - a) x(t-1) + a tanh(g ⊙ x_net(t) + b)
//! ```
//!
//! with `x(0) = 0`. The gain `g` and bias `b` live in [`IPState`] and are the
//! only parameters intrinsic plasticity adapts; `W_in` and `W_rec` stay fixed.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{seed, spectral};

/// Lower bound enforced on every gain component.
pub const GAIN_FLOOR: f64 = 1e-3;

/// Attempts made with `seed, seed + 1, ...` when a draw is degenerate.
pub const MAX_SEED_RETRIES: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub n_units: usize,
    pub n_inputs: usize,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub leak_rate: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    /// Half-width of the uniform draw for the optional recurrent bias. Zero
    /// leaves `b_rec` all-zero.
    #[serde(default)]
    pub rec_bias_scale: f64,
    pub seed: u64,
}

fn default_density() -> f64 {
    0.1
}

impl ReservoirConfig {
    pub fn new(n_units: usize, n_inputs: usize) -> Self {
        Self {
            n_units,
            n_inputs,
            spectral_radius: 0.9,
            input_scaling: 1.0,
            leak_rate: 1.0,
            density: default_density(),
            rec_bias_scale: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_units == 0 || self.n_inputs == 0 {
            return bad("n_units and n_inputs must be positive".into());
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return bad(format!("spectral_radius {} not in (0, 1)", self.spectral_radius));
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return bad(format!("input_scaling {} must be positive", self.input_scaling));
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return bad(format!("leak_rate {} not in (0, 1]", self.leak_rate));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} not in (0, 1]", self.density));
        }
        if !(self.rec_bias_scale >= 0.0 && self.rec_bias_scale.is_finite()) {
            return bad(format!("rec_bias_scale {} must be >= 0", self.rec_bias_scale));
        }
        Ok(())
    }
}

/// Adaptable gain and bias of the nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct IPState {
    pub gain: DVector<f64>,
    pub bias: DVector<f64>,
}

impl IPState {
    /// `g = 1`, `b = 0`.
    pub fn initial(n_units: usize) -> Self {
        Self {
            gain: DVector::from_element(n_units, 1.0),
            bias: DVector::zeros(n_units),
        }
    }

    pub fn len(&self) -> usize {
        self.gain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gain.is_empty()
    }

    pub fn validate(&self, n_units: usize) -> Result<()> {
        if self.gain.len() != n_units || self.bias.len() != n_units {
            return Err(Error::Dimension {
                context: "IPState",
                expected: n_units,
                actual: self.gain.len().min(self.bias.len()),
            });
        }
        if let Some((unit, &value)) = self.gain.iter().enumerate().find(|(_, g)| g.is_nan() || **g < GAIN_FLOOR) {
            return Err(Error::GainBelowFloor { unit, value, floor: GAIN_FLOOR });
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("IPState bias"));
        }
        Ok(())
    }

    pub fn clamp_gain(&mut self) {
        for g in self.gain.iter_mut() {
            if *g < GAIN_FLOOR {
                *g = GAIN_FLOOR;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirParams {
    pub config: ReservoirConfig,
    /// `n_units x n_inputs`
    pub w_in: DMatrix<f64>,
    /// `n_units x n_units`, stored dense
    pub w_rec: DMatrix<f64>,
    /// Optional initialiser for `ip.bias`; not used by the runtime update.
    pub b_rec: DVector<f64>,
    pub ip: IPState,
}

/// Draws and scales a reservoir.
///
/// `W_in ~ U(-s, s)`, recurrent entries are kept with probability `density`
/// and drawn from `U(-1, 1)`, then the masked matrix is rescaled to the
/// configured spectral radius. A zero or non-finite radius triggers a redraw
/// with the next seed.
pub fn init_reservoir(cfg: &ReservoirConfig) -> Result<ReservoirParams> {
    cfg.validate()?;
    let mut last_reason = String::new();
    for attempt in 0..=MAX_SEED_RETRIES {
        let mut rng = seed::rng(cfg.seed.wrapping_add(attempt));
        let (n, m) = (cfg.n_units, cfg.n_inputs);
        let s = cfg.input_scaling;

        let mut w_in = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                w_in[(i, j)] = rng.random_range(-s..s);
            }
        }
        let mut w_rec = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let keep = rng.random::<f64>() < cfg.density;
                let v = rng.random_range(-1.0..1.0);
                if keep {
                    w_rec[(i, j)] = v;
                }
            }
        }
        let b_rec = if cfg.rec_bias_scale > 0.0 {
            let r = cfg.rec_bias_scale;
            DVector::from_fn(n, |_, _| rng.random_range(-r..r))
        } else {
            DVector::zeros(n)
        };

        let rho = match spectral::spectral_radius(&w_rec, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                last_reason = e.to_string();
                continue;
            }
        };
        if !(rho.is_finite() && rho > 1e-12) {
            last_reason = format!("degenerate recurrent matrix (radius {rho:e})");
            continue;
        }
        w_rec *= cfg.spectral_radius / rho;
        return Ok(ReservoirParams {
            config: cfg.clone(),
            w_in,
            w_rec,
            b_rec,
            ip: IPState::initial(n),
        });
    }
    Err(Error::SpectralRadius {
        attempts: (MAX_SEED_RETRIES + 1) as usize,
        reason: last_reason,
    })
}

/// Output of a single update.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: DVector<f64>,
    pub net: DVector<f64>,
    /// `tanh(g ⊙ net + b)` before leaky integration.
    pub activation: DVector<f64>,
}

impl ReservoirParams {
    pub fn n_units(&self) -> usize {
        self.config.n_units
    }

    pub fn n_inputs(&self) -> usize {
        self.config.n_inputs
    }

    pub fn with_ip(&self, ip: IPState) -> Self {
        Self { ip, ..self.clone() }
    }

    fn check_dims(&self, x_prev: usize, u: usize) -> Result<()> {
        if x_prev != self.n_units() {
            return Err(Error::Dimension { context: "reservoir state", expected: self.n_units(), actual: x_prev });
        }
        if u != self.n_inputs() {
            return Err(Error::Dimension { context: "reservoir input", expected: self.n_inputs(), actual: u });
        }
        Ok(())
    }

    /// One state update using `self.ip`.
    pub fn step(&self, x_prev: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let s = self.step_with(&self.ip, x_prev.as_view(), u.as_view())?;
        Ok((s.state, s.net))
    }

    /// One state update with an explicit gain/bias pair.
    pub fn step_with(&self, ip: &IPState, x_prev: DVectorView<f64>, u: DVectorView<f64>) -> Result<Step> {
        self.check_dims(x_prev.len(), u.len())?;
        if ip.len() != self.n_units() {
            return Err(Error::Dimension { context: "IPState", expected: self.n_units(), actual: ip.len() });
        }
        if u.iter().chain(x_prev.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reservoir input"));
        }
        let n = self.n_units();
        let mut out = Step {
            state: DVector::zeros(n),
            net: DVector::zeros(n),
            activation: DVector::zeros(n),
        };
        self.step_into(ip, x_prev, u, &mut out);
        Ok(out)
    }

    // Unchecked kernel shared by every trajectory routine.
    pub(crate) fn step_into(&self, ip: &IPState, x_prev: DVectorView<f64>, u: DVectorView<f64>, out: &mut Step) {
        let a = self.config.leak_rate;
        out.net.gemv(1.0, &self.w_in, &u, 0.0);
        out.net.gemv(1.0, &self.w_rec, &x_prev, 1.0);
        for i in 0..out.net.len() {
            let act = (ip.gain[i] * out.net[i] + ip.bias[i]).tanh();
            out.activation[i] = act;
            out.state[i] = if a == 1.0 { act } else { (1.0 - a) * x_prev[i] + a * act };
        }
    }

    /// Runs `seq` (one row per timestep) from `x(0) = 0`.
    pub fn run_sequence(&self, seq: &DMatrix<f64>, washout: usize) -> Result<StateTrajectory> {
        self.run_sequence_with(&self.ip, seq, washout)
    }

    pub fn run_sequence_with(&self, ip: &IPState, seq: &DMatrix<f64>, washout: usize) -> Result<StateTrajectory> {
        let t_len = seq.nrows();
        if t_len == 0 {
            return Err(Error::Empty("input sequence"));
        }
        if washout >= t_len {
            return Err(Error::InvalidConfig(format!("washout {washout} must be shorter than the sequence ({t_len})")));
        }
        self.check_dims(self.n_units(), seq.ncols())?;
        if ip.len() != self.n_units() {
            return Err(Error::Dimension { context: "IPState", expected: self.n_units(), actual: ip.len() });
        }
        if seq.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input sequence"));
        }
        let n = self.n_units();
        let mut states = DMatrix::zeros(n, t_len);
        let mut nets = DMatrix::zeros(n, t_len);
        let mut step = Step { state: DVector::zeros(n), net: DVector::zeros(n), activation: DVector::zeros(n) };
        let mut x_prev = DVector::zeros(n);
        let mut u = DVector::zeros(seq.ncols());
        for t in 0..t_len {
            u.copy_from(&seq.row(t).transpose());
            self.step_into(ip, x_prev.as_view(), u.as_view(), &mut step);
            states.set_column(t, &step.state);
            nets.set_column(t, &step.net);
            std::mem::swap(&mut x_prev, &mut step.state);
        }
        Ok(StateTrajectory { states, nets, washout })
    }

    /// `‖x_a(t) - x_b(t)‖₂` for `t = 1..=T` with both trajectories driven by `seq`.
    pub fn contractivity_probe(&self, seq: &DMatrix<f64>, x0_a: &DVector<f64>, x0_b: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_dims(x0_a.len(), seq.ncols())?;
        self.check_dims(x0_b.len(), seq.ncols())?;
        let n = self.n_units();
        let mut xa = x0_a.clone();
        let mut xb = x0_b.clone();
        let mut sa = Step { state: DVector::zeros(n), net: DVector::zeros(n), activation: DVector::zeros(n) };
        let mut sb = sa.clone();
        let mut u = DVector::zeros(seq.ncols());
        let mut out = Vec::with_capacity(seq.nrows());
        for t in 0..seq.nrows() {
            u.copy_from(&seq.row(t).transpose());
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("input sequence"));
            }
            self.step_into(&self.ip, xa.as_view(), u.as_view(), &mut sa);
            self.step_into(&self.ip, xb.as_view(), u.as_view(), &mut sb);
            std::mem::swap(&mut xa, &mut sa.state);
            std::mem::swap(&mut xb, &mut sb.state);
            out.push((&xa - &xb).norm());
        }
        Ok(out)
    }
}

/// States and net inputs of one run, one column per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    /// `n_units x T`
    pub states: DMatrix<f64>,
    /// `n_units x T`
    pub nets: DMatrix<f64>,
    pub washout: usize,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// Number of timesteps after the washout.
    pub fn n_collected(&self) -> usize {
        self.len().saturating_sub(self.washout)
    }

    pub fn collected(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.states.columns(self.washout.min(self.len()), self.n_collected())
    }
}
