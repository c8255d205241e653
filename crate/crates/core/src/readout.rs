//! Closed-form ridge readout and its federated form.
//!
//! With states augmented by a constant 1 (`x̂ = [x; 1]`), the readout is
//! `W = A (B + λI)⁻¹` where `A = Σ y x̂ᵀ` and `B = Σ x̂ x̂ᵀ`. Both sums are
//! additive over timesteps, so clients can ship their partial `(A_c, B_c)`
//! and the server recovers exactly the centralised solution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::reservoir::StateTrajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct DesignAccumulator {
    /// `n_outputs x (n_units + 1)`
    pub a_mat: DMatrix<f64>,
    /// `(n_units + 1) x (n_units + 1)`
    pub b_mat: DMatrix<f64>,
    pub n_samples: u64,
}

impl DesignAccumulator {
    pub fn new(n_outputs: usize, n_units: usize) -> Self {
        Self {
            a_mat: DMatrix::zeros(n_outputs, n_units + 1),
            b_mat: DMatrix::zeros(n_units + 1, n_units + 1),
            n_samples: 0,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.b_mat.nrows()
    }

    fn augmented(&self, traj: &StateTrajectory) -> Result<DMatrix<f64>> {
        let n = traj.states.nrows();
        if n + 1 != self.n_features() {
            return Err(Error::Dimension { context: "accumulator state width", expected: self.n_features() - 1, actual: n });
        }
        let cols = traj.collected();
        let mut s = DMatrix::from_element(n + 1, cols.ncols(), 1.0);
        s.rows_mut(0, n).copy_from(&cols);
        Ok(s)
    }

    /// Adds the non-washout steps of `traj` with class-id targets.
    /// `labels` covers the whole trajectory, washout included.
    pub fn accumulate(&mut self, traj: &StateTrajectory, labels: &[usize]) -> Result<()> {
        if labels.len() != traj.len() {
            return Err(Error::Dimension { context: "accumulate labels", expected: traj.len(), actual: labels.len() });
        }
        let kept = &labels[traj.washout.min(labels.len())..];
        if let Some(&c) = kept.iter().find(|&&c| c >= self.n_outputs()) {
            return Err(Error::InvalidConfig(format!("label {c} outside 0..{}", self.n_outputs())));
        }
        let mut targets = DMatrix::zeros(self.n_outputs(), kept.len());
        for (t, &c) in kept.iter().enumerate() {
            targets[(c, t)] = 1.0;
        }
        self.accumulate_targets(traj, &targets)
    }

    /// Adds the non-washout steps of `traj` with dense targets
    /// (`n_outputs x collected steps`).
    pub fn accumulate_targets(&mut self, traj: &StateTrajectory, targets: &DMatrix<f64>) -> Result<()> {
        let s = self.augmented(traj)?;
        if targets.ncols() != s.ncols() {
            return Err(Error::Dimension { context: "accumulate targets", expected: s.ncols(), actual: targets.ncols() });
        }
        if targets.nrows() != self.n_outputs() {
            return Err(Error::Dimension { context: "accumulate outputs", expected: self.n_outputs(), actual: targets.nrows() });
        }
        if s.ncols() == 0 {
            return Ok(());
        }
        let st = s.transpose();
        self.a_mat.gemm(1.0, targets, &st, 1.0);
        self.b_mat.gemm(1.0, &s, &st, 1.0);
        self.n_samples += s.ncols() as u64;
        Ok(())
    }

    /// Largest `|B - Bᵀ|` entry.
    pub fn asymmetry(&self) -> f64 {
        (&self.b_mat - self.b_mat.transpose()).amax()
    }
}

/// Componentwise sum, in the order given.
pub fn merge(accs: &[DesignAccumulator]) -> Result<DesignAccumulator> {
    let first = accs.first().ok_or(Error::Empty("accumulator list"))?;
    let mut out = first.clone();
    for acc in &accs[1..] {
        if acc.a_mat.shape() != out.a_mat.shape() || acc.b_mat.shape() != out.b_mat.shape() {
            return Err(Error::Dimension { context: "merge", expected: out.n_features(), actual: acc.n_features() });
        }
        out.a_mat += &acc.a_mat;
        out.b_mat += &acc.b_mat;
        out.n_samples += acc.n_samples;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutSolution {
    /// `n_outputs x (n_units + 1)`; the last column is the output bias.
    pub w_out: DMatrix<f64>,
    pub lambda: f64,
}

/// `W = A (B + λI)⁻¹` through a Cholesky factorisation of `B + λI`.
pub fn solve(acc: &DesignAccumulator, lambda: f64) -> Result<ReadoutSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be finite and >= 0")));
    }
    let n = acc.n_features();
    let mut m = acc.b_mat.clone();
    for i in 0..n {
        m[(i, i)] += lambda;
    }
    let Some(chol) = m.clone().cholesky() else {
        return Err(Error::Solve { condition: condition_estimate(&m) });
    };
    let w_t = chol.solve(&acc.a_mat.transpose());
    let w_out = w_t.transpose();
    if w_out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve { condition: condition_estimate(&m) });
    }
    Ok(ReadoutSolution { w_out, lambda })
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `n_outputs x collected steps`
    pub scores: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, x) in v.into_iter().enumerate() {
        if x > best_v {
            best = i;
            best_v = x;
        }
    }
    best
}

impl ReadoutSolution {
    pub fn predict(&self, traj: &StateTrajectory) -> Result<Prediction> {
        let n = traj.states.nrows();
        if n + 1 != self.w_out.ncols() {
            return Err(Error::Dimension { context: "predict state width", expected: self.w_out.ncols() - 1, actual: n });
        }
        let cols = traj.collected();
        let bias: DVector<f64> = self.w_out.column(n).into_owned();
        let mut scores = self.w_out.columns(0, n) * cols;
        for mut c in scores.column_iter_mut() {
            c += &bias;
        }
        let labels = scores.column_iter().map(|c| argmax(c.iter().copied())).collect();
        Ok(Prediction { scores, labels })
    }
}
