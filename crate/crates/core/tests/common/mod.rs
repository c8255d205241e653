#![allow(dead_code)]

use fedres_core::data::{ClientDataset, Sequence};
use fedres_core::reservoir::{init_reservoir, ReservoirConfig, ReservoirParams};
use fedres_core::seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Uniform `[-1, 1)` inputs with uniformly random labels.
pub fn random_client(user: &str, n_seq: usize, len: usize, n_inputs: usize, n_classes: usize, seed_v: u64) -> ClientDataset {
    let mut rng = seed::rng(seed_v);
    let sequences = (0..n_seq)
        .map(|_| Sequence {
            inputs: DMatrix::from_fn(len, n_inputs, |_, _| rng.random_range(-1.0..1.0)),
            labels: (0..len).map(|_| rng.random_range(0..n_classes)).collect(),
        })
        .collect();
    ClientDataset { user_id: user.to_string(), sequences, n_classes }
}

pub fn random_clients(n_clients: usize, n_seq: usize, len: usize, n_inputs: usize, n_classes: usize, seed_v: u64) -> Vec<ClientDataset> {
    (0..n_clients).map(|c| random_client(&format!("c{c}"), n_seq, len, n_inputs, n_classes, seed_v * 1000 + c as u64)).collect()
}

pub fn reservoir(n_units: usize, n_inputs: usize, seed_v: u64) -> ReservoirParams {
    init_reservoir(&ReservoirConfig { seed: seed_v, ..ReservoirConfig::new(n_units, n_inputs) }).unwrap()
}

/// Spectral radius by Gelfand's formula with repeated squaring:
/// `ρ = lim ‖W^(2^m)‖^(1/2^m)`, tracking the scale in log space.
pub fn gelfand_radius(w: &DMatrix<f64>, squarings: u32) -> f64 {
    let mut b = w.clone();
    let mut log_c = 0.0;
    let norm = b.norm();
    b /= norm;
    log_c += norm.ln();
    for _ in 0..squarings {
        let sq = &b * &b;
        let n = sq.norm();
        b = sq / n;
        log_c = 2.0 * log_c + n.ln();
    }
    (log_c / 2f64.powi(squarings as i32)).exp()
}

/// Ridge readout from stacked states via least squares on the augmented
/// system `[Xᵀ; √λ I] Wᵀ = [Yᵀ; 0]`, solved by SVD.
pub fn centralized_ridge(states: &DMatrix<f64>, labels: &[usize], n_classes: usize, lambda: f64) -> DMatrix<f64> {
    let (n, t) = states.shape();
    let d = n + 1;
    let mut a = DMatrix::zeros(t + d, d);
    let mut rhs = DMatrix::zeros(t + d, n_classes);
    for s in 0..t {
        for i in 0..n {
            a[(s, i)] = states[(i, s)];
        }
        a[(s, n)] = 1.0;
        rhs[(s, labels[s])] = 1.0;
    }
    for i in 0..d {
        a[(t + i, i)] = lambda.sqrt();
    }
    a.svd(true, true).solve(&rhs, 1e-14).unwrap().transpose()
}

pub fn uniform_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}
