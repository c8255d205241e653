mod common;

use common::{gelfand_radius, uniform_vector};
use fedres_core::checkpoint;
use fedres_core::reservoir::{init_reservoir, IPState, ReservoirConfig};
use fedres_core::seed;
use fedres_core::spectral::{power_radius, spectral_radius};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn scaled_radius_matches_gelfand_oracle() {
    for (n, rho, s) in [(50, 0.9, 1), (200, 0.5, 2), (300, 0.99, 3)] {
        let p = init_reservoir(&ReservoirConfig { spectral_radius: rho, seed: s, ..ReservoirConfig::new(n, 2) }).unwrap();
        let oracle = gelfand_radius(&p.w_rec, 40);
        assert!((oracle - rho).abs() < 1e-6, "n={n}: oracle {oracle} vs target {rho}");
    }
}

#[test]
fn power_iteration_agrees_with_dense_route() {
    let mut rng = seed::rng(4);
    let w = DMatrix::from_fn(120, 120, |_, _| if rng.random::<f64>() < 0.2 { rng.random_range(-1.0..1.0) } else { 0.0 });
    let dense = spectral_radius(&w, &mut seed::rng(0)).unwrap();
    let oracle = gelfand_radius(&w, 40);
    assert!((dense - oracle).abs() < 1e-6 * oracle);
    if let Some(p) = power_radius(&w, &mut seed::rng(1), 1e-12, 100_000) {
        assert!((p - oracle).abs() < 1e-4 * oracle, "power {p} vs {oracle}");
    }
}

#[test]
fn small_radius_forgets_faster() {
    let mut rng = seed::rng(8);
    let input = DMatrix::from_fn(300, 2, |_, _| rng.random_range(-1.0..1.0));
    let (xa, xb) = (uniform_vector(80, &mut rng), uniform_vector(80, &mut rng));
    let final_distance = |rho: f64| {
        let p = init_reservoir(&ReservoirConfig { spectral_radius: rho, seed: 12, ..ReservoirConfig::new(80, 2) }).unwrap();
        *p.contractivity_probe(&input, &xa, &xb).unwrap().last().unwrap()
    };
    assert!(final_distance(0.3) <= final_distance(0.99));
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("res.bin");
    let mut p = init_reservoir(&ReservoirConfig { leak_rate: 0.3, seed: 6, ..ReservoirConfig::new(30, 4) }).unwrap();
    p.ip = IPState { gain: p.ip.gain.map(|g| g * 0.7), bias: p.ip.bias.map(|b| b + 0.01) };
    let readout = DMatrix::from_fn(3, 31, |i, j| (i * 31 + j) as f64 / 7.0);
    checkpoint::save(&path, &p, Some(&readout)).unwrap();
    let (back, w) = checkpoint::load(&path).unwrap();
    assert_eq!(back, p);
    assert_eq!(w.unwrap(), readout);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn states_stay_in_open_unit_interval(seed_v in 0u64..1000, leak in 0.05f64..1.0, scale in 0.1f64..3.0) {
        let p = init_reservoir(&ReservoirConfig { leak_rate: leak, input_scaling: scale, seed: seed_v, ..ReservoirConfig::new(30, 2) }).unwrap();
        let mut rng = seed::rng(seed_v);
        let seq = DMatrix::from_fn(60, 2, |_, _| rng.random_range(-5.0..5.0));
        let traj = p.run_sequence(&seq, 0).unwrap();
        prop_assert!(traj.states.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn washout_only_drops_leading_columns(seed_v in 0u64..1000, washout in 0usize..40) {
        let p = init_reservoir(&ReservoirConfig { seed: seed_v, ..ReservoirConfig::new(20, 1) }).unwrap();
        let seq = DMatrix::from_fn(40, 1, |t, _| (t as f64 * 0.3).sin());
        let full = p.run_sequence(&seq, 0).unwrap();
        let cut = p.run_sequence(&seq, washout).unwrap();
        prop_assert_eq!(cut.n_collected(), 40 - washout);
        prop_assert_eq!(cut.collected(), full.states.columns(washout, 40 - washout));
    }

    #[test]
    fn init_is_a_function_of_config(seed_v in 0u64..10_000, rho in 0.1f64..0.99) {
        let cfg = ReservoirConfig { spectral_radius: rho, seed: seed_v, ..ReservoirConfig::new(25, 3) };
        let a = init_reservoir(&cfg).unwrap();
        let b = init_reservoir(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.ip == IPState::initial(25));
    }
}
