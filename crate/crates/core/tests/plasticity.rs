mod common;

use common::{random_client, random_clients, reservoir};
use fedres_core::federation::{run_federation, FederationConfig};
use fedres_core::plasticity::{activation_stats, ip_delta, local_ip_update, local_ip_update_from, IPConfig, RuleVariant};
use fedres_core::reservoir::GAIN_FLOOR;
use nalgebra::DVector;
use proptest::prelude::*;

fn canonical(epochs: usize) -> IPConfig {
    IPConfig { mu: 0.0, sigma: 0.1, eta: 0.01, epochs, rule_variant: RuleVariant::CanonicalKL, ..IPConfig::default() }
}

proptest! {
    #[test]
    fn gain_step_couples_to_bias_step(
        y in prop::collection::vec(-0.999f64..0.999, 1..8),
        seed_net in -3.0f64..3.0,
        g0 in 0.01f64..4.0,
        eta in 0.0f64..0.1,
        canonical in any::<bool>(),
    ) {
        let n = y.len();
        let x_tilde = DVector::from_vec(y);
        let x_net = DVector::from_fn(n, |i, _| seed_net * (i as f64 + 1.0) / n as f64);
        let gain = DVector::from_fn(n, |i, _| g0 + i as f64 * 0.1);
        let rule_variant = if canonical { RuleVariant::CanonicalKL } else { RuleVariant::Ungrouped };
        let cfg = IPConfig { eta, rule_variant, ..IPConfig::default() };
        let d = ip_delta(&x_tilde, &x_net, &gain, &cfg).unwrap();
        let again = ip_delta(&x_tilde, &x_net, &gain, &cfg).unwrap();
        prop_assert_eq!(&d, &again);
        for i in 0..n {
            let lhs = d.delta_gain[i] - eta / gain[i];
            let rhs = d.delta_bias[i] * x_net[i];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn gain_floor_survives_aggressive_rates(seed_v in 0u64..200, eta in 0.05f64..0.5) {
        let res = reservoir(20, 2, seed_v);
        let data = random_client("u", 1, 64, 2, 2, seed_v);
        let cfg = IPConfig { eta, sigma: 0.01, epochs: 2, ..IPConfig::default() };
        if let Ok(st) = local_ip_update(&res, &data, &cfg) {
            prop_assert!(st.gain.min() >= GAIN_FLOOR);
        }
    }
}

#[test]
fn mean_drifts_toward_target_across_checkpoints() {
    let res = reservoir(60, 3, 31);
    let train = random_client("t", 2, 400, 3, 2, 31);
    let probe = random_client("p", 1, 400, 3, 2, 32);
    let cfg = IPConfig { mu: 0.05, eta: 0.002, ..canonical(5) };
    let mut state = res.ip.clone();
    let mut errors = vec![(activation_stats(&res, &state, &probe).unwrap().0 - cfg.mu).abs()];
    for _ in 0..6 {
        state = local_ip_update_from(&res, &state, &train, &cfg).unwrap();
        errors.push((activation_stats(&res, &state, &probe).unwrap().0 - cfg.mu).abs());
    }
    assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-3), "{errors:?}");
    assert!(errors.last().unwrap() < &errors[0]);
}

#[test]
fn three_clients_and_pooled_client_both_reach_target() {
    let res = reservoir(100, 3, 41);
    let clients = random_clients(3, 2, 300, 3, 2, 41);
    let pooled = {
        let mut p = clients[0].clone();
        for c in &clients[1..] {
            p.sequences.extend(c.sequences.iter().cloned());
        }
        p
    };
    let probe = random_client("p", 2, 300, 3, 2, 42);
    let rounds = 4;
    let fed_cfg = FederationConfig::new(vec![0, 1, 2], canonical(2), rounds, 1e-2);
    let fed = run_federation(&fed_cfg, &res, &clients).unwrap().state;
    let central = local_ip_update(&res, &pooled, &canonical(2 * rounds as usize)).unwrap();
    for st in [fed, central] {
        let (mean, std) = activation_stats(&res, &st, &probe).unwrap();
        assert!(mean.abs() <= 0.05 && (std - 0.1).abs() <= 0.02, "mean {mean} std {std}");
    }
}
