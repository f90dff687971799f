use approx::assert_relative_eq;
use proptest::prelude::*;

use commsim_core::compressors::{
    apply_natural, apply_top_k, compose, estimate_omega, estimate_theta, perm_k_with, Collection, CollectionMode,
    CompressorSpec, Inputs,
};
use commsim_core::rng::{stream, Role};
use commsim_core::telemetry::{charge, CostModel, Payload};
use commsim_core::tuning::{
    expected_coords, m3_beta_general, step_m3, step_m3_general, step_marinap_general, step_marinap_pl, M3Inputs,
};

#[test]
fn rand_k_variance_parameter() {
    let col = Collection::new(CompressorSpec::RandK { k: 2 }, 1, 10).unwrap();
    assert_eq!(col.omega(), Some(4.0));
    let est = estimate_omega(&col, &[1.0; 10], 100_000, 1).unwrap();
    assert!((est / 4.0 - 1.0).abs() < 0.05, "{est}");
}

#[test]
fn same_rand_k_theta_equals_omega() {
    let (d, n, k) = (20, 4, 5);
    let col = Collection::new(CompressorSpec::SameRandK { k }, n, d).unwrap();
    let x: Vec<f64> = (0..d).map(|j| 1.0 + j as f64).collect();
    let omega = d as f64 / k as f64 - 1.0;
    let est = estimate_theta(&col, &x, 50_000, 2).unwrap();
    assert!((est / omega - 1.0).abs() < 0.1, "{est} vs {omega}");
}

#[test]
fn perm_k_with_identity_permutation() {
    let msgs = perm_k_with(&[1.0, 2.0, 3.0, 4.0], 2, &[0, 1, 2, 3]);
    assert_eq!(msgs[0].densify(), vec![2.0, 4.0, 0.0, 0.0]);
    assert_eq!(msgs[1].densify(), vec![0.0, 0.0, 6.0, 8.0]);
    assert!(msgs.iter().all(|m| m.cost == 2.0));
}

#[test]
fn top_k_examples() {
    assert_eq!(apply_top_k(&[3.0, -5.0, 1.0], 1).unwrap().densify(), vec![0.0, -5.0, 0.0]);
    assert_eq!(apply_top_k(&[2.0, -2.0], 1).unwrap().densify(), vec![2.0, 0.0]);
}

#[test]
fn natural_splits_three_evenly() {
    let mut rng = stream(3, Role::Init, 0);
    let draws = 100_000;
    let mut fours = 0;
    for _ in 0..draws {
        let v = apply_natural(&[3.0], &mut rng).unwrap().values[0];
        assert!(v == 2.0 || v == 4.0);
        fours += (v == 4.0) as usize;
    }
    // p·2 + (1 − p)·4 = 3 gives p = 1/2; 5 standard errors is 0.008.
    assert!((fours as f64 / draws as f64 - 0.5).abs() < 0.008);
}

#[test]
fn natural_perm_k_message_costs_27_bits() {
    let (d, n) = (300, 100);
    let col = Collection::new(compose(CompressorSpec::Natural, CompressorSpec::PermK), n, d).unwrap();
    let x: Vec<f64> = (0..d).map(|j| 0.5 + j as f64).collect();
    let mut server = stream(0, Role::Server, 0);
    let mut workers: Vec<_> = (0..n as u64).map(|i| stream(0, Role::Downlink, i)).collect();
    let msgs = col.compress(Inputs::Shared(&x), &mut server, &mut workers);
    assert_eq!(charge(Payload::Sparse(&msgs[0]), &CostModel::default()), 3.0);
    assert_eq!(charge(Payload::Sparse(&msgs[0]), &CostModel::bits()), 27.0);
    assert_eq!(charge(Payload::Dense(d), &CostModel::default()), 300.0);
}

#[test]
fn marina_p_step_examples() {
    assert_relative_eq!(step_marinap_general(1.0, 1.0, 0.0, 9.0, 0.0, 0.1).unwrap(), 0.1, epsilon = 1e-15);
    assert_eq!(step_marinap_general(2.0, 0.0, 5.0, 3.0, 0.0, 0.3).unwrap(), 0.5);
    let pl = step_marinap_pl(1.0, 1.0, 0.0, 1.0, 0.0, 0.5, 0.25).unwrap();
    assert_relative_eq!(pl, 1.0 / (1.0 + 2f64.sqrt()), epsilon = 1e-15);
    assert!(step_marinap_general(1.0, 1.0, 1.0, 1.0, 1.0, 0.0).is_err());
}

#[test]
fn m3_step_examples() {
    let p = step_m3(1.0, 0.0, 0.0, 2.0, 1).unwrap();
    assert_relative_eq!(p.gamma, 1.0 / 69.0, epsilon = 1e-15);
    assert_eq!(p.beta, 1.0);
    assert_relative_eq!(step_m3(1.0, 0.0, 0.0, 1.0, 8).unwrap().beta, 0.25, epsilon = 1e-15);

    let inp = M3Inputs {
        l: 1.0,
        l_a: 0.5,
        l_b: 2.0,
        l_max: 3.0,
        n: 4,
        omega_p: 3.0,
        omega_d: 2.0,
        theta: 0.0,
        p_p: 0.25,
        p_d: 0.5,
        beta: 0.5,
    };
    // Bracket written out term by term.
    let lb = (0.0 / 0.25 + (1.0 + 0.0) / 0.25) * 4.0;
    let la = (3.0 / 0.25 + (1.0 + 0.75) / 0.25) * 0.25;
    let lm = (2.0 * 3.0 * 0.5 / (4.0 * 0.5) + 2.0 * 1.75 / (4.0 * 0.5)) * 9.0;
    let expected = 1.0 / (1.0 + (288.0f64 * (lb + la + lm)).sqrt());
    assert_relative_eq!(step_m3_general(&inp).unwrap().gamma, expected, max_relative = 1e-14);
}

/// `(27/(26·26·27))^{1/3} = 676^{−1/3}`.
#[test]
fn m3_beta_for_27_workers() {
    let beta = m3_beta_general(27, 26.0, 26.0).unwrap();
    let oracle = (27.0f64 / (26.0 * 26.0 * 27.0)).powf(1.0 / 3.0);
    assert_relative_eq!(beta, oracle, max_relative = 1e-14);
    assert!((beta - 0.114).abs() < 5e-4);
}

#[test]
fn expected_coords_examples() {
    assert_eq!(expected_coords(1.0, 10, 300).unwrap(), 300.0);
    for (k, d) in [(1, 10), (3, 300), (30, 300)] {
        assert!(expected_coords(k as f64 / d as f64, k, d).unwrap() <= 2.0 * k as f64);
    }
}

/// With `γ = 1/(√a + b)`, `aγ² + bγ ≤ 1` on a 20×20 log grid.
#[test]
fn step_bound_quadratic_inequality_grid() {
    for i in 0..20 {
        for j in 0..20 {
            let a = 10f64.powf(-4.0 + 8.0 * i as f64 / 19.0);
            let b = 10f64.powf(-4.0 + 8.0 * j as f64 / 19.0);
            let g = 1.0 / (a.sqrt() + b);
            assert!(a * g * g + b * g <= 1.0 + 1e-12, "a={a}, b={b}");
        }
    }
}

#[test]
fn independent_collections_default_to_independent_mode() {
    let col = Collection::new(CompressorSpec::RandK { k: 2 }, 3, 9).unwrap();
    assert_eq!(col.mode(), CollectionMode::Independent);
    assert!(Collection::with_mode(CompressorSpec::PermK, CollectionMode::Independent, 3, 9).is_err());
}

proptest! {
    #[test]
    fn marina_p_step_is_monotone(
        l in 0.1..10.0f64, l_a in 0.0..10.0f64, l_b in 0.0..10.0f64,
        omega in 0.0..50.0f64, theta in 0.0..5.0f64, p in 0.01..1.0f64, bump in 1.0..3.0f64,
    ) {
        let base = step_marinap_general(l, l_a, l_b, omega, theta, p).unwrap();
        let tol = 1e-12 * base;
        prop_assert!(step_marinap_general(l * bump, l_a, l_b, omega, theta, p).unwrap() <= base + tol);
        prop_assert!(step_marinap_general(l, l_a * bump, l_b, omega, theta, p).unwrap() <= base + tol);
        prop_assert!(step_marinap_general(l, l_a, l_b * bump, omega, theta, p).unwrap() <= base + tol);
        prop_assert!(step_marinap_general(l, l_a, l_b, omega * bump, theta, p).unwrap() <= base + tol);
        prop_assert!(step_marinap_general(l, l_a, l_b, omega, theta * bump, p).unwrap() <= base + tol);
        prop_assert!(step_marinap_general(l, l_a, l_b, omega, theta, (p * bump).min(1.0)).unwrap() >= base - tol);
    }
}
