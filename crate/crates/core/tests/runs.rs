use commsim_core::algorithms::{run_experiment, AlgoConfig, Runner, StopRule};
use commsim_core::compressors::{compose, Collection, CompressorSpec};
use commsim_core::problems::quadratic::BaseMatrix;
use commsim_core::problems::{generate_het_quadratic, quad_constants, HetQuadraticParams, Problem, QuadraticEnsemble};
use commsim_core::rng::{stream, Role};
use commsim_core::telemetry::{coords_to_target, CostModel, Direction, Target};

fn ensemble(n: usize, d: usize, sigma: f64, seed: u64) -> QuadraticEnsemble {
    let params = HetQuadraticParams {
        n,
        d,
        v: 1.0,
        sigma,
        v0: (sigma > 0.0).then_some(1.0),
        base: BaseMatrix::SecondDifference,
    };
    generate_het_quadratic(&params, &mut stream(seed, Role::Problem, 0)).unwrap()
}

fn configs(n: usize, d: usize, gamma: f64) -> Vec<AlgoConfig> {
    let k = d / n;
    let col = |spec| Collection::new(spec, n, d).unwrap();
    vec![
        AlgoConfig::Gd { gamma },
        AlgoConfig::Marina {
            gamma: 0.3 * gamma,
            p: 0.2,
            uplink: col(CompressorSpec::RandK { k }),
        },
        AlgoConfig::MarinaP {
            gamma: 0.3 * gamma,
            p: 0.2,
            downlink: col(CompressorSpec::PermK),
        },
        AlgoConfig::M3 {
            gamma: 0.1 * gamma,
            p_primal: 0.2,
            p_dual: 0.2,
            beta: 0.5,
            downlink: col(compose(CompressorSpec::Natural, CompressorSpec::PermK)),
            uplink: col(compose(CompressorSpec::Natural, CompressorSpec::RandK { k })),
            lean: false,
        },
        AlgoConfig::Ef21P {
            gamma: 0.3 * gamma,
            downlink: Collection::new(CompressorSpec::TopK { k }, 1, d).unwrap(),
            uplink: Some(col(CompressorSpec::RandK { k })),
        },
    ]
}

#[test]
fn gd_gradient_norm_is_monotone_at_one_over_l() {
    let ens = ensemble(4, 40, 0.0, 1);
    let l = quad_constants(&ens).unwrap().l;
    let stop = StopRule { eps: 1e-12, max_iters: 500 };
    let trace = run_experiment(&ens, AlgoConfig::Gd { gamma: 1.0 / l }, vec![0.0; 40], stop, 0, CostModel::default())
        .unwrap();
    assert!(trace.windows(2).all(|w| w[1].grad_norm_sq <= w[0].grad_norm_sq));
}

#[test]
fn marina_p_with_perm_k_reproduces_gd() {
    let (n, d) = (6, 60);
    let ens = ensemble(n, d, 0.0, 2);
    let l = quad_constants(&ens).unwrap().l;
    let x0: Vec<f64> = (0..d).map(|j| (j as f64 * 0.3).sin()).collect();
    let gd = AlgoConfig::Gd { gamma: 1.0 / l };
    let mp = AlgoConfig::MarinaP {
        gamma: 1.0 / l,
        p: 1.0 / n as f64,
        downlink: Collection::new(CompressorSpec::PermK, n, d).unwrap(),
    };
    let mut a = Runner::new(&ens, gd, x0.clone(), 0, CostModel::default(), false).unwrap();
    let mut b = Runner::new(&ens, mp, x0, 0, CostModel::default(), false).unwrap();
    for _ in 0..200 {
        a.step();
        b.step();
        let dev = a.state().x.iter().zip(&b.state().x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-10, "deviation {dev}");
    }
}

/// Ledger totals equal the sum of logged events, and each step's events
/// carry that step's index.
#[test]
fn costs_balance_against_event_log() {
    let (n, d) = (5, 50);
    let ens = ensemble(n, d, 0.3, 3);
    let l = quad_constants(&ens).unwrap().l;
    for model in [CostModel::default(), CostModel::bits()] {
        for cfg in configs(n, d, 1.0 / l) {
            let name = cfg.name();
            let mut r = Runner::new(&ens, cfg, vec![0.0; d], 7, model, true).unwrap();
            let mut seen = r.ledger().events().unwrap().len();
            assert!(r.ledger().events().unwrap().iter().all(|e| e.t == 0));
            for _ in 0..50 {
                let t = r.state().t;
                r.step();
                let events = r.ledger().events().unwrap();
                assert!(events[seen..].iter().all(|e| e.t == t && e.worker < n), "{name}");
                seen = events.len();
                let sum = |dir| events.iter().filter(|e| e.direction == dir).map(|e| e.cost).sum::<f64>();
                let rec = r.record(Default::default());
                assert!((rec.s2w_cum * n as f64 - sum(Direction::S2w)).abs() < 1e-9, "{name}");
                assert!((rec.w2s_cum * n as f64 - sum(Direction::W2s)).abs() < 1e-9, "{name}");
            }
        }
    }
}

#[test]
fn gd_cost_to_target_is_dimension_times_iterations() {
    let (n, d) = (3, 300);
    let ens = ensemble(n, d, 0.2, 4);
    let l = quad_constants(&ens).unwrap().l;
    let gamma = 1.0 / l;
    let eps = 1e-4;
    // Plain gradient descent as the oracle for the crossing index.
    let mut x = vec![0.0; d];
    let mut crossing = 0;
    loop {
        let g = ens.grad(&x);
        if g.iter().map(|v| v * v).sum::<f64>() <= eps {
            break;
        }
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= gamma * gi);
        crossing += 1;
    }
    let stop = StopRule { eps, max_iters: 1_000_000 };
    let trace = run_experiment(&ens, AlgoConfig::Gd { gamma }, vec![0.0; d], stop, 0, CostModel::default()).unwrap();
    match coords_to_target(&trace, eps).unwrap() {
        Target::Reached { t, s2w, w2s, .. } => {
            assert_eq!(t, crossing);
            assert_eq!(s2w, (d * crossing) as f64);
            assert_eq!(w2s, (d * crossing) as f64);
        }
        other => panic!("not reached: {other:?}"),
    }
}

#[test]
fn marina_p_downlink_matches_expected_coordinates() {
    let (n, d, k) = (4, 100, 10);
    let ens = ensemble(n, d, 0.3, 5);
    let l = quad_constants(&ens).unwrap().l;
    let p = k as f64 / d as f64;
    let cfg = AlgoConfig::MarinaP {
        gamma: 0.1 / l,
        p,
        downlink: Collection::new(CompressorSpec::RandK { k }, n, d).unwrap(),
    };
    let iters = 20_000;
    let mut r = Runner::new(&ens, cfg, vec![0.0; d], 9, CostModel::default(), false).unwrap();
    for _ in 0..iters {
        r.step();
    }
    let per_iter = r.ledger().per_worker().0 / iters as f64;
    let expected = p * d as f64 + (1.0 - p) * k as f64;
    assert!((per_iter / expected - 1.0).abs() < 0.03, "{per_iter} vs {expected}");
    assert!(per_iter <= 2.0 * k as f64 * 1.03);
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let (n, d) = (5, 50);
    let ens = ensemble(n, d, 0.3, 6);
    let l = quad_constants(&ens).unwrap().l;
    let stop = StopRule { eps: 1e-8, max_iters: 300 };
    for cfg in configs(n, d, 1.0 / l).into_iter().skip(1) {
        let run = |seed| run_experiment(&ens, cfg.clone(), vec![0.0; d], stop, seed, CostModel::default()).unwrap();
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2), "{}", cfg.name());
    }
}

#[test]
fn thinned_trace_is_a_subsequence_ending_at_the_last_step() {
    let (n, d) = (5, 50);
    let ens = ensemble(n, d, 0.3, 7);
    let l = quad_constants(&ens).unwrap().l;
    let cfg = configs(n, d, 1.0 / l).swap_remove(2);
    let stop = StopRule { eps: 1e-6, max_iters: 1234 };
    let full = Runner::new(&ens, cfg.clone(), vec![0.0; d], 3, CostModel::default(), false)
        .unwrap()
        .run(stop)
        .unwrap();
    let thin = Runner::new(&ens, cfg, vec![0.0; d], 3, CostModel::default(), false)
        .unwrap()
        .run_thinned(stop, 100)
        .unwrap();
    assert_eq!(thin.last(), full.last());
    for r in &thin[..thin.len() - 1] {
        assert_eq!(r.t % 100, 0);
        assert_eq!(Some(r), full.get(r.t));
    }
}
