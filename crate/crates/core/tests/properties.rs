//! Property-based checks of the module invariants.

mod common;

use intercon::analysis::{check_envelope_series, ENVELOPE_TOL};
use intercon::controller::{AgentController, ControllerParams};
use intercon::design::{make_gain, published_p, residuals, solve_p, ChainSpec};
use intercon::graph::Graph;
use intercon::plant::HeterogeneousExample;
use intercon::schedule::{Mode, ModeSchedule, ScheduleParams};
use intercon::{ExperimentConfig, Simulation};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn weighted_graph() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (2usize..7).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..2.0], n * (n - 1) / 2),
            proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], n),
        )
    })
}

fn build(n: usize, upper: &[f64], pin: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            a[(i, j)] = upper[k];
            a[(j, i)] = upper[k];
            k += 1;
        }
    }
    let mut b = DVector::from_column_slice(pin);
    // at least one follower must see the leader
    if b.iter().all(|&v| v == 0.0) {
        b[0] = 1.0;
    }
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_annihilates_ones((n, upper, pin) in weighted_graph()) {
        let (a, b) = build(n, &upper, &pin);
        let g = Graph::new(a, b).unwrap();
        let l = g.laplacian();
        let ones = DVector::from_element(n, 1.0);
        prop_assert!((&l * ones).amax() < 1e-12);
        prop_assert!((&l - l.transpose()).amax() == 0.0);
    }

    #[test]
    fn pinned_spectrum_is_permutation_invariant((n, upper, pin) in weighted_graph(), shift in 1usize..6) {
        let (a, b) = build(n, &upper, &pin);
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pa = DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
        let pb = DVector::from_fn(n, |i, _| b[perm[i]]);
        let s1 = Graph::new(a, b).unwrap().pinned_spectrum();
        let s2 = Graph::new(pa, pb).unwrap().pinned_spectrum();
        for (x, y) in s1.values.iter().zip(s2.values.iter()) {
            prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
        prop_assert!(s1.min() >= -1e-12);
    }

    #[test]
    fn schedule_modes_match_periods(seed in any::<u64>(), probes in proptest::collection::vec(0.0f64..20.0, 32)) {
        let params = ScheduleParams { seed, ..Default::default() };
        let s = ModeSchedule::generate(&params, 0.1332, 20.0).unwrap();
        for t in probes {
            let p = s.periods().iter().find(|p| p.tau_on <= t && t < p.tau_next).unwrap();
            let expected = if t < p.tau_off { Mode::On } else { Mode::Off };
            prop_assert_eq!(s.mode_at(t).unwrap(), expected);
        }
        prop_assert!(s.mode_at(20.0).is_err());
        let cert = s.certify(0.4529, 3.4);
        prop_assert!(cert.feasible && cert.lambda > 0.0);
    }

    #[test]
    fn full_duty_budget_is_never_feasible(seed in any::<u64>()) {
        let (da, db) = (0.4529, 3.4);
        let params = ScheduleParams { seed, off_fraction: 1.0, grid: 0.0, ..Default::default() };
        let s = ModeSchedule::generate(&params, da / db, 20.0).unwrap();
        let cert = s.certify(da, db);
        prop_assert!(!cert.feasible);
        prop_assert!(cert.periods.iter().all(|c| c.lambda.abs() < 1e-12));
    }

    #[test]
    fn gain_is_linear_in_c0(c0 in 1u32..50) {
        let spec = ChainSpec::new(2).unwrap();
        let p = published_p();
        let k = make_gain(&p, &spec, c0, 1.0).unwrap();
        let k1 = make_gain(&p, &spec, 1, 1.0).unwrap();
        prop_assert_eq!(k, k1 * c0 as f64);
    }

    #[test]
    fn solver_meets_both_inequalities(order in 1usize..5, c1 in 0.5f64..40.0, c3 in 0.5f64..6.0) {
        let spec = ChainSpec::new(order).unwrap();
        match solve_p(&spec, c1, c3) {
            Ok(sol) => {
                prop_assert!(sol.residuals.strictly_negative());
                let r = residuals(&spec, &sol.p, c1, c3);
                prop_assert!(r.riccati_max_eig < 0.0 && r.growth_max_eig < 0.0);
            }
            // the growth inequality can be infeasible for small c3; that must be reported, not hidden
            Err(e) => {
                let infeasible = matches!(e, intercon::Error::DesignInfeasible { .. });
                prop_assert!(infeasible, "unexpected error {}", e);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn controller_matches_direct_formulas(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (x, eta, t1, t2) = common::random_case(&mut rng);
        let params = ControllerParams::default();
        let ctrl = AgentController::new(2, params).unwrap();
        let eval = ctrl.evaluate_with(
            &[&t1, &t2],
            &HeterogeneousExample,
            2,
            &DVector::from_column_slice(&x),
            &DVector::from_column_slice(&eta),
        );
        let gains = common::Gains { k: params.gain, rho: params.rho, sigma: params.sigma, gamma: params.gamma };
        let o = common::second_order(x, eta, [&t1, &t2], &gains);
        prop_assert!(common::close(eval.e[0], o.e[0], 1e-12));
        prop_assert!(common::close(eval.e[1], o.e[1], 1e-12));
        prop_assert!(common::close(eval.alphas[0], o.alpha1, 1e-12));
        prop_assert!(common::close(eval.u, o.u, 1e-12));
        for q in 0..2 {
            for (a, b) in eval.phis[q].iter().zip(&o.phi[q]) {
                prop_assert!(common::close(*a, *b, 1e-12));
            }
        }
    }

    #[test]
    fn virtual_layer_respects_envelopes(seed in any::<u64>()) {
        let cfg = ExperimentConfig::defaults_with(&[format!("schedule.seed={}", seed >> 12)]).unwrap().sim;
        let sim = Simulation::new(cfg).unwrap();
        let v = sim.run_virtual_layer().unwrap();
        let r = check_envelope_series(&v, sim.config().run.dt, sim.design(), sim.schedule(), ENVELOPE_TOL);
        prop_assert_eq!(r.violations(), 0);
    }
}
