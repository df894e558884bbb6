//! Structural invariants over randomized parameters.

use optoqsd::coeffs::{solve_coeffs, CoeffVariant};
use optoqsd::config::{BOperator, Method, RunConfig};
use optoqsd::hilbert::SystemParams;
use optoqsd::run::compute_ttcf;
use proptest::prelude::*;

fn small(gamma: f64, lambda: f64) -> RunConfig {
    RunConfig {
        gamma,
        lambda,
        alpha0_re: 0.3,
        fock_n: 1,
        dim_c: 5,
        dim_m: 5,
        dt: 0.01,
        t_final: 1.0,
        n_traj: 12,
        batch_size: 4,
        ..RunConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn deterministic_route_preserves_trace_and_hermiticity(gamma in 0.5f64..5.0, lambda in 0.0f64..0.6) {
        let o = compute_ttcf(&small(gamma, lambda), Method::Deterministic, None).unwrap();
        prop_assert!(o.diagnostics["max_trace_error"].as_f64().unwrap() <= 1e-10);
        prop_assert!(o.diagnostics["max_hermiticity_error"].as_f64().unwrap() <= 1e-10);
    }

    #[test]
    fn ttcf_is_linear_in_b(gamma in 0.5f64..5.0, lambda in 0.0f64..0.6) {
        let run = |b| compute_ttcf(&RunConfig { operator_b: b, ..small(gamma, lambda) }, Method::Deterministic, None).unwrap().trace.values;
        let (sum, lo, hi) = (run(BOperator::Xm), run(BOperator::B), run(BOperator::Bd));
        for ((s, l), h) in sum.iter().zip(&lo).zip(&hi) {
            prop_assert!((s - l - h).norm() <= 1e-12 * (1.0 + s.norm()));
        }
    }

    #[test]
    fn ensemble_ignores_worker_count(workers in 1usize..5, seed in any::<u64>()) {
        let cfg = RunConfig { seed, method: Method::Stochastic, ..small(2.0, 0.4) };
        let one = compute_ttcf(&cfg, Method::Stochastic, Some(1)).unwrap();
        let many = compute_ttcf(&cfg, Method::Stochastic, Some(workers)).unwrap();
        prop_assert_eq!(one.trace.values, many.trace.values);
        prop_assert_eq!(one.sigma, many.sigma);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uncoupled_coefficients_vanish(gamma in 0.1f64..20.0, big_gamma in 0.1f64..4.0, paper in any::<bool>()) {
        let p = SystemParams { coupling: 0.0, memory_rate: gamma, bath_strength: big_gamma, ..SystemParams::default() };
        let dt = (0.1 / (big_gamma * gamma).max(gamma).max(5.0)).min(0.01);
        let v = if paper { CoeffVariant::Paper } else { CoeffVariant::Rederived };
        let c = solve_coeffs(&p, dt, 500, v).unwrap();
        for j in [0, 1, 3] {
            prop_assert!(c.series(j).iter().all(|f| f.norm() <= 1e-14));
        }
        prop_assert!(c.at(0).unwrap().iter().all(|f| *f == num_complex::Complex64::new(0.0, 0.0)));
    }
}
