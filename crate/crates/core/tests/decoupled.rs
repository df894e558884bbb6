//! `λ = 0`: the cavity quadrature oscillates freely and `tr(B ρ_m)` is
//! conserved, so every route reduces to `2 Re(α₀ e^{−iω₀t}) · ⟨B⟩₀`.

use optoqsd::config::{MechState, Method, RunConfig};
use optoqsd::oracles::decoupled_quadrature_ttcf;
use optoqsd::run::compute_ttcf;
use num_complex::Complex64 as C64;

fn uncoupled(state: MechState) -> RunConfig {
    RunConfig {
        lambda: 0.0,
        gamma: 1.0,
        alpha0_re: 0.3,
        alpha0_im: 0.2,
        mech_state: state,
        fock_n: 1,
        beta_re: 0.5,
        beta_im: -0.1,
        dim_c: 8,
        dim_m: 9,
        dim_p: 6,
        dt: 0.005,
        t_final: 2.0,
        n_traj: 40,
        batch_size: 10,
        ..RunConfig::default()
    }
}

fn free_quadrature(cfg: &RunConfig, mech: C64) -> Vec<C64> {
    let alpha = C64::new(cfg.alpha0_re, cfg.alpha0_im);
    (0..=cfg.n_steps().unwrap())
        .map(|k| {
            let t = k as f64 * cfg.dt;
            C64::new(2.0 * (alpha * C64::new(0.0, -cfg.omega0 * t).exp()).re, 0.0) * mech
        })
        .collect()
}

fn sup_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn fock_mechanics_gives_zero_on_every_route() {
    let cfg = uncoupled(MechState::Fock);
    for m in [Method::Deterministic, Method::Pseudomode, Method::MarkovLindblad] {
        let o = compute_ttcf(&cfg, m, None).unwrap();
        let sup = o.trace.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(sup < 1e-12, "{}: {sup}", m.name());
    }
}

#[test]
fn coherent_mechanics_gives_free_oscillation() {
    let cfg = uncoupled(MechState::Coherent);
    let beta = C64::new(cfg.beta_re, cfg.beta_im);
    let want = free_quadrature(&cfg, C64::new(2.0 * beta.re, 0.0));
    let library = decoupled_quadrature_ttcf(
        C64::new(cfg.alpha0_re, cfg.alpha0_im),
        cfg.omega0,
        C64::new(2.0 * beta.re, 0.0),
        cfg.dt,
        cfg.n_steps().unwrap(),
    )
    .unwrap();
    assert!(sup_diff(&want, &library.values) < 1e-12);
    for m in [Method::Deterministic, Method::Pseudomode, Method::MarkovLindblad] {
        let o = compute_ttcf(&cfg, m, None).unwrap();
        let err = sup_diff(&want, &o.trace.values);
        // RK4 phase error ~ T ω₀⁵ dt⁴ / 120 ≈ 3e-8
        assert!(err < 1e-7, "{}: {err}", m.name());
    }
}

#[test]
fn stochastic_route_is_within_noise_of_free_oscillation() {
    let cfg = uncoupled(MechState::Coherent);
    let beta = C64::new(cfg.beta_re, cfg.beta_im);
    let want = free_quadrature(&cfg, C64::new(2.0 * beta.re, 0.0));
    let o = compute_ttcf(&cfg, Method::Stochastic, None).unwrap();
    let sigma = o.sigma.unwrap();
    for ((w, g), s) in want.iter().zip(&o.trace.values).zip(&sigma) {
        assert!((w - g).norm() <= 5.0 * s + 1e-9, "{w} vs {g} (σ {s})");
    }
}
