//! The trajectory ensemble converges to the deterministic operator route.

use optoqsd::config::{Method, RunConfig};
use optoqsd::oracles::band_check;
use optoqsd::run::compute_ttcf;

#[test]
fn ensemble_mean_is_within_five_batch_sigma() {
    let cfg = RunConfig {
        gamma: 2.0,
        lambda: 0.5,
        alpha0_re: 0.4,
        fock_n: 1,
        dim_c: 6,
        dim_m: 6,
        dt: 0.01,
        t_final: 3.0,
        n_traj: 400,
        batch_size: 40,
        ..RunConfig::default()
    };
    let det = compute_ttcf(&cfg, Method::Deterministic, None).unwrap();
    let stoch = compute_ttcf(&cfg, Method::Stochastic, None).unwrap();
    assert!(stoch.excluded.is_empty());
    let band = band_check(&det.trace, &stoch.trace, stoch.sigma.as_deref().unwrap(), 5.0).unwrap();
    assert!(band.pass, "worst ratio {} at t = {}", band.worst_ratio, band.worst_time);
    // the ensemble is not trivially wide
    assert!(stoch.sigma.unwrap().iter().all(|&s| s < 0.2));

    let (norm, sigma) = stoch.norm.unwrap();
    for k in [0, 100, 300] {
        assert!((norm[k] - 1.0).abs() <= 5.0 * sigma[k] + 1e-12, "k={k}: {} ± {}", norm[k], sigma[k]);
    }
}
