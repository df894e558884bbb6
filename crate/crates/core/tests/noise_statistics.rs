//! Sampled bath noise against its exact kernel.

use optoqsd::hilbert::SystemParams;
use optoqsd::noise::{kernel_statistics, kernel_value};

#[test]
fn ensemble_moments_match_kernel() {
    let p = SystemParams {
        bath_strength: 1.0,
        memory_rate: 0.5,
        ..SystemParams::default()
    };
    let dt = 0.01;
    let lags = [0usize, 50, 200];
    let (mean, stats) = kernel_statistics(&p, 99, 4000, dt, 300, &lags).unwrap();
    assert!(mean.mean.norm() <= 4.0 * mean.stderr_re.hypot(mean.stderr_im));
    for (s, &lag) in stats.iter().zip(&lags) {
        let tau = lag as f64 * dt;
        // Γγ/2 · e^{−γτ}
        let want = 0.25 * (-0.5 * tau).exp();
        assert!((kernel_value(&p, tau).re - want).abs() < 1e-15);
        let c = &s.correlation;
        assert!((c.mean.re - want).abs() <= 4.0 * c.stderr_re, "τ={tau}: {} vs {want}", c.mean.re);
        assert!(c.mean.im.abs() <= 4.0 * c.stderr_im);
        let q = &s.pseudo;
        assert!(q.mean.re.abs() <= 4.0 * q.stderr_re && q.mean.im.abs() <= 4.0 * q.stderr_im);
    }
}
