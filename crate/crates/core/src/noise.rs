//! Complex Ornstein-Uhlenbeck driving noise with kernel
//! `α(τ) = (Γγ/2) e^{-γ|τ|}`.
//!
//! `z_t = x_t + i y_t` with `x`, `y` independent stationary real OU processes
//! of variance `Γγ/4`, sampled with the exact discrete recursion on a
//! half-step grid. Each path is keyed by `(master_seed, traj_index)`: the
//! master seed fixes a ChaCha key and the trajectory index selects the stream,
//! so paths do not depend on generation order.

use std::fmt;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSeed {
    pub master_seed: u64,
    pub traj_index: u64,
}

impl NoiseSeed {
    pub fn new(master_seed: u64, traj_index: u64) -> Self {
        Self {
            master_seed,
            traj_index,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.traj_index);
        rng
    }
}

impl fmt::Display for NoiseSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(seed {}, index {})", self.master_seed, self.traj_index)
    }
}

/// Samples of `z*_t` at `t = j·dt/2`, `j = 0..=2·n_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    dt: f64,
    values: Vec<C64>,
}

impl NoisePath {
    pub fn zero(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            values: vec![C64::new(0.0, 0.0); 2 * n_steps + 1],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        (self.values.len() - 1) / 2
    }

    /// Interleaved full and half grid, `z*` convention.
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// `z*` at half-grid index `j` (time `j·dt/2`).
    #[inline]
    pub fn at_half(&self, j: usize) -> C64 {
        self.values[j]
    }

    /// `z` (not conjugated) at full-grid index `k`.
    pub fn z_at(&self, k: usize) -> C64 {
        self.values[2 * k].conj()
    }
}

/// `(Γγ/2) e^{-γ|τ|}`.
pub fn kernel_value(p: &SystemParams, tau: f64) -> C64 {
    C64::new(p.kernel_amplitude() * (-p.memory_rate * tau.abs()).exp(), 0.0)
}

pub fn sample_noise_path(seed: NoiseSeed, p: &SystemParams, dt: f64, n_steps: usize) -> Result<NoisePath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "n_steps",
            reason: "must be >= 1".into(),
        });
    }
    let var = 0.25 * p.bath_strength * p.memory_rate;
    let std0 = var.sqrt();
    let half = 0.5 * dt;
    let decay = (-p.memory_rate * half).exp();
    let kick = (var * (1.0 - (-2.0 * p.memory_rate * half).exp())).sqrt();

    let mut rng = seed.rng();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = std0 * normal();
    let mut y = std0 * normal();
    let mut values = Vec::with_capacity(2 * n_steps + 1);
    values.push(C64::new(x, -y));
    for _ in 0..2 * n_steps {
        x = decay * x + kick * normal();
        y = decay * y + kick * normal();
        values.push(C64::new(x, -y));
    }
    Ok(NoisePath { dt, values })
}

/// Monte-Carlo estimate of a two-point noise moment with its standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub tau: f64,
    pub exact: C64,
    pub mean: C64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

impl MomentEstimate {
    /// True when both components sit within `k` standard errors of the exact
    /// value.
    pub fn within(&self, k: f64) -> bool {
        let d = self.mean - self.exact;
        d.re.abs() <= k * self.stderr_re && d.im.abs() <= k * self.stderr_im
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moment {
    /// `M(z_t z*_s)`, which should equal the kernel.
    Correlation,
    /// `M(z_t z_s)`, which should vanish.
    Pseudo,
}

/// Streaming sums for one complex sample mean and its standard errors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MomentAccumulator {
    n: usize,
    sum: C64,
    sum_sq_re: f64,
    sum_sq_im: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, s: C64) {
        self.n += 1;
        self.sum += s;
        self.sum_sq_re += s.re * s.re;
        self.sum_sq_im += s.im * s.im;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn estimate(&self, tau: f64, exact: C64) -> MomentEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var_re = ((self.sum_sq_re - n * mean.re * mean.re) / (n - 1.0)).max(0.0);
        let var_im = ((self.sum_sq_im - n * mean.im * mean.im) / (n - 1.0)).max(0.0);
        MomentEstimate {
            tau,
            exact,
            mean,
            stderr_re: (var_re / n).sqrt(),
            stderr_im: (var_im / n).sqrt(),
        }
    }
}

fn estimate(samples: impl Iterator<Item = C64>, tau: f64, exact: C64) -> MomentEstimate {
    let mut acc = MomentAccumulator::default();
    samples.for_each(|s| acc.push(s));
    acc.estimate(tau, exact)
}

/// Estimates a noise moment between full-grid indices `k0` and `k0 + lag`
/// over an ensemble of paths.
pub fn empirical_moment(paths: &[NoisePath], p: &SystemParams, k0: usize, lag: usize, which: Moment) -> MomentEstimate {
    let dt = paths[0].dt;
    let tau = lag as f64 * dt;
    let (exact, samples): (C64, Box<dyn Iterator<Item = C64>>) = match which {
        Moment::Correlation => (
            kernel_value(p, tau),
            Box::new(paths.iter().map(move |path| path.z_at(k0) * path.z_at(k0 + lag).conj())),
        ),
        Moment::Pseudo => (
            C64::new(0.0, 0.0),
            Box::new(paths.iter().map(move |path| path.z_at(k0) * path.z_at(k0 + lag))),
        ),
    };
    estimate(samples, tau, exact)
}

/// Ensemble mean of `z_t` at full-grid index `k`.
pub fn empirical_mean(paths: &[NoisePath], k: usize) -> MomentEstimate {
    estimate(paths.iter().map(|path| path.z_at(k)), 0.0, C64::new(0.0, 0.0))
}

/// Kernel statistics at one lag, measured from `t₀` to `t₀ + τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagStatistics {
    /// `M(z_t z*_s)` against the kernel.
    pub correlation: MomentEstimate,
    /// `M(z_t z_s)` against zero.
    pub pseudo: MomentEstimate,
}

/// Streams `n_paths` paths (indices `0..n_paths` under `master_seed`) and
/// estimates the mean of `z` at `k0` and both two-point moments between `k0`
/// and `k0 + lag` for every lag. Paths are generated one at a time.
pub fn kernel_statistics(
    p: &SystemParams,
    master_seed: u64,
    n_paths: usize,
    dt: f64,
    k0: usize,
    lags: &[usize],
) -> Result<(MomentEstimate, Vec<LagStatistics>)> {
    if n_paths < 2 {
        return Err(Error::InvalidParameter {
            name: "noise_paths",
            reason: format!("need at least 2 paths, got {n_paths}"),
        });
    }
    let n_steps = k0 + lags.iter().copied().max().unwrap_or(0);
    let mut mean = MomentAccumulator::default();
    let mut corr = vec![MomentAccumulator::default(); lags.len()];
    let mut pseudo = vec![MomentAccumulator::default(); lags.len()];
    for i in 0..n_paths {
        let path = sample_noise_path(NoiseSeed::new(master_seed, i as u64), p, dt, n_steps.max(1))?;
        let z0 = path.z_at(k0);
        mean.push(z0);
        for (j, &lag) in lags.iter().enumerate() {
            let z1 = path.z_at(k0 + lag);
            corr[j].push(z0 * z1.conj());
            pseudo[j].push(z0 * z1);
        }
    }
    let stats = lags
        .iter()
        .enumerate()
        .map(|(j, &lag)| {
            let tau = lag as f64 * dt;
            LagStatistics {
                correlation: corr[j].estimate(tau, kernel_value(p, tau)),
                pseudo: pseudo[j].estimate(tau, C64::new(0.0, 0.0)),
            }
        })
        .collect();
    Ok((mean.estimate(0.0, C64::new(0.0, 0.0)), stats))
}
