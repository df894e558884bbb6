//! Kernel-integrated O-operator coefficients `F₁..F₄`.
//!
//! With the exponential kernel the two-time functions never need to be
//! materialized: `F_j(t) = ∫₀ᵗ α(t,s) f_j(t,s) ds` obey a closed Riccati-type
//! system, integrated here with fixed-step RK4 from `F_j(0) = 0`. The result
//! is stored on the interleaved full/half grid that the propagators read.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{ModeOps, Operator, SystemParams};

/// Upper bound on `dt · max(γ, ω₀, Ω, Γγ)`.
pub const STIFFNESS_LIMIT: f64 = 0.1;
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Sign convention of the `iλ` terms.
///
/// `Paper` keeps the original sign convention. `Rederived` follows from
/// expanding the consistency condition for `H = ω₀a†a + Ωb†b − λ(a†+a)(b†+b)`
/// with `L = b`, which flips the sign of every `iλ` term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffVariant {
    Paper,
    #[default]
    Rederived,
}

impl CoeffVariant {
    fn coupling_sign(self) -> f64 {
        match self {
            CoeffVariant::Paper => 1.0,
            CoeffVariant::Rederived => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoeffVariant::Paper => "paper",
            CoeffVariant::Rederived => "rederived",
        }
    }
}

/// `F₁..F₄` on the half grid `t = j·dt/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffSet {
    dt: f64,
    values: Vec<[C64; 4]>,
}

impl CoeffSet {
    /// All-zero coefficients (no bath).
    pub fn zero(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            values: vec![[C64::new(0.0, 0.0); 4]; 2 * n_steps + 1],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        (self.values.len() - 1) / 2
    }

    #[inline]
    pub fn at_half(&self, j: usize) -> [C64; 4] {
        self.values[j]
    }

    pub fn at(&self, k: usize) -> Result<[C64; 4]> {
        self.values.get(2 * k).copied().ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.n_steps() + 1,
        })
    }

    /// Full-grid series of coefficient `j ∈ 0..4`.
    pub fn series(&self, j: usize) -> Vec<C64> {
        self.values.iter().step_by(2).map(|f| f[j]).collect()
    }
}

pub fn stiffness_check(p: &SystemParams, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let rates = [
        ("gamma", p.memory_rate),
        ("omega0", p.cavity_freq.abs()),
        ("Omega", p.mech_freq.abs()),
        ("Gamma*gamma", p.bath_strength * p.memory_rate),
    ];
    let (rate_name, rate) = rates.into_iter().fold(("gamma", 0.0), |acc, r| if r.1 > acc.1 { r } else { acc });
    let product = dt * rate;
    if product > STIFFNESS_LIMIT * (1.0 + 1e-9) {
        return Err(Error::Stiffness {
            rate_name,
            product,
            limit: STIFFNESS_LIMIT,
        });
    }
    Ok(())
}

fn rhs(p: &SystemParams, sign: f64, f: &[C64; 4]) -> [C64; 4] {
    let i = C64::i();
    let g = p.memory_rate;
    let il = i * (sign * p.coupling);
    let [f1, f2, f3, f4] = *f;
    [
        -g * f1 + i * p.cavity_freq * f1 + il * (f3 - f4) + f1 * f3,
        -g * f2 - i * p.cavity_freq * f2 + il * (f3 - f4) + f2 * f3,
        p.kernel_amplitude() - g * f3 + i * p.mech_freq * f3 + il * (f1 - f2) + f3 * f3,
        -g * f4 - i * p.mech_freq * f4 + il * (f1 - f2) + f3 * f4,
    ]
}

fn axpy(x: &[C64; 4], h: f64, k: &[C64; 4]) -> [C64; 4] {
    std::array::from_fn(|j| x[j] + k[j] * h)
}

/// Integrates the coefficient system on `[0, n_steps·dt]`, internally with
/// step `dt/2` so that every half-grid value is an RK4 node.
pub fn solve_coeffs(p: &SystemParams, dt: f64, n_steps: usize, variant: CoeffVariant) -> Result<CoeffSet> {
    p.validate()?;
    stiffness_check(p, dt)?;
    if n_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "n_steps",
            reason: "must be >= 1".into(),
        });
    }
    let sign = variant.coupling_sign();
    let h = 0.5 * dt;
    let mut values = Vec::with_capacity(2 * n_steps + 1);
    let mut f = [C64::new(0.0, 0.0); 4];
    values.push(f);
    for j in 1..=2 * n_steps {
        let k1 = rhs(p, sign, &f);
        let k2 = rhs(p, sign, &axpy(&f, 0.5 * h, &k1));
        let k3 = rhs(p, sign, &axpy(&f, 0.5 * h, &k2));
        let k4 = rhs(p, sign, &axpy(&f, h, &k3));
        for m in 0..4 {
            f[m] += (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]) * (h / 6.0);
        }
        if let Some(index) = f.iter().position(|v| !(v.norm() <= DIVERGENCE_LIMIT)) {
            return Err(Error::CoefficientDivergence {
                index: index + 1,
                time: j as f64 * h,
            });
        }
        values.push(f);
    }
    Ok(CoeffSet { dt, values })
}

/// `Ō(t_k) = F₁a + F₂a† + F₃b + F₄b†`.
pub fn obar_operator(c: &CoeffSet, k: usize, ops: &ModeOps) -> Result<Operator> {
    let f = c.at(k)?;
    Ok(ops
        .a
        .scale(f[0])
        .add(&ops.ad.scale(f[1]))
        .add(&ops.b.scale(f[2]))
        .add(&ops.bd.scale(f[3])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Dims;

    fn baseline(gamma: f64) -> SystemParams {
        SystemParams {
            memory_rate: gamma,
            ..SystemParams::default()
        }
    }

    #[test]
    fn initial_values_vanish() {
        let c = solve_coeffs(&baseline(0.2), 1e-2, 10, CoeffVariant::Paper).unwrap();
        assert_eq!(c.at(0).unwrap(), [C64::new(0.0, 0.0); 4]);
        assert_eq!(c.at_half(0), [C64::new(0.0, 0.0); 4]);
        assert!(c.at(11).is_err());
    }

    #[test]
    fn decoupled_limit_only_f3_survives() {
        for gamma in [0.2, 2.0, 5.0] {
            let p = SystemParams {
                coupling: 0.0,
                ..baseline(gamma)
            };
            for variant in [CoeffVariant::Paper, CoeffVariant::Rederived] {
                let c = solve_coeffs(&p, 1e-3, 2000, variant).unwrap();
                for j in 0..c.values.len() {
                    let f = c.at_half(j);
                    assert_eq!(f[0], C64::new(0.0, 0.0));
                    assert_eq!(f[1], C64::new(0.0, 0.0));
                    assert_eq!(f[3], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn short_time_f3_is_linear() {
        let p = SystemParams {
            coupling: 0.0,
            ..baseline(0.2)
        };
        let c = solve_coeffs(&p, 1e-3, 10, CoeffVariant::Paper).unwrap();
        let f3 = c.at(10).unwrap()[2];
        assert!((f3.re - 0.002).abs() < 1e-5);
        assert!(f3.im.abs() < 1e-5);
    }

    #[test]
    fn stiffness_guard() {
        let p = baseline(50.0);
        assert!(solve_coeffs(&p, 1e-3, 10, CoeffVariant::Paper).is_ok());
        match solve_coeffs(&p, 2e-3, 10, CoeffVariant::Paper) {
            Err(Error::Stiffness { rate_name, .. }) => assert_eq!(rate_name, "Gamma*gamma"),
            other => panic!("expected stiffness error, got {other:?}"),
        }
        assert!(solve_coeffs(&baseline(0.2), 0.03, 10, CoeffVariant::Paper).is_err());
    }

    #[test]
    fn divergence_is_reported_with_time() {
        // Riccati blow-up: large source with weak damping
        let p = SystemParams {
            cavity_freq: 0.0,
            mech_freq: 0.0,
            coupling: 0.0,
            bath_strength: 4000.0,
            memory_rate: 0.02,
            ..SystemParams::default()
        };
        match solve_coeffs(&p, 1e-3, 20_000, CoeffVariant::Paper) {
            Err(Error::CoefficientDivergence { index, time }) => {
                assert_eq!(index, 3);
                // F3' ≈ 40 + F3² blows up near t = π/(2√40)
                assert!((time - std::f64::consts::FRAC_PI_2 / 40f64.sqrt()).abs() < 0.01, "{time}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn obar_zero_at_start_and_f3_b_when_decoupled() {
        let ops = ModeOps::new(Dims::new(3, 4)).unwrap();
        let c = solve_coeffs(&baseline(0.2), 1e-2, 50, CoeffVariant::Rederived).unwrap();
        assert_eq!(obar_operator(&c, 0, &ops).unwrap().max_abs(), 0.0);

        let p = SystemParams {
            coupling: 0.0,
            ..baseline(0.2)
        };
        let c = solve_coeffs(&p, 1e-2, 50, CoeffVariant::Rederived).unwrap();
        let o = obar_operator(&c, 50, &ops).unwrap();
        let want = ops.b.scale(c.at(50).unwrap()[2]);
        assert_eq!(o, want);
    }
}
