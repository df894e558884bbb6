//! Independent reference values shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use num_complex::Complex64 as C64;
use optoqsd::hilbert::{apply_operator, ModeOps, Operator, StateVec, SystemParams};

/// Linear-mode index: `a, a†, b, b†, c, c†`.
const MODES: usize = 6;

/// Heisenberg-picture TTCF `⟨(a† + a)(t) B⟩` for the linearized model,
/// exact in infinite dimension.
///
/// Quadratic Hamiltonians with linear jump operators map linear operators to
/// linear operators, so `a(t) + a†(t) = Σ r_k(t) v_k` with `v` the six ladder
/// operators of cavity, mechanics and auxiliary mode. With the auxiliary mode
/// in vacuum only the system components survive the trace:
/// `TTCF(t) = Σ_k r_k(t) ⟨ψ₀| v_k B |ψ₀⟩`.
///
/// `markov = true` drops the auxiliary mode and damps `b` at rate `Γ`.
pub struct LinearModes {
    m: [[C64; MODES]; MODES],
}

impl LinearModes {
    pub fn new(p: &SystemParams, markov: bool) -> Self {
        let i = C64::i();
        let z = C64::new(0.0, 0.0);
        let (w0, w, l) = (p.cavity_freq, p.mech_freq, p.coupling);
        let g = (p.bath_strength * p.memory_rate / 2.0).sqrt();
        let half_kappa = p.memory_rate;
        let mut m = [[z; MODES]; MODES];
        // row k: d v_k / dt = Σ_j m[k][j] v_j
        m[0][0] = -i * w0;
        m[0][2] = i * l;
        m[0][3] = i * l;
        m[2][2] = -i * w;
        m[2][0] = i * l;
        m[2][1] = i * l;
        if markov {
            m[2][2] -= C64::new(p.bath_strength / 2.0, 0.0);
        } else {
            m[2][4] = -i * g;
            m[4][2] = -i * g;
            m[4][4] = C64::new(-half_kappa, 0.0);
        }
        // adjoint rows are conjugates with swapped partner indices
        for k in [0usize, 2, 4] {
            for j in 0..MODES {
                let partner = j ^ 1;
                m[k + 1][partner] = m[k][j].conj();
            }
        }
        Self { m }
    }

    fn rhs(&self, r: &[C64; MODES]) -> [C64; MODES] {
        // A(t) = Σ r_k v_k  ⇒  dr_j/dt = Σ_k r_k m[k][j]
        std::array::from_fn(|j| (0..MODES).map(|k| r[k] * self.m[k][j]).sum())
    }

    /// Coefficients `r(t_k)` of `a(t) + a†(t)` on `t_k = k·dt`.
    pub fn quadrature_coefficients(&self, dt: f64, n_steps: usize, substeps: usize) -> Vec<[C64; MODES]> {
        let one = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        let mut r = [one, one, z, z, z, z];
        let h = dt / substeps as f64;
        let mut out = vec![r];
        for _ in 0..n_steps {
            for _ in 0..substeps {
                let k1 = self.rhs(&r);
                let k2 = self.rhs(&std::array::from_fn(|j| r[j] + k1[j] * (0.5 * h)));
                let k3 = self.rhs(&std::array::from_fn(|j| r[j] + k2[j] * (0.5 * h)));
                let k4 = self.rhs(&std::array::from_fn(|j| r[j] + k3[j] * h));
                for j in 0..MODES {
                    r[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0);
                }
            }
            out.push(r);
        }
        out
    }
}

/// `⟨ψ₀| v B |ψ₀⟩` for `v ∈ {a, a†, b, b†}`.
pub fn initial_moments(ops: &ModeOps, psi0: &StateVec, b: &Operator) -> [C64; 4] {
    let phi0 = apply_operator(b, psi0).unwrap();
    [&ops.a, &ops.ad, &ops.b, &ops.bd].map(|v| psi0.inner(&apply_operator(v, &phi0).unwrap()))
}

/// Exact `⟨(a† + a)(t) B⟩` on `k·dt`, `k = 0..=n_steps`.
pub fn exact_quadrature_ttcf(p: &SystemParams, markov: bool, moments: [C64; 4], dt: f64, n_steps: usize) -> Vec<C64> {
    LinearModes::new(p, markov)
        .quadrature_coefficients(dt, n_steps, 20)
        .iter()
        .map(|r| (0..4).map(|k| r[k] * moments[k]).sum())
        .collect()
}

/// Relative L2 distance with `x` as reference.
pub fn rel_l2(x: &[C64], y: &[C64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
    let n: f64 = x.iter().map(|a| a.norm_sqr()).sum();
    (d / n).sqrt()
}

/// First moments `w_k = tr(v_k 𝒫(t))`, `v = (a, a†, b, b†)`, of the
/// deterministic QSD equation in infinite dimension. For linear `v` the
/// generator closes: `d tr(v 𝒫) = tr((i[H, v] + Ō†[v, b] + [b†, v]Ō) 𝒫)`.
/// Returns `w_0 + w_1 = ⟨(a† + a)(t) B⟩` on the full grid of `c`.
pub fn qsd_linear_quadrature_ttcf(p: &SystemParams, c: &optoqsd::CoeffSet, moments: [C64; 4]) -> Vec<C64> {
    let i = C64::i();
    let (w0, w, l) = (p.cavity_freq, p.mech_freq, p.coupling);
    let drift = |f: [C64; 4]| -> [[C64; 4]; 4] {
        let z = C64::new(0.0, 0.0);
        let mut n = [[z; 4]; 4];
        n[0] = [-i * w0, z, i * l, i * l];
        n[1] = [z, i * w0, -i * l, -i * l];
        // −Ō for b, −Ō† for b†
        n[2] = [i * l - f[0], i * l - f[1], -i * w - f[2], -f[3]];
        n[3] = [-i * l - f[1].conj(), -i * l - f[0].conj(), -f[3].conj(), i * w - f[2].conj()];
        n
    };
    let apply = |n: &[[C64; 4]; 4], v: &[C64; 4]| -> [C64; 4] { std::array::from_fn(|k| (0..4).map(|j| n[k][j] * v[j]).sum()) };
    let dt = c.dt();
    let mut v = moments;
    let mut out = vec![v[0] + v[1]];
    for step in 0..c.n_steps() {
        let (n0, n1, n2) = (drift(c.at_half(2 * step)), drift(c.at_half(2 * step + 1)), drift(c.at_half(2 * step + 2)));
        let k1 = apply(&n0, &v);
        let k2 = apply(&n1, &std::array::from_fn(|j| v[j] + k1[j] * (0.5 * dt)));
        let k3 = apply(&n1, &std::array::from_fn(|j| v[j] + k2[j] * (0.5 * dt)));
        let k4 = apply(&n2, &std::array::from_fn(|j| v[j] + k3[j] * dt));
        for j in 0..4 {
            v[j] += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (dt / 6.0);
        }
        out.push(v[0] + v[1]);
    }
    out
}
