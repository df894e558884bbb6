//! Fixed-step RK4 propagation shared by every route.
//!
//! Operator routes integrate `∂X = K X + X K† + J X M† + M X J†`. This one
//! form covers the deterministic QSD equations (`J = L`, `M = Ō(t)`,
//! `K = −iH − L†Ō(t)`), the Markov Lindblad equation (`M = (Γ/2) L`) and the
//! pseudomode Lindblad equation. `K` and `M` are linear combinations of fixed
//! matrices whose coefficients are read per half-grid index.
//!
//! Trajectory routes integrate `∂ψ = (K(t) + z*_t J) ψ` for many lanes at
//! once; lanes share `K` and differ only in their noise value.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::sparse::{OpCombo, Planes, SparseOp};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Coefficients of the time-dependent parts of `K` and `M` at half-grid
/// index `j`.
pub(crate) trait CoeffSource {
    fn k_coeffs(&self, j: usize, out: &mut [C64]);
    fn m_coeffs(&self, j: usize, out: &mut [C64]);
}

/// Time-independent generators.
pub(crate) struct Constant;

impl CoeffSource for Constant {
    fn k_coeffs(&self, _j: usize, _out: &mut [C64]) {}
    fn m_coeffs(&self, _j: usize, _out: &mut [C64]) {}
}

pub(crate) struct OperatorGenerator {
    k: OpCombo,
    m: OpCombo,
    jump: SparseOp,
}

impl OperatorGenerator {
    pub fn new(k: OpCombo, m: OpCombo, jump: SparseOp) -> Self {
        Self { k, m, jump }
    }

    pub fn dim(&self) -> usize {
        self.jump.dim()
    }

    pub fn k_terms(&self) -> usize {
        self.k.n_terms()
    }

    pub fn m_terms(&self) -> usize {
        self.m.n_terms()
    }
}

struct Assembled {
    k: SparseOp,
    m: SparseOp,
    k_coeffs: Vec<C64>,
    m_coeffs: Vec<C64>,
}

impl Assembled {
    fn new(g: &OperatorGenerator) -> Self {
        Self {
            k: g.k.blank(),
            m: g.m.blank(),
            k_coeffs: vec![ZERO; g.k_terms()],
            m_coeffs: vec![ZERO; g.m_terms()],
        }
    }

    fn load(&mut self, g: &OperatorGenerator, src: &impl CoeffSource, j: usize) {
        src.k_coeffs(j, &mut self.k_coeffs);
        src.m_coeffs(j, &mut self.m_coeffs);
        g.k.assemble_into(&self.k_coeffs, &mut self.k);
        g.m.assemble_into(&self.m_coeffs, &mut self.m);
    }
}

struct Scratch {
    adj: Planes,
    w: Planes,
    f: Planes,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Self {
            adj: Planes::zeros(len),
            w: Planes::zeros(len),
            f: Planes::zeros(len),
        }
    }
}

/// `F(Y) = K Y + M Y J†`, so that the generator is `F(X) + F(X†)†`. Only
/// left products with `K`, `M` are needed, which stream over contiguous rows.
fn half_generator(g: &OperatorGenerator, a: &Assembled, y: &Planes, out: &mut Planes, w: &mut Planes) {
    let n = g.dim();
    out.fill_zero();
    a.k.planes_mul_add(y, out, n);
    w.fill_zero();
    g.jump.planes_right_adjoint_mul_add(y, w);
    a.m.planes_mul_add(w, out, n);
}

fn apply_super(g: &OperatorGenerator, a: &Assembled, x: &Planes, out: &mut Planes, s: &mut Scratch) {
    let n = g.dim();
    half_generator(g, a, x, out, &mut s.w);
    for i in 0..n {
        for j in 0..n {
            s.adj.re[j * n + i] = x.re[i * n + j];
            s.adj.im[j * n + i] = -x.im[i * n + j];
        }
    }
    half_generator(g, a, &s.adj, &mut s.f, &mut s.w);
    for i in 0..n {
        for j in 0..n {
            out.re[i * n + j] += s.f.re[j * n + i];
            out.im[i * n + j] -= s.f.im[j * n + i];
        }
    }
}

/// One RK4 combination pass `acc (+)= x + c_acc k`, `y = x + c_y k` over
/// planar storage.
fn rk_stage(x: &Planes, k: &Planes, acc: &mut Planes, y: &mut Planes, c_acc: f64, c_y: f64, first: bool) {
    for (xs, ks, accs, ys) in [(&x.re, &k.re, &mut acc.re, &mut y.re), (&x.im, &k.im, &mut acc.im, &mut y.im)] {
        for (((&xv, &kv), a), yv) in xs.iter().zip(ks).zip(accs.iter_mut()).zip(ys.iter_mut()) {
            if first {
                *a = xv + kv * c_acc;
            } else {
                *a += kv * c_acc;
            }
            *yv = xv + kv * c_y;
        }
    }
}

fn rk_finish(acc: &Planes, k: &Planes, x: &mut Planes, h6: f64) {
    for (accs, ks, xs) in [(&acc.re, &k.re, &mut x.re), (&acc.im, &k.im, &mut x.im)] {
        for ((&a, &kv), xv) in accs.iter().zip(ks).zip(xs.iter_mut()) {
            *xv = a + kv * h6;
        }
    }
}

/// Integrates each matrix in `states` for `n_steps` steps of size `dt`,
/// calling `observe(k, states)` at every full-grid index `k = 0..=n_steps`.
/// The observer may abort the run by returning an error.
pub(crate) fn evolve_operators<E>(
    g: &OperatorGenerator,
    src: &impl CoeffSource,
    states: &mut [Vec<C64>],
    dt: f64,
    n_steps: usize,
    mut observe: impl FnMut(usize, &[Vec<C64>]) -> Result<(), E>,
) -> Result<(), E> {
    let n = g.dim();
    let len = n * n;
    let mut at_start = Assembled::new(g);
    let mut at_mid = Assembled::new(g);
    let mut at_end = Assembled::new(g);
    let mut planar: Vec<Planes> = states.iter().map(|x| Planes::from_complex(x)).collect();
    let mut y = Planes::zeros(len);
    let mut k = Planes::zeros(len);
    let mut acc = Planes::zeros(len);
    let mut scratch = Scratch::new(len);
    let (h2, h3, h6) = (0.5 * dt, dt / 3.0, dt / 6.0);

    observe(0, states)?;
    at_start.load(g, src, 0);
    for step in 0..n_steps {
        at_mid.load(g, src, 2 * step + 1);
        at_end.load(g, src, 2 * step + 2);
        for (x, out) in planar.iter_mut().zip(states.iter_mut()) {
            apply_super(g, &at_start, x, &mut k, &mut scratch);
            rk_stage(x, &k, &mut acc, &mut y, h6, h2, true);
            apply_super(g, &at_mid, &y, &mut k, &mut scratch);
            rk_stage(x, &k, &mut acc, &mut y, h3, h2, false);
            apply_super(g, &at_mid, &y, &mut k, &mut scratch);
            rk_stage(x, &k, &mut acc, &mut y, h3, dt, false);
            apply_super(g, &at_end, &y, &mut k, &mut scratch);
            rk_finish(&acc, &k, x, h6);
            x.store(out);
        }
        std::mem::swap(&mut at_start, &mut at_end);
        observe(step + 1, states)?;
    }
    Ok(())
}

/// Generator for lane-parallel trajectories: `K(t) + z*_t J`.
pub(crate) struct LaneGenerator {
    k: OpCombo,
    jump: SparseOp,
}

impl LaneGenerator {
    pub fn new(k: OpCombo, jump: SparseOp) -> Self {
        Self { k, jump }
    }

    pub fn dim(&self) -> usize {
        self.jump.dim()
    }
}

/// Per-lane noise and the shared coefficients of `K`.
pub(crate) trait LaneSource {
    fn k_coeffs(&self, j: usize, out: &mut [C64]);
    /// `z*` for every lane at half-grid index `j`.
    fn noise(&self, j: usize, out: &mut [C64]);
}

/// RK4 stepper over a block of `lanes` state vectors stored row-major as
/// `n × lanes`.
pub(crate) struct LaneStepper<'g> {
    g: &'g LaneGenerator,
    lanes: usize,
    k_start: SparseOp,
    k_mid: SparseOp,
    k_end: SparseOp,
    coeffs: Vec<C64>,
    z_start: Vec<C64>,
    z_mid: Vec<C64>,
    z_end: Vec<C64>,
    z: Planes,
    x: Planes,
    y: Planes,
    k: Planes,
    acc: Planes,
}

impl<'g> LaneStepper<'g> {
    pub fn new(g: &'g LaneGenerator, lanes: usize) -> Self {
        let len = g.dim() * lanes;
        Self {
            g,
            lanes,
            k_start: g.k.blank(),
            k_mid: g.k.blank(),
            k_end: g.k.blank(),
            coeffs: vec![ZERO; g.k.n_terms()],
            z_start: vec![ZERO; lanes],
            z_mid: vec![ZERO; lanes],
            z_end: vec![ZERO; lanes],
            z: Planes::zeros(lanes),
            x: Planes::zeros(len),
            y: Planes::zeros(len),
            k: Planes::zeros(len),
            acc: Planes::zeros(len),
        }
    }

    /// Loads the generator at half-grid index 0; call once before stepping.
    pub fn start(&mut self, src: &impl LaneSource) {
        src.k_coeffs(0, &mut self.coeffs);
        self.g.k.assemble_into(&self.coeffs, &mut self.k_start);
        src.noise(0, &mut self.z_start);
    }

    /// `k = (K + z* J) y` at the given stage.
    fn derivative(&mut self, stage: Stage) {
        let (op, z) = match stage {
            Stage::Start => (&self.k_start, &self.z_start),
            Stage::Mid => (&self.k_mid, &self.z_mid),
            Stage::End => (&self.k_end, &self.z_end),
        };
        self.z.load(z);
        self.k.fill_zero();
        op.planes_mul_add(&self.y, &mut self.k, self.lanes);
        self.g.jump.planes_scaled_mul_add(&self.y, &self.z, &mut self.k, self.lanes);
    }

    /// Advances `x` from full-grid index `step` to `step + 1`.
    pub fn step(&mut self, src: &impl LaneSource, x: &mut [C64], step: usize, dt: f64) {
        src.k_coeffs(2 * step + 1, &mut self.coeffs);
        self.g.k.assemble_into(&self.coeffs, &mut self.k_mid);
        src.k_coeffs(2 * step + 2, &mut self.coeffs);
        self.g.k.assemble_into(&self.coeffs, &mut self.k_end);
        src.noise(2 * step + 1, &mut self.z_mid);
        src.noise(2 * step + 2, &mut self.z_end);
        let (h2, h3, h6) = (0.5 * dt, dt / 3.0, dt / 6.0);

        self.x.load(x);
        self.y.load(x);
        self.derivative(Stage::Start);
        rk_stage(&self.x, &self.k, &mut self.acc, &mut self.y, h6, h2, true);
        self.derivative(Stage::Mid);
        rk_stage(&self.x, &self.k, &mut self.acc, &mut self.y, h3, h2, false);
        self.derivative(Stage::Mid);
        rk_stage(&self.x, &self.k, &mut self.acc, &mut self.y, h3, dt, false);
        self.derivative(Stage::End);
        rk_finish(&self.acc, &self.k, &mut self.x, h6);
        self.x.store(x);
        std::mem::swap(&mut self.k_start, &mut self.k_end);
        std::mem::swap(&mut self.z_start, &mut self.z_end);
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Start,
    Mid,
    End,
}

/// Converts a dense matrix into row-major storage.
pub(crate) fn flatten(m: &Array2<C64>) -> Vec<C64> {
    m.iter().copied().collect()
}

pub(crate) fn unflatten(n: usize, v: &[C64]) -> Array2<C64> {
    Array2::from_shape_vec((n, n), v.to_vec()).expect("square storage")
}

/// `tr X` of row-major storage.
pub(crate) fn trace(n: usize, x: &[C64]) -> C64 {
    (0..n).map(|i| x[i * n + i]).sum()
}

/// `max |X − X†|` of row-major storage.
pub(crate) fn hermiticity_error(n: usize, x: &[C64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((x[i * n + j] - x[j * n + i].conj()).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Two-level decay `∂ρ = −i[H,ρ] + κ D[σ]ρ`: excited population
    /// `e^{−κt}`, coherence `e^{−(κ/2 + iω)t}`.
    #[test]
    fn two_level_lindblad_matches_closed_form() {
        let (w, kappa) = (1.3, 0.7);
        let sigma = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let h = array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(w, 0.0)]];
        let sd_s = sigma.t().mapv(|v: C64| v.conj()).dot(&sigma);
        let kmat = h.mapv(|v| v * c(0.0, -1.0)) - sd_s.mapv(|v| v * (0.5 * kappa));
        let g = OperatorGenerator::new(
            OpCombo::new(&kmat, &[]),
            OpCombo::new(&sigma.mapv(|v| v * (0.5 * kappa)), &[]),
            SparseOp::from_dense(&sigma),
        );
        let rho0 = array![[c(0.5, 0.0), c(0.5, 0.0)], [c(0.5, 0.0), c(0.5, 0.0)]];
        let mut states = vec![flatten(&rho0)];
        let dt = 1e-3;
        let n = 3000;
        let mut last = Vec::new();
        evolve_operators::<()>(&g, &Constant, &mut states, dt, n, |k, s| {
            if k == n {
                last = s[0].clone();
            }
            Ok(())
        })
        .unwrap();
        let t = dt * n as f64;
        assert!((last[3].re - 0.5 * (-kappa * t).exp()).abs() < 1e-12);
        let coh = c(0.5, 0.0) * (c(-0.5 * kappa, -w) * t).exp();
        // ρ_{10} = ⟨1|ρ|0⟩ rotates as e^{−iωt}
        assert!((last[2] - coh).norm() < 1e-12, "{:?} vs {coh:?}", last[2]);
        assert!((trace(2, &last) - 1.0).norm() < 1e-13);
    }
}
