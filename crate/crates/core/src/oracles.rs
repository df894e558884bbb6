//! Reference TTCFs from Markovian generators: the exact pseudomode
//! enlargement of the exponential kernel, the Markov-limit Lindblad equation
//! and the analytic decoupled limit.
//!
//! Both Lindblad routes propagate the pair `(ρ, Bρ)` and read
//! `TTCF(t) = tr(A 𝒫(t))`, which is the quantum-regression construction and
//! is exact for a Markovian generator.

use ndarray::linalg::kron;
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{embed_at, make_mode_op, HamiltonianForm, ModeOps, Operator, StateVec, SystemParams};
use crate::propagate::{evolve_operators, flatten, hermiticity_error, trace, Constant, OperatorGenerator};
use crate::sparse::{OpCombo, SparseOp};
use crate::spectra::CorrelationTrace;

/// Inputs shared by the oracle routes. `psi0`, `a` and `b` live on the
/// two-mode system space.
#[derive(Clone, Copy, Debug)]
pub struct CorrelatorSetup<'a> {
    pub psi0: &'a StateVec,
    pub a: &'a Operator,
    pub b: &'a Operator,
    pub dt: f64,
    pub n_steps: usize,
    pub form: HamiltonianForm,
}

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub trace: CorrelationTrace,
    /// `max_t |tr ρ − 1|`.
    pub max_trace_error: f64,
    /// `max_t max|ρ − ρ†|`.
    pub max_hermiticity_error: f64,
    /// `max_t ⟨c†c⟩`, pseudomode route only.
    pub max_aux_population: Option<f64>,
}

/// System plus one damped auxiliary mode `c` that reproduces the kernel
/// `(Γγ/2) e^{−γ|τ|}` exactly: `H′ = H + g(b c† + b† c)`, `g = √(Γγ/2)`,
/// decay rate `κ = 2γ` on `c`.
#[derive(Clone, Debug)]
pub struct PseudomodeModel {
    params: SystemParams,
    dim_p: usize,
}

impl PseudomodeModel {
    pub fn new(p: &SystemParams, dim_p: usize) -> Result<Self> {
        p.validate()?;
        if dim_p < 2 {
            return Err(Error::InvalidDimension(format!("dim_p must be >= 2, got {dim_p}")));
        }
        Ok(Self {
            params: p.clone(),
            dim_p,
        })
    }

    pub fn coupling(&self) -> f64 {
        self.params.kernel_amplitude().sqrt()
    }

    pub fn kappa(&self) -> f64 {
        2.0 * self.params.memory_rate
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.params.dim_c, self.params.dim_m, self.dim_p]
    }

    /// Free correlation of the bath as seen through the auxiliary mode,
    /// `g² e^{−κ|τ|/2}`.
    pub fn bath_correlation(&self, tau: f64) -> C64 {
        C64::new(self.coupling().powi(2) * (-0.5 * self.kappa() * tau.abs()).exp(), 0.0)
    }

    /// Largest `⟨c†c⟩` tolerated before the auxiliary truncation is deemed
    /// too small.
    pub fn population_limit(&self) -> f64 {
        0.1 * (self.dim_p - 1) as f64
    }

    fn lift(&self, op: &Operator) -> Result<Operator> {
        let sys = [self.params.dim_c, self.params.dim_m];
        if op.shape() != sys {
            return Err(Error::InvalidDimension(format!(
                "operator shape {:?} does not match system {:?}",
                op.shape(),
                sys
            )));
        }
        Operator::new(self.shape(), kron(op.matrix(), &Array2::<C64>::eye(self.dim_p)))
    }

    /// `H′` on the three-mode space.
    pub fn hamiltonian(&self, form: HamiltonianForm) -> Result<Operator> {
        let ops = ModeOps::new(self.params.dims())?;
        let h = self.lift(&crate::hilbert::hamiltonian_from_ops(&self.params, form, &ops))?;
        let shape = self.shape();
        let b = embed_at(&make_mode_op(self.params.dim_m)?, 1, &shape)?;
        let c = embed_at(&make_mode_op(self.dim_p)?, 2, &shape)?;
        let exchange = b.dot(&c.adjoint()).add(&b.adjoint().dot(&c));
        Ok(h.add(&exchange.scale(C64::new(self.coupling(), 0.0))))
    }

    fn aux_lowering(&self) -> Result<Operator> {
        embed_at(&make_mode_op(self.dim_p)?, 2, &self.shape())
    }
}

/// `−i[H,X] + r (J X J† − {J†J, X}/2)` as `K = −iH − (r/2) J†J`,
/// `M = (r/2) J`.
fn lindblad_generator(h: &Operator, jump: &Operator, rate: f64) -> OperatorGenerator {
    let ld_l = jump.adjoint().dot(jump);
    let k = h.scale(C64::new(0.0, -1.0)).sub(&ld_l.scale(C64::new(0.5 * rate, 0.0)));
    let m = jump.scale(C64::new(0.5 * rate, 0.0));
    OperatorGenerator::new(
        OpCombo::new(k.matrix(), &[]),
        OpCombo::new(m.matrix(), &[]),
        jump.to_sparse(),
    )
}

struct PairRun<'a> {
    generator: &'a OperatorGenerator,
    rho0: Operator,
    p0: Operator,
    a: SparseOp,
    aux: Option<(SparseOp, f64)>,
}

fn run_pair(run: PairRun<'_>, dt: f64, n_steps: usize) -> Result<OracleRun> {
    let n = run.rho0.dim();
    let mut states = vec![flatten(run.rho0.matrix()), flatten(run.p0.matrix())];
    let mut values = Vec::with_capacity(n_steps + 1);
    let (mut max_trace_error, mut max_hermiticity_error) = (0.0f64, 0.0f64);
    let mut max_aux: Option<f64> = run.aux.as_ref().map(|_| 0.0);
    evolve_operators::<Error>(run.generator, &Constant, &mut states, dt, n_steps, |k, s| {
        max_trace_error = max_trace_error.max((trace(n, &s[0]) - 1.0).norm());
        max_hermiticity_error = max_hermiticity_error.max(hermiticity_error(n, &s[0]));
        values.push(run.a.trace_product(&s[1]));
        if let Some((number, limit)) = &run.aux {
            let population = number.trace_product(&s[0]).re;
            if !(population <= *limit) {
                return Err(Error::AuxiliaryOverflow {
                    population,
                    limit: *limit,
                    time: k as f64 * dt,
                });
            }
            max_aux = max_aux.map(|m| m.max(population));
        }
        Ok(())
    })?;
    Ok(OracleRun {
        trace: CorrelationTrace::new(dt, values, "A", "B")?,
        max_trace_error,
        max_hermiticity_error,
        max_aux_population: max_aux,
    })
}

fn check_setup(p: &SystemParams, setup: &CorrelatorSetup<'_>) -> Result<()> {
    p.validate()?;
    let sys = p.dims().shape();
    for (what, shape) in [("psi0", setup.psi0.shape()), ("A", setup.a.shape()), ("B", setup.b.shape())] {
        if shape != sys {
            return Err(Error::InvalidDimension(format!("{what} has shape {shape:?}, system is {sys:?}")));
        }
    }
    if !(setup.dt > 0.0 && setup.dt.is_finite()) || setup.n_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("need dt > 0 and at least one step, got dt {} with {} steps", setup.dt, setup.n_steps),
        });
    }
    Ok(())
}

/// TTCF of the enlarged Markovian model with the auxiliary mode in vacuum.
pub fn pseudomode_ttcf(p: &SystemParams, dim_p: usize, setup: &CorrelatorSetup<'_>) -> Result<OracleRun> {
    check_setup(p, setup)?;
    let model = PseudomodeModel::new(p, dim_p)?;
    let shape = model.shape();
    let c = model.aux_lowering()?;
    let generator = lindblad_generator(&model.hamiltonian(setup.form)?, &c, model.kappa());
    let vacuum = StateVec::basis(&[dim_p], 0);
    let psi = StateVec::product(setup.psi0, &vacuum);
    let rho0 = psi.outer(&psi);
    let b = model.lift(setup.b)?;
    let p0 = b.dot(&rho0);
    let number = c.adjoint().dot(&c).to_sparse();
    debug_assert_eq!(rho0.shape(), shape.as_slice());
    run_pair(
        PairRun {
            generator: &generator,
            rho0,
            p0,
            a: model.lift(setup.a)?.to_sparse(),
            aux: Some((number, model.population_limit())),
        },
        setup.dt,
        setup.n_steps,
    )
}

/// TTCF under the Markov-limit master equation with dissipator `Γ D[b]`.
pub fn markov_lindblad_ttcf(p: &SystemParams, setup: &CorrelatorSetup<'_>) -> Result<OracleRun> {
    check_setup(p, setup)?;
    let ops = ModeOps::new(p.dims())?;
    let h = crate::hilbert::hamiltonian_from_ops(p, setup.form, &ops);
    let generator = lindblad_generator(&h, &ops.b, p.bath_strength);
    let rho0 = setup.psi0.outer(setup.psi0);
    let p0 = setup.b.dot(&rho0);
    run_pair(
        PairRun {
            generator: &generator,
            rho0,
            p0,
            a: setup.a.to_sparse(),
            aux: None,
        },
        setup.dt,
        setup.n_steps,
    )
}

/// Decoupled limit (`λ = 0`) with `A = a† + a` and a cavity coherent state:
/// `TTCF(t) = 2 Re(α₀ e^{−iω₀t}) · ⟨B⟩₀`. `mech_expectation` is `⟨B⟩₀` in the
/// initial mechanical state; it stays constant because `B` acts only on the
/// mechanics and the generator is trace preserving.
pub fn decoupled_quadrature_ttcf(alpha0: C64, omega0: f64, mech_expectation: C64, dt: f64, n_steps: usize) -> Result<CorrelationTrace> {
    let values = (0..=n_steps)
        .map(|k| {
            let t = k as f64 * dt;
            mech_expectation * (2.0 * (alpha0 * C64::from_polar(1.0, -omega0 * t)).re)
        })
        .collect();
    CorrelationTrace::new(dt, values, "Xc", "B")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceComparison {
    /// `‖x − y‖₂ / max(‖x‖₂, ε)`, `x` being the reference.
    pub rel_l2: f64,
    /// `max_t |x − y|`.
    pub sup_abs: f64,
    /// `(t, |x − y|)` at every grid point.
    pub per_time: Vec<(f64, f64)>,
}

const REL_FLOOR: f64 = 1e-300;

/// Distances between two traces on the same grid; `x` is the reference.
pub fn compare_traces(x: &CorrelationTrace, y: &CorrelationTrace) -> Result<TraceComparison> {
    if x.len() != y.len() || (x.dt - y.dt).abs() > 1e-12 * x.dt {
        return Err(Error::GridMismatch(format!(
            "traces differ in grid: {} points at dt {} vs {} points at dt {}",
            x.len(),
            x.dt,
            y.len(),
            y.dt
        )));
    }
    let mut diff_sq = 0.0;
    let mut norm_sq = 0.0;
    let mut sup_abs = 0.0f64;
    let mut per_time = Vec::with_capacity(x.len());
    for (k, (a, b)) in x.values.iter().zip(&y.values).enumerate() {
        let d = (a - b).norm();
        diff_sq += d * d;
        norm_sq += a.norm_sqr();
        sup_abs = sup_abs.max(d);
        per_time.push((k as f64 * x.dt, d));
    }
    Ok(TraceComparison {
        rel_l2: diff_sq.sqrt() / norm_sq.sqrt().max(REL_FLOOR),
        sup_abs,
        per_time,
    })
}

/// Absolute slack added to every band so that points with zero spread
/// (such as `t = 0`, where all trajectories coincide) tolerate roundoff.
pub const BAND_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BandReport {
    /// `max_t |x − y| / (k σ(t) + floor)`; at most 1 when every point passes.
    pub worst_ratio: f64,
    /// Time of the worst point.
    pub worst_time: f64,
    /// `max_t |x − y|`.
    pub sup_abs: f64,
    pub pass: bool,
}

/// Checks `|x(t) − y(t)| ≤ k σ(t)` pointwise, with a roundoff floor of
/// `BAND_FLOOR · (1 + |x(t)|)`.
pub fn band_check(x: &CorrelationTrace, y: &CorrelationTrace, sigma: &[f64], k: f64) -> Result<BandReport> {
    let cmp = compare_traces(x, y)?;
    if sigma.len() != x.len() {
        return Err(Error::GridMismatch(format!("{} sigma values for {} trace points", sigma.len(), x.len())));
    }
    let mut worst_ratio = 0.0f64;
    let mut worst_time = 0.0;
    for (((t, d), s), v) in cmp.per_time.iter().zip(sigma).zip(&x.values) {
        let band = k * s + BAND_FLOOR * (1.0 + v.norm());
        let ratio = d / band;
        if !(ratio <= worst_ratio) {
            worst_ratio = ratio;
            worst_time = *t;
        }
    }
    Ok(BandReport {
        worst_ratio,
        worst_time,
        sup_abs: cmp.sup_abs,
        pass: worst_ratio <= 1.0,
    })
}
