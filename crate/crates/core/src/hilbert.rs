//! Truncated Fock-space representation of the cavity ⊗ mechanical system.
//!
//! Basis ordering is `|n_c⟩ ⊗ |n_m⟩` with the cavity as the slow (leftmost)
//! factor, so the flat index of `|n_c, n_m⟩` is `n_c * dim_m + n_m`. The same
//! convention extends to the three-mode pseudomode space used by the oracles.

use ndarray::linalg::kron;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseOp;

/// Truncation-leakage ceiling for prepared coherent and squeezed states.
pub const LEAKAGE_TOLERANCE: f64 = 1e-6;

/// Physical constants of the linearized optomechanical model (ħ = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity frequency ω₀.
    pub cavity_freq: f64,
    /// Mechanical frequency Ω.
    pub mech_freq: f64,
    /// Optomechanical coupling λ (used as G in the linearized form).
    pub coupling: f64,
    /// Bath coupling strength Γ.
    pub bath_strength: f64,
    /// Bath memory rate γ (inverse correlation time).
    pub memory_rate: f64,
    pub dim_c: usize,
    pub dim_m: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            cavity_freq: 5.0,
            mech_freq: 1.0,
            coupling: 1.0,
            bath_strength: 2.0,
            memory_rate: 0.2,
            dim_c: 10,
            dim_m: 8,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("omega0", self.cavity_freq),
            ("Omega", self.mech_freq),
            ("lambda", self.coupling),
            ("Gamma", self.bath_strength),
            ("gamma", self.memory_rate),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        if self.bath_strength < 0.0 {
            return Err(Error::InvalidParameter {
                name: "Gamma",
                reason: format!("must be >= 0, got {}", self.bath_strength),
            });
        }
        if self.memory_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be > 0, got {}", self.memory_rate),
            });
        }
        if self.dim_c < 2 {
            return Err(Error::InvalidParameter {
                name: "dim_c",
                reason: format!("must be >= 2, got {}", self.dim_c),
            });
        }
        if self.dim_m < 2 {
            return Err(Error::InvalidParameter {
                name: "dim_m",
                reason: format!("must be >= 2, got {}", self.dim_m),
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            cavity: self.dim_c,
            mech: self.dim_m,
        }
    }

    /// Kernel amplitude α(0) = Γγ/2.
    pub fn kernel_amplitude(&self) -> f64 {
        0.5 * self.bath_strength * self.memory_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub cavity: usize,
    pub mech: usize,
}

impl Dims {
    pub fn new(cavity: usize, mech: usize) -> Self {
        Self { cavity, mech }
    }

    pub fn total(&self) -> usize {
        self.cavity * self.mech
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.cavity, self.mech]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Cavity,
    Mechanical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HamiltonianForm {
    #[default]
    Linearized,
    Nonlinear,
}

/// Dense operator on a product of truncated bosonic modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    shape: Vec<usize>,
    mat: Array2<C64>,
}

impl Operator {
    pub fn new(shape: Vec<usize>, mat: Array2<C64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::InvalidDimension(format!(
                "matrix {:?} does not match mode shape {:?}",
                mat.dim(),
                shape
            )));
        }
        Ok(Self { shape, mat })
    }

    pub fn identity(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            mat: Array2::eye(n),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            mat: Array2::zeros((n, n)),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            mat: self.mat.t().mapv(|v| v.conj()),
        }
    }

    pub fn dot(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "operator shapes differ");
        Self {
            shape: self.shape.clone(),
            mat: self.mat.dot(&other.mat),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            shape: self.shape.clone(),
            mat: self.mat.mapv(|v| v * s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "operator shapes differ");
        Self {
            shape: self.shape.clone(),
            mat: &self.mat + &other.mat,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.dot(other).sub(&other.dot(self))
    }

    pub fn trace(&self) -> C64 {
        self.mat.diag().sum()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |X - X†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[[i, j]] - self.mat[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Spectral norm bound via the Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_sparse(&self) -> SparseOp {
        SparseOp::from_dense(&self.mat)
    }
}

/// Amplitudes on a product of truncated modes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVec {
    shape: Vec<usize>,
    amps: Array1<C64>,
}

impl StateVec {
    pub fn new(shape: Vec<usize>, amps: Array1<C64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if amps.len() != n {
            return Err(Error::InvalidDimension(format!(
                "state of length {} does not match mode shape {:?}",
                amps.len(),
                shape
            )));
        }
        Ok(Self { shape, amps })
    }

    /// `|first⟩ ⊗ |second⟩` with `first` the slow factor.
    pub fn product(first: &Self, second: &Self) -> Self {
        let mut shape = first.shape.clone();
        shape.extend_from_slice(&second.shape);
        let n2 = second.amps.len();
        let amps = Array1::from_shape_fn(first.amps.len() * n2, |k| first.amps[k / n2] * second.amps[k % n2]);
        Self { shape, amps }
    }

    pub fn basis(shape: &[usize], index: usize) -> Self {
        let n: usize = shape.iter().product();
        let mut amps = Array1::zeros(n);
        amps[index] = C64::new(1.0, 0.0);
        Self {
            shape: shape.to_vec(),
            amps,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amps
    }

    pub fn as_slice(&self) -> &[C64] {
        self.amps.as_slice().expect("state vectors are contiguous")
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amps.iter().zip(other.amps.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|self⟩⟨other|`.
    pub fn outer(&self, other: &Self) -> Operator {
        let n = self.amps.len();
        let mat = Array2::from_shape_fn((n, n), |(i, j)| self.amps[i] * other.amps[j].conj());
        Operator {
            shape: self.shape.clone(),
            mat,
        }
    }

    pub fn expect(&self, op: &Operator) -> C64 {
        self.inner(&apply_operator(op, self).expect("shape checked by caller"))
    }
}

/// Single-mode annihilation operator with `⟨n-1|a|n⟩ = √n`.
pub fn make_mode_op(dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!("mode dimension must be >= 2, got {dim}")));
    }
    let mut mat = Array2::zeros((dim, dim));
    for n in 1..dim {
        mat[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator {
        shape: vec![dim],
        mat,
    })
}

/// Places a single-mode operator at position `slot` of a multi-mode product.
pub fn embed_at(op: &Operator, slot: usize, shape: &[usize]) -> Result<Operator> {
    if op.shape.len() != 1 {
        return Err(Error::InvalidDimension("only single-mode operators can be embedded".into()));
    }
    if slot >= shape.len() || shape[slot] != op.dim() {
        return Err(Error::InvalidDimension(format!(
            "operator of dimension {} cannot occupy slot {slot} of {:?}",
            op.dim(),
            shape
        )));
    }
    let left: usize = shape[..slot].iter().product();
    let right: usize = shape[slot + 1..].iter().product();
    let eye_l = Array2::<C64>::eye(left);
    let eye_r = Array2::<C64>::eye(right);
    let mat = kron(&kron(&eye_l, &op.mat), &eye_r);
    Ok(Operator {
        shape: shape.to_vec(),
        mat,
    })
}

/// `op ⊗ I` (cavity) or `I ⊗ op` (mechanical).
pub fn tensor_embed(op: &Operator, slot: Slot, dims: Dims) -> Result<Operator> {
    let index = match slot {
        Slot::Cavity => 0,
        Slot::Mechanical => 1,
    };
    embed_at(op, index, &dims.shape())
}

/// Ladder operators of both modes on the product space.
#[derive(Clone, Debug)]
pub struct ModeOps {
    pub dims: Dims,
    pub a: Operator,
    pub ad: Operator,
    pub b: Operator,
    pub bd: Operator,
}

impl ModeOps {
    pub fn new(dims: Dims) -> Result<Self> {
        let a = tensor_embed(&make_mode_op(dims.cavity)?, Slot::Cavity, dims)?;
        let b = tensor_embed(&make_mode_op(dims.mech)?, Slot::Mechanical, dims)?;
        Ok(Self {
            dims,
            ad: a.adjoint(),
            bd: b.adjoint(),
            a,
            b,
        })
    }

    /// `a† + a`.
    pub fn cavity_quadrature(&self) -> Operator {
        self.a.add(&self.ad)
    }

    /// `a† a`.
    pub fn cavity_number(&self) -> Operator {
        self.ad.dot(&self.a)
    }

    /// `b† + b`.
    pub fn mech_quadrature(&self) -> Operator {
        self.b.add(&self.bd)
    }

    pub fn mech_number(&self) -> Operator {
        self.bd.dot(&self.b)
    }

    pub fn identity(&self) -> Operator {
        Operator::identity(&self.dims.shape())
    }
}

/// Linearized: `ω₀a†a + Ωb†b − λ(a†+a)(b†+b)`.
/// Nonlinear: `ω₀a†a + Ωb†b − λa†a(b†+b)`.
pub fn build_hamiltonian(p: &SystemParams, form: HamiltonianForm) -> Result<Operator> {
    p.validate()?;
    let ops = ModeOps::new(p.dims())?;
    Ok(hamiltonian_from_ops(p, form, &ops))
}

pub(crate) fn hamiltonian_from_ops(p: &SystemParams, form: HamiltonianForm, ops: &ModeOps) -> Operator {
    let free = ops
        .cavity_number()
        .scale(C64::new(p.cavity_freq, 0.0))
        .add(&ops.mech_number().scale(C64::new(p.mech_freq, 0.0)));
    let cavity_factor = match form {
        HamiltonianForm::Linearized => ops.cavity_quadrature(),
        HamiltonianForm::Nonlinear => ops.cavity_number(),
    };
    let coupling = cavity_factor.dot(&ops.mech_quadrature());
    free.sub(&coupling.scale(C64::new(p.coupling, 0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StateKind {
    Fock { n: usize },
    Coherent { re: f64, im: f64 },
    /// Squeezed vacuum `S(r e^{iθ})|0⟩`.
    Squeezed { r: f64, theta: f64 },
}

/// Normalized single-mode state in a Fock basis of size `dim`.
pub fn prep_state(kind: StateKind, dim: usize) -> Result<StateVec> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!("mode dimension must be >= 2, got {dim}")));
    }
    let mut amps = Array1::<C64>::zeros(dim);
    match kind {
        StateKind::Fock { n } => {
            if n >= dim {
                return Err(Error::InvalidParameter {
                    name: "fock_n",
                    reason: format!("n = {n} does not fit in dimension {dim}"),
                });
            }
            amps[n] = C64::new(1.0, 0.0);
            return Ok(StateVec {
                shape: vec![dim],
                amps,
            });
        }
        StateKind::Coherent { re, im } => {
            let beta = C64::new(re, im);
            amps[0] = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
            for n in 1..dim {
                amps[n] = amps[n - 1] * beta / (n as f64).sqrt();
            }
        }
        StateKind::Squeezed { r, theta } => {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "squeeze_r",
                    reason: format!("must be finite and >= 0, got {r}"),
                });
            }
            let ratio = -C64::from_polar(r.tanh(), theta);
            amps[0] = C64::new(1.0 / r.cosh().sqrt(), 0.0);
            let mut m = 0usize;
            while 2 * m + 2 < dim {
                let k = (2 * m) as f64;
                amps[2 * m + 2] = amps[2 * m] * ratio * ((k + 1.0) * (k + 2.0)).sqrt() / (2.0 * (m as f64 + 1.0));
                m += 1;
            }
        }
    }
    let kept: f64 = amps.iter().map(|v| v.norm_sqr()).sum();
    let leakage = 1.0 - kept;
    if leakage > LEAKAGE_TOLERANCE {
        return Err(Error::TruncationTooSmall {
            leakage,
            tolerance: LEAKAGE_TOLERANCE,
            dim,
        });
    }
    let scale = 1.0 / kept.sqrt();
    amps.mapv_inplace(|v| v * scale);
    Ok(StateVec {
        shape: vec![dim],
        amps,
    })
}

/// Plain matrix-vector product; the result is not renormalized.
pub fn apply_operator(op: &Operator, s: &StateVec) -> Result<StateVec> {
    if op.shape != s.shape {
        return Err(Error::InvalidDimension(format!(
            "operator shape {:?} does not match state shape {:?}",
            op.shape, s.shape
        )));
    }
    Ok(StateVec {
        shape: s.shape.clone(),
        amps: op.mat.dot(&s.amps),
    })
}
