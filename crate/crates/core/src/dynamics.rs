//! Paired QSD trajectories and the deterministic `ρ`/`𝒫` propagation.
//!
//! Both `|ψ_z⟩` (initial value `ψ₀`) and `|φ_z⟩` (initial value `B ψ₀`) obey
//! `∂ψ = (−iH + z*_t L − L†Ō(t)) ψ` with the same noise realization, so
//! `⟨A(t)B⟩ = M⟨ψ_z|A|φ_z⟩`. Because `Ō` carries no noise here, the ensemble
//! averages also obey the closed equation
//! `∂X = −i[H,X] + [L, XŌ†] + [ŌX, L†]` for `X ∈ {ρ, 𝒫}`.

use std::collections::BTreeMap;

use log::{debug, warn};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::coeffs::CoeffSet;
use crate::error::{Error, Result};
use crate::hilbert::{Dims, ModeOps, Operator, StateVec, SystemParams};
use crate::noise::{sample_noise_path, NoisePath, NoiseSeed};
use crate::propagate::{
    evolve_operators, flatten, hermiticity_error, trace, unflatten, CoeffSource, LaneGenerator, LaneSource,
    LaneStepper, OperatorGenerator,
};
use crate::sparse::{OpCombo, SparseOp};

/// Squared-norm ceiling for a trajectory (`|ψ| > 1e8` aborts it).
const DIVERGENCE_NORM_SQ: f64 = 1e16;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Generator data for one `(H, L)` pair on the two-mode space.
pub struct QsdSystem {
    dims: Dims,
    lane: LaneGenerator,
    operator: OperatorGenerator,
}

impl QsdSystem {
    /// `H` is the system Hamiltonian, `L` the bath coupling operator; `Ō` is
    /// expanded on `a, a†, b, b†` of the same product space.
    pub fn new(h: &Operator, l: &Operator) -> Result<Self> {
        let shape = h.shape();
        if shape.len() != 2 || l.shape() != shape {
            return Err(Error::InvalidDimension(format!(
                "expected two-mode H and L with equal shapes, got {:?} and {:?}",
                shape,
                l.shape()
            )));
        }
        let dims = Dims::new(shape[0], shape[1]);
        let ops = ModeOps::new(dims)?;
        let ld = l.adjoint();
        let basis = [&ops.a, &ops.ad, &ops.b, &ops.bd];
        let neg_i = C64::new(0.0, -1.0);
        let k_base = h.scale(neg_i).into_matrix();
        let k_terms: Vec<_> = basis
            .iter()
            .map(|m| ld.dot(m).scale(C64::new(-1.0, 0.0)).into_matrix())
            .collect();
        let m_terms: Vec<_> = basis.iter().map(|m| m.matrix().clone()).collect();
        let zero = Operator::zeros(shape).into_matrix();
        let jump = l.to_sparse();
        Ok(Self {
            dims,
            lane: LaneGenerator::new(OpCombo::new(&k_base, &k_terms), jump.clone()),
            operator: OperatorGenerator::new(OpCombo::new(&k_base, &k_terms), OpCombo::new(&zero, &m_terms), jump),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn dim(&self) -> usize {
        self.dims.total()
    }
}

struct CoeffFeed<'a>(&'a CoeffSet);

impl CoeffSource for CoeffFeed<'_> {
    fn k_coeffs(&self, j: usize, out: &mut [C64]) {
        out.copy_from_slice(&self.0.at_half(j));
    }
    fn m_coeffs(&self, j: usize, out: &mut [C64]) {
        out.copy_from_slice(&self.0.at_half(j));
    }
}

struct PairFeed<'a> {
    coeffs: &'a CoeffSet,
    noises: &'a [&'a NoisePath],
}

impl LaneSource for PairFeed<'_> {
    fn k_coeffs(&self, j: usize, out: &mut [C64]) {
        out.copy_from_slice(&self.coeffs.at_half(j));
    }
    fn noise(&self, j: usize, out: &mut [C64]) {
        for (p, path) in self.noises.iter().enumerate() {
            let z = path.at_half(j);
            out[2 * p] = z;
            out[2 * p + 1] = z;
        }
    }
}

fn check_grids(c: &CoeffSet, dt: f64, n_steps: usize, what: &str) -> Result<()> {
    if c.n_steps() != n_steps || (c.dt() - dt).abs() > 1e-15 * dt.abs().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "{what}: dt {dt}, {n_steps} steps vs coefficients dt {}, {} steps",
            c.dt(),
            c.n_steps()
        )));
    }
    Ok(())
}

/// Full-grid indices at which snapshots are kept.
pub fn recorded_steps(n_steps: usize, stride: Option<usize>) -> Vec<usize> {
    match stride {
        None => vec![n_steps],
        Some(s) => {
            let s = s.max(1);
            let mut v: Vec<usize> = (0..=n_steps).step_by(s).collect();
            if *v.last().unwrap() != n_steps {
                v.push(n_steps);
            }
            v
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PairOptions {
    /// Keep `ψ`, `φ` every `stride` steps (plus the final step); `None` keeps
    /// only the final state.
    pub record_stride: Option<usize>,
    /// Evaluate `⟨ψ|A|φ⟩` at every step.
    pub observable: Option<Operator>,
}

/// One noise realization propagated from `ψ₀` and `Bψ₀`.
#[derive(Clone, Debug)]
pub struct TrajectoryPair {
    pub seed: NoiseSeed,
    pub steps: Vec<usize>,
    pub psi: Vec<StateVec>,
    pub phi: Vec<StateVec>,
    /// `⟨ψ|A|φ⟩` per full-grid step, empty without an observable.
    pub ttcf: Vec<C64>,
    /// `⟨ψ|ψ⟩` per full-grid step.
    pub norm_sq: Vec<f64>,
}

struct PairTracker {
    pair: TrajectoryPair,
    diverged_at: Option<f64>,
}

/// Propagates several pairs in lockstep; lane arithmetic is independent of
/// how pairs are grouped.
fn evolve_group(
    sys: &QsdSystem,
    c: &CoeffSet,
    noises: &[(NoiseSeed, &NoisePath)],
    psi0: &StateVec,
    phi0: &StateVec,
    opts: &PairOptions,
    observable: Option<&SparseOp>,
) -> Vec<Result<TrajectoryPair>> {
    let n = sys.dim();
    let n_pairs = noises.len();
    let lanes = 2 * n_pairs;
    let dt = c.dt();
    let n_steps = c.n_steps();
    let shape = psi0.shape().to_vec();
    let steps = recorded_steps(n_steps, opts.record_stride);

    let mut x = vec![ZERO; n * lanes];
    for r in 0..n {
        for p in 0..n_pairs {
            x[r * lanes + 2 * p] = psi0.as_slice()[r];
            x[r * lanes + 2 * p + 1] = phi0.as_slice()[r];
        }
    }
    let mut trackers: Vec<PairTracker> = noises
        .iter()
        .map(|(seed, _)| PairTracker {
            pair: TrajectoryPair {
                seed: *seed,
                steps: steps.clone(),
                psi: Vec::with_capacity(steps.len()),
                phi: Vec::with_capacity(steps.len()),
                ttcf: Vec::with_capacity(if observable.is_some() { n_steps + 1 } else { 0 }),
                norm_sq: Vec::with_capacity(n_steps + 1),
            },
            diverged_at: None,
        })
        .collect();

    let paths: Vec<&NoisePath> = noises.iter().map(|(_, p)| *p).collect();
    let feed = PairFeed {
        coeffs: c,
        noises: &paths,
    };
    let mut stepper = LaneStepper::new(&sys.lane, lanes);
    stepper.start(&feed);

    let mut psi = vec![ZERO; n];
    let mut phi = vec![ZERO; n];
    let mut next_record = 0usize;
    for k in 0..=n_steps {
        if k > 0 {
            stepper.step(&feed, &mut x, k - 1, dt);
        }
        let record = next_record < steps.len() && steps[next_record] == k;
        for (p, tr) in trackers.iter_mut().enumerate() {
            if tr.diverged_at.is_some() {
                continue;
            }
            for r in 0..n {
                psi[r] = x[r * lanes + 2 * p];
                phi[r] = x[r * lanes + 2 * p + 1];
            }
            let nsq: f64 = psi.iter().map(|v| v.norm_sqr()).sum();
            if !(nsq <= DIVERGENCE_NORM_SQ) {
                tr.diverged_at = Some(k as f64 * dt);
                for r in 0..n {
                    x[r * lanes + 2 * p] = ZERO;
                    x[r * lanes + 2 * p + 1] = ZERO;
                }
                continue;
            }
            tr.pair.norm_sq.push(nsq);
            if let Some(a) = observable {
                tr.pair.ttcf.push(a.sandwich(&psi, &phi));
            }
            if record {
                tr.pair.psi.push(StateVec::new(shape.clone(), psi.clone().into()).expect("shape fixed"));
                tr.pair.phi.push(StateVec::new(shape.clone(), phi.clone().into()).expect("shape fixed"));
            }
        }
        if record {
            next_record += 1;
        }
    }
    trackers
        .into_iter()
        .map(|tr| match tr.diverged_at {
            Some(time) => Err(Error::TrajectoryDivergence {
                seed: tr.pair.seed,
                time,
            }),
            None => Ok(tr.pair),
        })
        .collect()
}

fn check_pair_inputs(sys: &QsdSystem, psi0: &StateVec, phi0: &StateVec) -> Result<()> {
    let shape = sys.dims.shape();
    if psi0.shape() != shape || phi0.shape() != shape {
        return Err(Error::InvalidDimension(format!(
            "initial states {:?}/{:?} do not match system shape {:?}",
            psi0.shape(),
            phi0.shape(),
            shape
        )));
    }
    Ok(())
}

/// RK4 propagation of `|ψ_z⟩` and `|φ_z⟩` under one noise realization.
pub fn evolve_pair(
    sys: &QsdSystem,
    c: &CoeffSet,
    noise: &NoisePath,
    seed: NoiseSeed,
    psi0: &StateVec,
    phi0: &StateVec,
    opts: &PairOptions,
) -> Result<TrajectoryPair> {
    check_pair_inputs(sys, psi0, phi0)?;
    check_grids(c, noise.dt(), noise.n_steps(), "noise path")?;
    let observable = opts.observable.as_ref().map(Operator::to_sparse);
    evolve_group(sys, c, &[(seed, noise)], psi0, phi0, opts, observable.as_ref())
        .pop()
        .expect("one pair in, one pair out")
}

/// Running means of `|ψ⟩⟨ψ|` and `|φ⟩⟨ψ|` (at snapshot steps) and of the
/// per-step scalars `⟨ψ|A|φ⟩`, `⟨ψ|ψ⟩`, with per-batch sums for error bars.
///
/// Pairs are absorbed strictly in `traj_index` order; early arrivals wait in
/// a buffer, so the result is independent of arrival order.
#[derive(Clone, Debug)]
pub struct EnsembleAccumulator {
    n_steps: usize,
    steps: Vec<usize>,
    batch_size: usize,
    count: usize,
    next_index: u64,
    excluded: Vec<(NoiseSeed, f64)>,
    pending: BTreeMap<u64, Option<TrajectoryPair>>,
    ttcf_sum: Vec<C64>,
    norm_sum: Vec<f64>,
    batch_ttcf: Vec<Vec<C64>>,
    batch_norm: Vec<Vec<f64>>,
    batch_count: Vec<usize>,
    rho_sum: Vec<Operator>,
    p_sum: Vec<Operator>,
    has_ttcf: Option<bool>,
}

impl EnsembleAccumulator {
    pub fn new(dims: Dims, n_steps: usize, record_stride: Option<usize>, batch_size: usize) -> Self {
        let steps = recorded_steps(n_steps, record_stride);
        let shape = dims.shape();
        Self {
            n_steps,
            batch_size: batch_size.max(1),
            count: 0,
            next_index: 0,
            excluded: Vec::new(),
            pending: BTreeMap::new(),
            ttcf_sum: vec![ZERO; n_steps + 1],
            norm_sum: vec![0.0; n_steps + 1],
            batch_ttcf: Vec::new(),
            batch_norm: Vec::new(),
            batch_count: Vec::new(),
            rho_sum: steps.iter().map(|_| Operator::zeros(&shape)).collect(),
            p_sum: steps.iter().map(|_| Operator::zeros(&shape)).collect(),
            steps,
            has_ttcf: None,
        }
    }

    /// Adds a finished pair.
    pub fn accumulate(&mut self, pair: TrajectoryPair) -> Result<()> {
        if pair.steps != self.steps || pair.norm_sq.len() != self.n_steps + 1 {
            return Err(Error::GridMismatch(format!(
                "pair with {} steps / {} snapshots does not fit accumulator ({} steps / {} snapshots)",
                pair.norm_sq.len().saturating_sub(1),
                pair.steps.len(),
                self.n_steps,
                self.steps.len()
            )));
        }
        let with_ttcf = !pair.ttcf.is_empty();
        if with_ttcf && pair.ttcf.len() != self.n_steps + 1 {
            return Err(Error::GridMismatch("ttcf series length".into()));
        }
        match self.has_ttcf {
            Some(h) if h != with_ttcf => {
                return Err(Error::GridMismatch("pairs disagree on observable recording".into()));
            }
            _ => self.has_ttcf = Some(with_ttcf),
        }
        self.queue(pair.seed.traj_index, Some(pair))
    }

    /// Records a trajectory that was dropped, keeping the ordering intact.
    pub fn exclude(&mut self, seed: NoiseSeed, time: f64) -> Result<()> {
        self.excluded.push((seed, time));
        self.queue(seed.traj_index, None)
    }

    fn queue(&mut self, index: u64, item: Option<TrajectoryPair>) -> Result<()> {
        if index < self.next_index || self.pending.contains_key(&index) {
            return Err(Error::GridMismatch(format!("trajectory {index} absorbed twice")));
        }
        self.pending.insert(index, item);
        while let Some(item) = self.pending.remove(&self.next_index) {
            if let Some(pair) = item {
                self.absorb(pair);
            }
            self.next_index += 1;
        }
        Ok(())
    }

    fn absorb(&mut self, pair: TrajectoryPair) {
        let batch = (pair.seed.traj_index as usize) / self.batch_size;
        while self.batch_count.len() <= batch {
            self.batch_ttcf.push(vec![ZERO; if self.has_ttcf == Some(true) { self.n_steps + 1 } else { 0 }]);
            self.batch_norm.push(vec![0.0; self.n_steps + 1]);
            self.batch_count.push(0);
        }
        for (k, v) in pair.ttcf.iter().enumerate() {
            self.ttcf_sum[k] += v;
            self.batch_ttcf[batch][k] += v;
        }
        for (k, v) in pair.norm_sq.iter().enumerate() {
            self.norm_sum[k] += v;
            self.batch_norm[batch][k] += v;
        }
        self.batch_count[batch] += 1;
        for (r, (psi, phi)) in pair.psi.iter().zip(&pair.phi).enumerate() {
            self.rho_sum[r] = self.rho_sum[r].add(&psi.outer(psi));
            self.p_sum[r] = self.p_sum[r].add(&phi.outer(psi));
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn excluded(&self) -> &[(NoiseSeed, f64)] {
        &self.excluded
    }

    pub fn n_pending(&self) -> usize {
        self.pending.len()
    }

    pub fn recorded_steps(&self) -> &[usize] {
        &self.steps
    }

    fn require_data(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::InvalidParameter {
                name: "count",
                reason: "accumulator is empty".into(),
            });
        }
        Ok(self.count as f64)
    }

    /// `M⟨ψ|A|φ⟩` per step.
    pub fn mean_ttcf(&self) -> Result<Vec<C64>> {
        let n = self.require_data()?;
        Ok(self.ttcf_sum.iter().map(|v| v / n).collect())
    }

    /// `M⟨ψ|ψ⟩ = tr ρ` per step.
    pub fn mean_norm(&self) -> Result<Vec<f64>> {
        let n = self.require_data()?;
        Ok(self.norm_sum.iter().map(|v| v / n).collect())
    }

    /// `ρ` at snapshot `r`.
    pub fn rho(&self, r: usize) -> Result<Operator> {
        let n = self.require_data()?;
        Ok(self.rho_sum[r].scale(C64::new(1.0 / n, 0.0)))
    }

    /// `𝒫` at snapshot `r`.
    pub fn p(&self, r: usize) -> Result<Operator> {
        let n = self.require_data()?;
        Ok(self.p_sum[r].scale(C64::new(1.0 / n, 0.0)))
    }

    fn sigma<T: Copy>(&self, sums: &[Vec<T>], len: usize, to_c: impl Fn(T) -> C64) -> Vec<f64> {
        let used: Vec<usize> = (0..self.batch_count.len()).filter(|&b| self.batch_count[b] > 0).collect();
        let nb = used.len();
        if nb < 2 {
            return vec![f64::INFINITY; len];
        }
        (0..len)
            .map(|k| {
                let means: Vec<C64> = used
                    .iter()
                    .map(|&b| to_c(sums[b][k]) / self.batch_count[b] as f64)
                    .collect();
                let centre: C64 = means.iter().sum::<C64>() / nb as f64;
                let ss: f64 = means.iter().map(|m| (m - centre).norm_sqr()).sum();
                (ss / (nb as f64 * (nb as f64 - 1.0))).sqrt()
            })
            .collect()
    }

    /// Standard error of the mean TTCF from batch means.
    pub fn ttcf_batch_sigma(&self) -> Vec<f64> {
        let len = if self.has_ttcf == Some(true) { self.n_steps + 1 } else { 0 };
        self.sigma(&self.batch_ttcf, len, |v| v)
    }

    /// Standard error of `tr ρ` from batch means.
    pub fn norm_batch_sigma(&self) -> Vec<f64> {
        self.sigma(&self.batch_norm, self.n_steps + 1, |v| C64::new(v, 0.0))
    }

    pub fn n_batches(&self) -> usize {
        self.batch_count.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleOptions {
    pub master_seed: u64,
    pub n_traj: usize,
    /// Trajectories per error-bar batch (by index).
    pub batch_size: usize,
    /// Pairs advanced together in one lockstep block.
    pub group_size: usize,
    pub record_stride: Option<usize>,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            master_seed: 42,
            n_traj: 2000,
            batch_size: 100,
            group_size: 8,
            record_stride: None,
            workers: None,
        }
    }
}

/// Runs `n_traj` trajectory pairs in parallel and reduces them in index
/// order. Diverged trajectories are logged and excluded.
pub fn run_ensemble(
    sys: &QsdSystem,
    c: &CoeffSet,
    p: &SystemParams,
    psi0: &StateVec,
    phi0: &StateVec,
    observable: &Operator,
    opts: &EnsembleOptions,
) -> Result<EnsembleAccumulator> {
    check_pair_inputs(sys, psi0, phi0)?;
    if opts.n_traj == 0 {
        return Err(Error::InvalidParameter {
            name: "n_traj",
            reason: "must be >= 1".into(),
        });
    }
    let a = observable.to_sparse();
    let pair_opts = PairOptions {
        record_stride: opts.record_stride,
        observable: None,
    };
    let mut acc = EnsembleAccumulator::new(sys.dims, c.n_steps(), opts.record_stride, opts.batch_size);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let group = opts.group_size.max(1);
    let batch = opts.batch_size.max(1);

    for start in (0..opts.n_traj).step_by(batch) {
        let end = (start + batch).min(opts.n_traj);
        let groups: Vec<(usize, usize)> = (start..end).step_by(group).map(|g| (g, (g + group).min(end))).collect();
        let results: Vec<Vec<Result<TrajectoryPair>>> = pool.install(|| {
            groups
                .par_iter()
                .map(|&(g0, g1)| {
                    let mut owned = Vec::with_capacity(g1 - g0);
                    for i in g0..g1 {
                        let seed = NoiseSeed::new(opts.master_seed, i as u64);
                        match sample_noise_path(seed, p, c.dt(), c.n_steps()) {
                            Ok(path) => owned.push((seed, path)),
                            Err(e) => return vec![Err(e)],
                        }
                    }
                    let noises: Vec<(NoiseSeed, &NoisePath)> = owned.iter().map(|(s, p)| (*s, p)).collect();
                    evolve_group(sys, c, &noises, psi0, phi0, &pair_opts, Some(&a))
                })
                .collect()
        });
        for res in results.into_iter().flatten() {
            match res {
                Ok(pair) => acc.accumulate(pair)?,
                Err(Error::TrajectoryDivergence { seed, time }) => {
                    warn!("trajectory {seed} diverged at t = {time:.4}; excluded");
                    acc.exclude(seed, time)?;
                }
                Err(e) => return Err(e),
            }
        }
        debug!("absorbed trajectories up to {end}");
    }
    Ok(acc)
}

#[derive(Clone, Debug, Default)]
pub struct DeterministicOptions {
    /// Snapshot stride for `ρ`, `𝒫`; `None` keeps only the final time.
    pub record_stride: Option<usize>,
    /// Evaluate `tr(A𝒫)` at every step.
    pub observable: Option<Operator>,
}

/// Output of the deterministic route.
#[derive(Clone, Debug)]
pub struct DeterministicRun {
    pub dt: f64,
    pub steps: Vec<usize>,
    pub rho: Vec<Operator>,
    pub p: Vec<Operator>,
    /// `tr(A𝒫)` per step (empty without an observable).
    pub ttcf: Vec<C64>,
    /// `tr ρ` per step.
    pub rho_trace: Vec<C64>,
    /// `max_t |tr ρ − 1|`.
    pub max_trace_error: f64,
    /// `max_t max|ρ − ρ†|`.
    pub max_hermiticity_error: f64,
}

/// RK4 on `∂X = −i[H,X] + [L, XŌ†] + [ŌX, L†]` for `ρ` and `𝒫`.
///
/// The step must satisfy the coefficient solver's stiffness guard; `c` was
/// produced under it on the same grid.
pub fn evolve_deterministic(
    sys: &QsdSystem,
    c: &CoeffSet,
    rho0: &Operator,
    p0: &Operator,
    opts: &DeterministicOptions,
) -> Result<DeterministicRun> {
    let shape = sys.dims.shape();
    if rho0.shape() != shape || p0.shape() != shape {
        return Err(Error::InvalidDimension("initial operators do not match system".into()));
    }
    if (rho0.trace() - 1.0).norm() > 1e-10 {
        return Err(Error::InvalidParameter {
            name: "rho0",
            reason: format!("trace must be 1, got {}", rho0.trace()),
        });
    }
    let observable = match &opts.observable {
        Some(a) if a.shape() != shape => {
            return Err(Error::InvalidDimension("observable does not match system".into()));
        }
        Some(a) => Some(a.to_sparse()),
        None => None,
    };
    let n = sys.dim();
    let n_steps = c.n_steps();
    let steps = recorded_steps(n_steps, opts.record_stride);
    let mut run = DeterministicRun {
        dt: c.dt(),
        steps: steps.clone(),
        rho: Vec::with_capacity(steps.len()),
        p: Vec::with_capacity(steps.len()),
        ttcf: Vec::new(),
        rho_trace: Vec::with_capacity(n_steps + 1),
        max_trace_error: 0.0,
        max_hermiticity_error: 0.0,
    };
    let mut states = vec![flatten(rho0.matrix()), flatten(p0.matrix())];
    let mut next_record = 0usize;
    evolve_operators::<Error>(&sys.operator, &CoeffFeed(c), &mut states, c.dt(), n_steps, |k, s| {
        let tr = trace(n, &s[0]);
        run.rho_trace.push(tr);
        run.max_trace_error = run.max_trace_error.max((tr - 1.0).norm());
        run.max_hermiticity_error = run.max_hermiticity_error.max(hermiticity_error(n, &s[0]));
        if let Some(a) = &observable {
            run.ttcf.push(a.trace_product(&s[1]));
        }
        if next_record < steps.len() && steps[next_record] == k {
            run.rho.push(Operator::new(shape.clone(), unflatten(n, &s[0]))?);
            run.p.push(Operator::new(shape.clone(), unflatten(n, &s[1]))?);
            next_record += 1;
        }
        if !s[1].iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::CoefficientDivergence {
                index: 0,
                time: k as f64 * c.dt(),
            });
        }
        Ok(())
    })?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{solve_coeffs, CoeffVariant};
    use crate::hilbert::{apply_operator, build_hamiltonian, prep_state, HamiltonianForm, StateKind};

    fn setup(p: &SystemParams) -> (QsdSystem, ModeOps) {
        let ops = ModeOps::new(p.dims()).unwrap();
        let h = build_hamiltonian(p, HamiltonianForm::Linearized).unwrap();
        (QsdSystem::new(&h, &ops.b).unwrap(), ops)
    }

    fn initial(p: &SystemParams, mech: StateKind) -> StateVec {
        let cav = prep_state(StateKind::Coherent { re: 1.0, im: 0.0 }, p.dim_c).unwrap();
        StateVec::product(&cav, &prep_state(mech, p.dim_m).unwrap())
    }

    #[test]
    fn identity_b_gives_identical_members() {
        let p = SystemParams {
            dim_c: 4,
            dim_m: 4,
            ..SystemParams::default()
        };
        let (sys, _) = setup(&p);
        let c = solve_coeffs(&p, 1e-2, 200, CoeffVariant::Rederived).unwrap();
        let seed = NoiseSeed::new(3, 0);
        let noise = sample_noise_path(seed, &p, 1e-2, 200).unwrap();
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 1 }, 4).unwrap(),
            &prep_state(StateKind::Fock { n: 2 }, 4).unwrap(),
        );
        let opts = PairOptions {
            record_stride: Some(1),
            observable: None,
        };
        let pair = evolve_pair(&sys, &c, &noise, seed, &psi0, &psi0, &opts).unwrap();
        assert_eq!(pair.psi.len(), 201);
        for (a, b) in pair.psi.iter().zip(&pair.phi) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn closed_system_is_unitary() {
        let p = SystemParams {
            bath_strength: 0.0,
            dim_c: 6,
            dim_m: 6,
            ..SystemParams::default()
        };
        let (sys, _) = setup(&p);
        let n_steps = 20_000;
        let c = solve_coeffs(&p, 1e-3, n_steps, CoeffVariant::Rederived).unwrap();
        let noise = sample_noise_path(NoiseSeed::new(1, 0), &p, 1e-3, n_steps).unwrap();
        assert!(noise.values().iter().all(|z| z.norm() == 0.0));
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 1 }, 6).unwrap(),
            &prep_state(StateKind::Fock { n: 2 }, 6).unwrap(),
        );
        let pair = evolve_pair(&sys, &c, &noise, NoiseSeed::new(1, 0), &psi0, &psi0, &PairOptions::default()).unwrap();
        let worst = pair.norm_sq.iter().map(|v| (v.sqrt() - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn free_cavity_quadrature_oscillates() {
        let p = SystemParams {
            coupling: 0.0,
            bath_strength: 0.0,
            dim_c: 12,
            dim_m: 4,
            ..SystemParams::default()
        };
        let (sys, ops) = setup(&p);
        let n_steps = 4000;
        let dt = 1e-3;
        let c = solve_coeffs(&p, dt, n_steps, CoeffVariant::Rederived).unwrap();
        let noise = NoisePath::zero(dt, n_steps);
        let psi0 = initial(&p, StateKind::Fock { n: 2 });
        let opts = PairOptions {
            record_stride: None,
            observable: Some(ops.cavity_quadrature()),
        };
        let pair = evolve_pair(&sys, &c, &noise, NoiseSeed::new(0, 0), &psi0, &psi0, &opts).unwrap();
        for (k, v) in pair.ttcf.iter().enumerate() {
            let t = k as f64 * dt;
            let exact = 2.0 * (5.0 * t).cos();
            assert!((v.re - exact).abs() < 1e-6 && v.im.abs() < 1e-6, "t={t}: {v} vs {exact}");
        }
    }

    fn fake_pair(index: u64, value: f64, n_steps: usize) -> TrajectoryPair {
        TrajectoryPair {
            seed: NoiseSeed::new(0, index),
            steps: recorded_steps(n_steps, None),
            psi: vec![StateVec::basis(&[2, 2], 0)],
            phi: vec![StateVec::basis(&[2, 2], 1)],
            ttcf: vec![C64::new(value, -value); n_steps + 1],
            norm_sq: vec![value; n_steps + 1],
        }
    }

    #[test]
    fn accumulator_is_order_independent() {
        let dims = Dims::new(2, 2);
        let values = [0.1, 0.7, 1e-9, 3.3, 2.0, 0.25];
        let mut forward = EnsembleAccumulator::new(dims, 3, None, 2);
        for (i, v) in values.iter().enumerate() {
            forward.accumulate(fake_pair(i as u64, *v, 3)).unwrap();
        }
        let mut shuffled = EnsembleAccumulator::new(dims, 3, None, 2);
        for i in [4usize, 1, 5, 0, 3, 2] {
            shuffled.accumulate(fake_pair(i as u64, values[i], 3)).unwrap();
        }
        assert_eq!(shuffled.n_pending(), 0);
        assert_eq!(forward.mean_ttcf().unwrap(), shuffled.mean_ttcf().unwrap());
        assert_eq!(forward.ttcf_batch_sigma(), shuffled.ttcf_batch_sigma());
        assert_eq!(forward.rho(0).unwrap(), shuffled.rho(0).unwrap());
        assert_eq!(forward.n_batches(), 3);
        assert!(forward.accumulate(fake_pair(2, 1.0, 3)).is_err());
        assert!(forward.accumulate(fake_pair(9, 1.0, 4)).is_err());
    }

    #[test]
    fn single_trajectory_accumulator_is_outer_product() {
        let p = SystemParams {
            dim_c: 3,
            dim_m: 3,
            ..SystemParams::default()
        };
        let (sys, _) = setup(&p);
        let c = solve_coeffs(&p, 1e-2, 50, CoeffVariant::Rederived).unwrap();
        let seed = NoiseSeed::new(5, 0);
        let noise = sample_noise_path(seed, &p, 1e-2, 50).unwrap();
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 1 }, 3).unwrap(),
            &prep_state(StateKind::Fock { n: 1 }, 3).unwrap(),
        );
        let opts = PairOptions {
            record_stride: Some(10),
            observable: None,
        };
        let pair = evolve_pair(&sys, &c, &noise, seed, &psi0, &psi0, &opts).unwrap();
        let mut acc = EnsembleAccumulator::new(p.dims(), 50, Some(10), 10);
        acc.accumulate(pair.clone()).unwrap();
        for r in 0..pair.steps.len() {
            assert_eq!(acc.rho(r).unwrap(), pair.psi[r].outer(&pair.psi[r]));
        }
    }

    #[test]
    fn divergence_reports_seed() {
        // a hugely amplified noise path forces the norm past the ceiling
        let p = SystemParams {
            dim_c: 2,
            dim_m: 3,
            coupling: 0.0,
            ..SystemParams::default()
        };
        let (sys, _) = setup(&p);
        let c = CoeffSet::zero(1e-2, 400);
        let loud = SystemParams {
            bath_strength: 1e16,
            ..p
        };
        let noise = sample_noise_path(NoiseSeed::new(0, 0), &loud, 1e-2, 400).unwrap();
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 0 }, 2).unwrap(),
            &prep_state(StateKind::Fock { n: 2 }, 3).unwrap(),
        );
        let seed = NoiseSeed::new(77, 9);
        match evolve_pair(&sys, &c, &noise, seed, &psi0, &psi0, &PairOptions::default()) {
            Err(Error::TrajectoryDivergence { seed: s, .. }) => assert_eq!(s, seed),
            other => panic!("expected divergence, got {:?}", other.map(|p| p.norm_sq.last().copied())),
        }
    }

    #[test]
    fn deterministic_route_preserves_trace_and_hermiticity() {
        let p = SystemParams {
            dim_c: 6,
            dim_m: 5,
            ..SystemParams::default()
        };
        let (sys, ops) = setup(&p);
        let c = solve_coeffs(&p, 1e-3, 3000, CoeffVariant::Rederived).unwrap();
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 1 }, 6).unwrap(),
            &prep_state(StateKind::Fock { n: 2 }, 5).unwrap(),
        );
        let rho0 = psi0.outer(&psi0);
        let p0 = ops.mech_quadrature().dot(&rho0);
        let run = evolve_deterministic(&sys, &c, &rho0, &p0, &DeterministicOptions::default()).unwrap();
        assert!(run.max_trace_error < 1e-10, "{}", run.max_trace_error);
        assert!(run.max_hermiticity_error < 1e-10);
        assert_eq!(run.rho.len(), 1);
    }

    #[test]
    fn deterministic_matches_single_trajectory_without_bath() {
        // Γ = 0: both routes are plain unitary evolution
        let p = SystemParams {
            bath_strength: 0.0,
            dim_c: 5,
            dim_m: 4,
            ..SystemParams::default()
        };
        let (sys, ops) = setup(&p);
        let c = solve_coeffs(&p, 1e-3, 1000, CoeffVariant::Rederived).unwrap();
        let psi0 = StateVec::product(
            &prep_state(StateKind::Fock { n: 1 }, 5).unwrap(),
            &prep_state(StateKind::Fock { n: 2 }, 4).unwrap(),
        );
        let phi0 = apply_operator(&ops.mech_quadrature(), &psi0).unwrap();
        let a = ops.cavity_quadrature();
        let det = evolve_deterministic(
            &sys,
            &c,
            &psi0.outer(&psi0),
            &phi0.outer(&psi0),
            &DeterministicOptions {
                record_stride: None,
                observable: Some(a.clone()),
            },
        )
        .unwrap();
        let pair = evolve_pair(
            &sys,
            &c,
            &NoisePath::zero(1e-3, 1000),
            NoiseSeed::new(0, 0),
            &psi0,
            &phi0,
            &PairOptions {
                record_stride: None,
                observable: Some(a),
            },
        )
        .unwrap();
        // both are fourth order; they differ only at O(dt⁴)
        for (x, y) in det.ttcf.iter().zip(&pair.ttcf) {
            assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }
}
