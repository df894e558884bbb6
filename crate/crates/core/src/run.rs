//! Run orchestration: turns a [`RunConfig`] into TTCFs, spectra and CSV
//! artifacts plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use num_complex::Complex64 as C64;
use serde_json::{json, Map, Value};

use crate::coeffs::{solve_coeffs, CoeffSet};
use crate::config::{BOperator, Method, Observable, RunConfig};
use crate::csv_io;
use crate::dynamics::{evolve_deterministic, run_ensemble, DeterministicOptions, EnsembleOptions, QsdSystem};
use crate::error::{Error, Result};
use crate::hilbert::{apply_operator, build_hamiltonian, prep_state, ModeOps, Operator, StateVec};
use crate::noise::{kernel_statistics, NoiseSeed};
use crate::oracles::{band_check, compare_traces, markov_lindblad_ttcf, pseudomode_ttcf, CorrelatorSetup};
use crate::spectra::{spectrum, CorrelationTrace};

pub const CODE_VERSION: &str = concat!("optoqsd ", env!("CARGO_PKG_VERSION"));

/// Standard-error multiple used by `noise-test`.
pub const NOISE_SIGMAS: f64 = 3.0;

/// Operators and states shared by every route for one config.
pub struct Problem {
    pub ops: ModeOps,
    pub h: Operator,
    pub psi0: StateVec,
    pub phi0: StateVec,
    pub a: Operator,
    pub b: Operator,
    pub n_steps: usize,
    pub labels: (&'static str, &'static str),
}

impl Problem {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.params();
        let ops = ModeOps::new(p.dims())?;
        let h = build_hamiltonian(&p, cfg.hamiltonian_form)?;
        let psi0 = StateVec::product(&prep_state(cfg.cavity_state(), p.dim_c)?, &prep_state(cfg.mech_kind(), p.dim_m)?);
        let (a, a_label) = match cfg.observable {
            Observable::Xc => (ops.cavity_quadrature(), "Xc"),
            Observable::Nc => (ops.cavity_number(), "Nc"),
        };
        let (b, b_label) = match cfg.operator_b {
            BOperator::Xm => (ops.mech_quadrature(), "Xm"),
            BOperator::B => (ops.b.clone(), "b"),
            BOperator::Bd => (ops.bd.clone(), "bd"),
            BOperator::Identity => (ops.identity(), "I"),
        };
        let phi0 = apply_operator(&b, &psi0)?;
        Ok(Self {
            ops,
            h,
            psi0,
            phi0,
            a,
            b,
            n_steps: cfg.n_steps()?,
            labels: (a_label, b_label),
        })
    }

    fn setup(&self, cfg: &RunConfig) -> CorrelatorSetup<'_> {
        CorrelatorSetup {
            psi0: &self.psi0,
            a: &self.a,
            b: &self.b,
            dt: cfg.dt,
            n_steps: self.n_steps,
            form: cfg.hamiltonian_form,
        }
    }
}

/// A TTCF computed by one route with its diagnostics.
#[derive(Clone, Debug)]
pub struct TtcfOutcome {
    pub method: Method,
    pub trace: CorrelationTrace,
    /// Per-time batch standard error (stochastic route only).
    pub sigma: Option<Vec<f64>>,
    /// Mean `⟨ψ|ψ⟩` per step and its batch standard error (stochastic only).
    pub norm: Option<(Vec<f64>, Vec<f64>)>,
    pub excluded: Vec<(NoiseSeed, f64)>,
    pub diagnostics: Map<String, Value>,
}

pub fn compute_coeffs(cfg: &RunConfig) -> Result<CoeffSet> {
    cfg.validate()?;
    solve_coeffs(&cfg.params(), cfg.dt, cfg.n_steps()?, cfg.coeff_variant)
}

/// Runs `method` on the config. `workers` only affects the stochastic route.
pub fn compute_ttcf(cfg: &RunConfig, method: Method, workers: Option<usize>) -> Result<TtcfOutcome> {
    let prob = Problem::new(cfg)?;
    let p = cfg.params();
    let mut diagnostics = Map::new();
    let mut sigma = None;
    let mut norm_stats = None;
    let mut excluded = Vec::new();
    let values = match method {
        Method::Deterministic | Method::Stochastic => {
            let c = compute_coeffs(cfg)?;
            let sys = QsdSystem::new(&prob.h, &prob.ops.b)?;
            if method == Method::Deterministic {
                let rho0 = prob.psi0.outer(&prob.psi0);
                let p0 = prob.b.dot(&rho0);
                let run = evolve_deterministic(
                    &sys,
                    &c,
                    &rho0,
                    &p0,
                    &DeterministicOptions {
                        record_stride: None,
                        observable: Some(prob.a.clone()),
                    },
                )?;
                diagnostics.insert("max_trace_error".into(), json!(run.max_trace_error));
                diagnostics.insert("max_hermiticity_error".into(), json!(run.max_hermiticity_error));
                run.ttcf
            } else {
                let acc = run_ensemble(
                    &sys,
                    &c,
                    &p,
                    &prob.psi0,
                    &prob.phi0,
                    &prob.a,
                    &EnsembleOptions {
                        master_seed: cfg.seed,
                        n_traj: cfg.n_traj,
                        batch_size: cfg.batch_size,
                        workers,
                        ..EnsembleOptions::default()
                    },
                )?;
                let s = acc.ttcf_batch_sigma();
                let norm = acc.mean_norm()?;
                let norm_sigma = acc.norm_batch_sigma();
                diagnostics.insert("trajectories".into(), json!(acc.count()));
                diagnostics.insert("batches".into(), json!(acc.n_batches()));
                diagnostics.insert("max_ttcf_sigma".into(), json!(s.iter().copied().fold(0.0, f64::max)));
                diagnostics.insert("final_mean_norm".into(), json!(norm.last()));
                diagnostics.insert("final_norm_sigma".into(), json!(norm_sigma.last()));
                excluded = acc.excluded().to_vec();
                sigma = Some(s);
                norm_stats = Some((norm, norm_sigma));
                acc.mean_ttcf()?
            }
        }
        Method::Pseudomode => {
            let run = pseudomode_ttcf(&p, cfg.dim_p, &prob.setup(cfg))?;
            diagnostics.insert("max_trace_error".into(), json!(run.max_trace_error));
            diagnostics.insert("max_hermiticity_error".into(), json!(run.max_hermiticity_error));
            diagnostics.insert("max_aux_population".into(), json!(run.max_aux_population));
            diagnostics.insert("dim_p".into(), json!(cfg.dim_p));
            run.trace.values
        }
        Method::MarkovLindblad => {
            let run = markov_lindblad_ttcf(&p, &prob.setup(cfg))?;
            diagnostics.insert("max_trace_error".into(), json!(run.max_trace_error));
            diagnostics.insert("max_hermiticity_error".into(), json!(run.max_hermiticity_error));
            run.trace.values
        }
    };
    Ok(TtcfOutcome {
        method,
        trace: CorrelationTrace::new(cfg.dt, values, prob.labels.0, prob.labels.1)?,
        sigma,
        norm: norm_stats,
        excluded,
        diagnostics,
    })
}

/// Files written by one subcommand and the manifest describing them.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub manifest: Value,
    /// Overall verdict for checking subcommands (`compare`, `noise-test`).
    pub pass: Option<bool>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
    started: Instant,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, extra: Map<String, Value>, pass: Option<bool>) -> Result<Artifacts> {
        let excluded = extra.get("excluded").and_then(Value::as_array).map_or(0, Vec::len);
        let manifest_path = self.path("manifest.json");
        let mut manifest = json!({
            "command": command,
            "code_version": CODE_VERSION,
            "seed": cfg.seed,
            "config": cfg,
            "excluded_trajectories": excluded,
            "files": self.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        if let Value::Object(m) = &mut manifest {
            m.extend(extra);
            if let Some(pass) = pass {
                m.insert("pass".into(), json!(pass));
            }
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        csv_io::write_text(&manifest_path, &(text + "\n"))?;
        info!("wrote {} files to {}", self.files.len(), self.dir.display());
        Ok(Artifacts {
            files: self.files,
            manifest,
            pass,
        })
    }
}

fn outcome_fields(o: &TtcfOutcome) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("method".into(), json!(o.method.name()));
    m.insert(
        "excluded".into(),
        Value::Array(
            o.excluded
                .iter()
                .map(|(s, t)| json!({"traj_index": s.traj_index, "time": t}))
                .collect(),
        ),
    );
    m.insert("diagnostics".into(), Value::Object(o.diagnostics.clone()));
    m
}

/// `coeffs`: writes `coeffs.csv`.
pub fn run_coeffs(cfg: &RunConfig) -> Result<Artifacts> {
    let mut w = Writer::new(&cfg.out_dir)?;
    let c = compute_coeffs(cfg)?;
    csv_io::write_coeffs(&w.path("coeffs.csv"), &c)?;
    w.finish("coeffs", cfg, Map::new(), None)
}

fn write_trace_outputs(w: &mut Writer, cfg: &RunConfig, o: &TtcfOutcome) -> Result<()> {
    csv_io::write_ttcf(&w.path("ttcf.csv"), &o.trace)?;
    if let Some(s) = &o.sigma {
        csv_io::write_series(&w.path("ttcf_sigma.csv"), ["t", "sigma"], cfg.dt, s)?;
    }
    let s = spectrum(&o.trace, cfg.window, cfg.pad_factor)?;
    csv_io::write_spectrum(&w.path("spectrum.csv"), &s)?;
    Ok(())
}

/// `simulate`: runs `cfg.method` and writes `coeffs.csv`, `ttcf.csv`,
/// `spectrum.csv` (and `ttcf_sigma.csv` for the stochastic route).
pub fn run_simulate(cfg: &RunConfig, workers: Option<usize>) -> Result<Artifacts> {
    let mut w = Writer::new(&cfg.out_dir)?;
    let c = compute_coeffs(cfg)?;
    csv_io::write_coeffs(&w.path("coeffs.csv"), &c)?;
    let o = compute_ttcf(cfg, cfg.method, workers)?;
    write_trace_outputs(&mut w, cfg, &o)?;
    w.finish("simulate", cfg, outcome_fields(&o), None)
}

/// `oracle`: runs the reference route `cfg.oracle`.
pub fn run_oracle(cfg: &RunConfig) -> Result<Artifacts> {
    let mut w = Writer::new(&cfg.out_dir)?;
    let o = compute_ttcf(cfg, cfg.oracle, None)?;
    write_trace_outputs(&mut w, cfg, &o)?;
    w.finish("oracle", cfg, outcome_fields(&o), None)
}

/// `spectrum`: transforms an existing `t,re,im` file.
pub fn run_spectrum(cfg: &RunConfig, input: &Path) -> Result<Artifacts> {
    let trace = csv_io::read_ttcf(input)?;
    let mut w = Writer::new(&cfg.out_dir)?;
    let s = spectrum(&trace, cfg.window, cfg.pad_factor)?;
    csv_io::write_spectrum(&w.path("spectrum.csv"), &s)?;
    let mut extra = Map::new();
    extra.insert("input".into(), json!(input.display().to_string()));
    w.finish("spectrum", cfg, extra, None)
}

/// Inputs for `compare`. Without files, the config's `method` is compared
/// against its `oracle`.
#[derive(Clone, Debug, Default)]
pub struct CompareInputs {
    pub reference: Option<PathBuf>,
    pub candidate: Option<PathBuf>,
    /// `t,sigma` file enabling the pointwise band test.
    pub sigma: Option<PathBuf>,
    /// Band width in units of sigma.
    pub band: f64,
}

pub fn run_compare(cfg: &RunConfig, inputs: &CompareInputs, workers: Option<usize>) -> Result<Artifacts> {
    let (reference, candidate, sigma, names) = match (&inputs.reference, &inputs.candidate) {
        (Some(r), Some(c)) => {
            let sigma = inputs
                .sigma
                .as_ref()
                .map(|p| csv_io::read_series(p, ["t", "sigma"]))
                .transpose()?;
            (csv_io::read_ttcf(r)?, csv_io::read_ttcf(c)?, sigma, (r.display().to_string(), c.display().to_string()))
        }
        (None, None) => {
            let r = compute_ttcf(cfg, cfg.oracle, workers)?;
            let c = compute_ttcf(cfg, cfg.method, workers)?;
            (r.trace, c.trace, c.sigma, (cfg.oracle.name().to_string(), cfg.method.name().to_string()))
        }
        _ => {
            return Err(Error::Config("compare needs both --reference and --candidate, or neither".into()));
        }
    };
    let cmp = compare_traces(&reference, &candidate)?;
    let mut w = Writer::new(&cfg.out_dir)?;
    let band = match &sigma {
        Some(s) => Some((band_check(&reference, &candidate, s, inputs.band)?, s)),
        None => None,
    };
    let rows = cmp.per_time.iter().enumerate().map(|(k, (t, d))| {
        let mut row = vec![csv_io::fmt_f64(*t), csv_io::fmt_f64(*d)];
        if let Some((_, s)) = &band {
            row.push(csv_io::fmt_f64(inputs.band * s[k]));
        }
        row
    });
    let header: &[&str] = if band.is_some() { &["t", "abs_diff", "band"] } else { &["t", "abs_diff"] };
    csv_io::write_table(&w.path("compare.csv"), header, rows)?;

    let l2_pass = cmp.rel_l2 <= cfg.compare_tolerance;
    let mut summary = format!(
        "reference: {}\ncandidate: {}\nrel_l2 = {:.6e} (tolerance {}) {}\nsup_abs = {:.6e}\n",
        names.0,
        names.1,
        cmp.rel_l2,
        cfg.compare_tolerance,
        verdict(l2_pass),
        cmp.sup_abs
    );
    let mut pass = l2_pass;
    let mut extra = Map::new();
    extra.insert("reference".into(), json!(names.0));
    extra.insert("candidate".into(), json!(names.1));
    extra.insert("rel_l2".into(), json!(cmp.rel_l2));
    extra.insert("sup_abs".into(), json!(cmp.sup_abs));
    if let Some((b, _)) = &band {
        summary += &format!(
            "band |x - y| <= {} sigma: worst ratio {:.4} at t = {:.4} {}\n",
            inputs.band,
            b.worst_ratio,
            b.worst_time,
            verdict(b.pass)
        );
        extra.insert("band_sigmas".into(), json!(inputs.band));
        extra.insert("band_worst_ratio".into(), json!(b.worst_ratio));
        pass &= b.pass;
    }
    csv_io::write_text(&w.path("summary.txt"), &summary)?;
    w.finish("compare", cfg, extra, Some(pass))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// `noise-test`: empirical mean and two-point moments of `z` against the
/// kernel, written to `noise.csv`.
pub fn run_noise_test(cfg: &RunConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let (k0, lags) = cfg.noise_lag_steps()?;
    let (mean, stats) = kernel_statistics(&cfg.params(), cfg.seed, cfg.noise_paths, cfg.dt, k0, &lags)?;
    let mut w = Writer::new(&cfg.out_dir)?;
    let mut pass = mean.within(NOISE_SIGMAS);
    let mut rows = vec![estimate_row("mean", &mean)];
    for s in &stats {
        pass &= s.correlation.within(NOISE_SIGMAS) && s.pseudo.within(NOISE_SIGMAS);
        rows.push(estimate_row("z_t z*_s", &s.correlation));
        rows.push(estimate_row("z_t z_s", &s.pseudo));
    }
    csv_io::write_table(
        &w.path("noise.csv"),
        &["tau", "moment", "exact_re", "exact_im", "mean_re", "mean_im", "stderr_re", "stderr_im", "within_3se"],
        rows,
    )?;
    let mut extra = Map::new();
    extra.insert("t0".into(), json!(k0 as f64 * cfg.dt));
    extra.insert("paths".into(), json!(cfg.noise_paths));
    w.finish("noise-test", cfg, extra, Some(pass))
}

fn estimate_row(name: &str, e: &crate::noise::MomentEstimate) -> Vec<String> {
    let f = csv_io::fmt_f64;
    let exact: C64 = e.exact;
    vec![
        f(e.tau),
        name.to_string(),
        f(exact.re),
        f(exact.im),
        f(e.mean.re),
        f(e.mean.im),
        f(e.stderr_re),
        f(e.stderr_im),
        e.within(NOISE_SIGMAS).to_string(),
    ]
}

/// Keys each subcommand reads; others are ignored with a notice.
pub fn relevant_keys(command: &str) -> &'static [&'static str] {
    const PHYSICS: &[&str] = &["omega0", "Omega", "lambda", "Gamma", "gamma", "dim_c", "dim_m", "dt", "T", "out_dir"];
    match command {
        "coeffs" => &["omega0", "Omega", "lambda", "Gamma", "gamma", "dim_c", "dim_m", "dt", "T", "out_dir", "coeff_variant"],
        "spectrum" => &["window", "pad_factor", "out_dir"],
        "noise-test" => &["Gamma", "gamma", "dt", "T", "seed", "noise_paths", "noise_lags", "out_dir"],
        "simulate" | "oracle" | "compare" => &[
            "omega0", "Omega", "lambda", "Gamma", "gamma", "dim_c", "dim_m", "dim_p", "dt", "T", "n_traj", "seed",
            "batch_size", "method", "oracle", "coeff_variant", "hamiltonian_form", "alpha0_re", "alpha0_im",
            "mech_state", "fock_n", "beta_re", "beta_im", "squeeze_r", "squeeze_theta", "observable", "operator_b",
            "window", "pad_factor", "out_dir", "compare_tolerance",
        ],
        _ => PHYSICS,
    }
}
