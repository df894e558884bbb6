//! Flat JSON run configuration.
//!
//! Every key is optional and falls back to the documented default; unknown
//! keys are rejected. Validation errors name the offending key.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coeffs::{stiffness_check, CoeffVariant};
use crate::error::{Error, Result};
use crate::hilbert::{prep_state, HamiltonianForm, StateKind, SystemParams};
use crate::spectra::Window;

/// Relative tolerance on `T/dt` being an integer.
const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Stochastic,
    #[default]
    Deterministic,
    Pseudomode,
    MarkovLindblad,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stochastic => "stochastic",
            Method::Deterministic => "deterministic",
            Method::Pseudomode => "pseudomode",
            Method::MarkovLindblad => "markov-lindblad",
        }
    }

    pub fn is_qsd(self) -> bool {
        matches!(self, Method::Stochastic | Method::Deterministic)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechState {
    #[default]
    Fock,
    Coherent,
    Squeezed,
}

/// Observable `A` read at time `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    /// `a† + a`
    #[default]
    Xc,
    /// `a†a`
    Nc,
}

/// Operator `B` applied at time zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BOperator {
    /// `b† + b`
    #[default]
    Xm,
    B,
    Bd,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub omega0: f64,
    #[serde(rename = "Omega")]
    pub mech_freq: f64,
    pub lambda: f64,
    #[serde(rename = "Gamma")]
    pub bath_strength: f64,
    pub gamma: f64,
    pub dim_c: usize,
    pub dim_m: usize,
    /// Auxiliary-mode truncation for the pseudomode oracle.
    pub dim_p: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub method: Method,
    /// Reference route used by `oracle` and `compare`.
    pub oracle: Method,
    pub coeff_variant: CoeffVariant,
    pub hamiltonian_form: HamiltonianForm,
    pub alpha0_re: f64,
    pub alpha0_im: f64,
    pub mech_state: MechState,
    pub fock_n: usize,
    pub beta_re: f64,
    pub beta_im: f64,
    pub squeeze_r: f64,
    pub squeeze_theta: f64,
    pub observable: Observable,
    pub operator_b: BOperator,
    pub window: Window,
    pub pad_factor: usize,
    pub out_dir: PathBuf,
    /// Paths sampled by `noise-test`.
    pub noise_paths: usize,
    /// Lags (in time units) probed by `noise-test`.
    pub noise_lags: Vec<f64>,
    /// `rel_l2` pass threshold for `compare`.
    pub compare_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = SystemParams::default();
        Self {
            omega0: p.cavity_freq,
            mech_freq: p.mech_freq,
            lambda: p.coupling,
            bath_strength: p.bath_strength,
            gamma: p.memory_rate,
            dim_c: p.dim_c,
            dim_m: p.dim_m,
            dim_p: 8,
            dt: 1e-3,
            t_final: 20.0,
            n_traj: 2000,
            seed: 42,
            batch_size: 100,
            method: Method::Deterministic,
            oracle: Method::Pseudomode,
            coeff_variant: CoeffVariant::Rederived,
            hamiltonian_form: HamiltonianForm::Linearized,
            alpha0_re: 1.0,
            alpha0_im: 0.0,
            mech_state: MechState::Fock,
            fock_n: 2,
            beta_re: 1.0,
            beta_im: 0.0,
            squeeze_r: 0.5,
            squeeze_theta: 0.0,
            observable: Observable::Xc,
            operator_b: BOperator::Xm,
            window: Window::Hann,
            pad_factor: 4,
            out_dir: PathBuf::from("out"),
            noise_paths: 10_000,
            noise_lags: vec![0.0, 1.0, 5.0],
            compare_tolerance: 0.02,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Keys accepted in a config document.
pub fn known_keys() -> BTreeSet<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// A validated config together with the keys the document set explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub present: Vec<String>,
}

impl RunConfig {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            cavity_freq: self.omega0,
            mech_freq: self.mech_freq,
            coupling: self.lambda,
            bath_strength: self.bath_strength,
            memory_rate: self.gamma,
            dim_c: self.dim_c,
            dim_m: self.dim_m,
        }
    }

    pub fn cavity_state(&self) -> StateKind {
        StateKind::Coherent {
            re: self.alpha0_re,
            im: self.alpha0_im,
        }
    }

    pub fn mech_kind(&self) -> StateKind {
        match self.mech_state {
            MechState::Fock => StateKind::Fock { n: self.fock_n },
            MechState::Coherent => StateKind::Coherent {
                re: self.beta_re,
                im: self.beta_im,
            },
            MechState::Squeezed => StateKind::Squeezed {
                r: self.squeeze_r,
                theta: self.squeeze_theta,
            },
        }
    }

    /// Number of steps `T/dt`, which must be integral.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive and finite, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(invalid("T", format!("must be positive and finite, got {}", self.t_final)));
        }
        let ratio = self.t_final / self.dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > GRID_TOLERANCE * ratio.max(1.0) {
            return Err(invalid("T", format!("T/dt = {ratio} is not a positive integer")));
        }
        Ok(n as usize)
    }

    /// Noise-test lags as full-grid offsets from the midpoint of the window.
    pub fn noise_lag_steps(&self) -> Result<(usize, Vec<usize>)> {
        let n_steps = self.n_steps()?;
        let k0 = n_steps / 2;
        let mut steps = Vec::with_capacity(self.noise_lags.len());
        for &tau in &self.noise_lags {
            let lag = (tau / self.dt).round();
            if !(tau >= 0.0) || (lag * self.dt - tau).abs() > GRID_TOLERANCE * tau.max(self.dt) {
                return Err(invalid("noise_lags", format!("lag {tau} is not a non-negative multiple of dt")));
            }
            if k0 + lag as usize > n_steps {
                return Err(invalid("noise_lags", format!("lag {tau} exceeds T/2")));
            }
            steps.push(lag as usize);
        }
        Ok((k0, steps))
    }

    /// Checks every key against its module contract.
    pub fn validate(&self) -> Result<()> {
        let p = self.params();
        p.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => invalid(name, reason),
            other => other,
        })?;
        let n_steps = self.n_steps()?;
        stiffness_check(&p, self.dt).map_err(|e| invalid("dt", e.to_string()))?;
        if self.dim_p < 2 {
            return Err(invalid("dim_p", format!("must be >= 2, got {}", self.dim_p)));
        }
        for (key, v) in [("n_traj", self.n_traj), ("batch_size", self.batch_size), ("pad_factor", self.pad_factor)] {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        if self.noise_paths < 2 {
            return Err(invalid("noise_paths", format!("must be >= 2, got {}", self.noise_paths)));
        }
        if n_steps + 1 < crate::spectra::MIN_TRACE_LEN {
            return Err(invalid("T", format!("trace has {} points, spectra need at least {}", n_steps + 1, crate::spectra::MIN_TRACE_LEN)));
        }
        if !matches!(self.oracle, Method::Pseudomode | Method::MarkovLindblad) {
            return Err(invalid("oracle", "must be pseudomode or markov-lindblad"));
        }
        if !(self.compare_tolerance > 0.0 && self.compare_tolerance.is_finite()) {
            return Err(invalid("compare_tolerance", "must be positive"));
        }
        for (key, v) in [
            ("alpha0_re", self.alpha0_re),
            ("alpha0_im", self.alpha0_im),
            ("beta_re", self.beta_re),
            ("beta_im", self.beta_im),
            ("squeeze_theta", self.squeeze_theta),
        ] {
            if !v.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
        }
        prep_state(self.cavity_state(), self.dim_c).map_err(|e| invalid("dim_c", format!("cavity state: {e}")))?;
        prep_state(self.mech_kind(), self.dim_m).map_err(|e| match e {
            Error::InvalidParameter { name, reason } => invalid(name, reason),
            other => invalid("dim_m", format!("mechanical state: {other}")),
        })?;
        if let Some(&tau) = self.noise_lags.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid("noise_lags", format!("lag {tau} must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<LoadedConfig> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
            line: e.line(),
            column: e.column(),
            reason: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(Error::ConfigParse {
                line: 1,
                column: 1,
                reason: "top level must be a JSON object".into(),
            });
        };
        let known = known_keys();
        if let Some(key) = map.keys().find(|k| !known.contains(*k)) {
            return Err(invalid(key, "unknown key"));
        }
        // merge one key at a time so that type errors name their key
        let mut merged = match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        for (key, v) in &map {
            merged.insert(key.clone(), v.clone());
            serde_json::from_value::<RunConfig>(Value::Object(merged.clone()))
                .map_err(|e| invalid(key, e.to_string()))?;
        }
        let config: RunConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            present: map.keys().cloned().collect(),
        })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let loaded = RunConfig::parse("{}").unwrap();
        let c = loaded.config;
        assert!(loaded.present.is_empty());
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.omega0, c.mech_freq, c.lambda, c.bath_strength, c.gamma), (5.0, 1.0, 1.0, 2.0, 0.2));
        assert_eq!((c.fock_n, c.alpha0_re, c.dt, c.t_final, c.n_traj, c.seed), (2, 1.0, 1e-3, 20.0, 2000, 42));
        assert_eq!(c.n_steps().unwrap(), 20_000);
    }

    #[test]
    fn negative_gamma_names_the_key() {
        match RunConfig::parse(r#"{"gamma": -1}"#) {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        match RunConfig::parse(r#"{"foo": 1}"#) {
            Err(Error::InvalidConfig { key, reason }) => {
                assert_eq!(key, "foo");
                assert!(reason.contains("unknown"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        match RunConfig::parse("{\n  \"gamma\": 0.2,\n  \"dt\" 1\n}") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_error_names_the_key() {
        match RunConfig::parse(r#"{"gamma": 0.5, "method": "magic"}"#) {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "method"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keys_follow_the_documented_names() {
        let keys = known_keys();
        for k in ["omega0", "Omega", "lambda", "Gamma", "gamma", "T", "dt", "method", "coeff_variant", "out_dir"] {
            assert!(keys.contains(k), "{k}");
        }
        let loaded = RunConfig::parse(r#"{"method": "markov-lindblad", "Gamma": 1.5, "coeff_variant": "paper"}"#).unwrap();
        assert_eq!(loaded.config.method, Method::MarkovLindblad);
        assert_eq!(loaded.config.bath_strength, 1.5);
        assert_eq!(loaded.config.coeff_variant, CoeffVariant::Paper);
        assert_eq!(loaded.present.len(), 3);
    }

    #[test]
    fn grid_and_state_constraints() {
        let bad = |doc: &str, want: &str| match RunConfig::parse(doc) {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, want, "{doc}"),
            other => panic!("{doc}: {other:?}"),
        };
        bad(r#"{"T": 1.0005}"#, "T");
        bad(r#"{"dt": 0.05}"#, "dt");
        bad(r#"{"dim_c": 4}"#, "dim_c");
        bad(r#"{"fock_n": 8}"#, "fock_n");
        bad(r#"{"mech_state": "coherent", "beta_re": 2.0}"#, "dim_m");
        bad(r#"{"dim_p": 1}"#, "dim_p");
        bad(r#"{"pad_factor": 0}"#, "pad_factor");
        bad(r#"{"oracle": "stochastic"}"#, "oracle");
        bad(r#"{"noise_lags": [-1]}"#, "noise_lags");
        let long = RunConfig::parse(r#"{"noise_lags": [15]}"#).unwrap().config;
        assert!(matches!(long.noise_lag_steps(), Err(Error::InvalidConfig { .. })));
        assert!(RunConfig::parse(r#"{"T": 2, "dt": 0.01}"#).is_ok());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig {
            gamma: 2.0,
            method: Method::Stochastic,
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap().config, c);
    }
}
