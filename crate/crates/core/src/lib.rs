//! Non-Markovian quantum state diffusion for a cavity-optomechanical system
//! coupled to a structured bath, with the two-time correlation function
//! `⟨A(t)B⟩` as the primary output.

pub mod coeffs;
pub mod config;
pub mod csv_io;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod noise;
pub mod oracles;
mod propagate;
pub mod run;
pub mod sparse;
pub mod spectra;

pub use coeffs::{solve_coeffs, CoeffSet, CoeffVariant};
pub use config::{Method, RunConfig};
pub use error::{Error, Result};
pub use hilbert::{Dims, HamiltonianForm, ModeOps, Operator, StateKind, StateVec, SystemParams};
pub use noise::{sample_noise_path, NoisePath, NoiseSeed};
