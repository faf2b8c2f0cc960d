//! Adversarial imitation learning with a diffusion-model discriminator.
//!
//! The discriminator scores state-action pairs by how well a denoising
//! diffusion model reconstructs them, synthesizes pseudo-expert
//! demonstrations through the reverse process, and replays the
//! (pseudo-)expert pool with priorities derived from the discriminator's
//! error. A soft actor-critic policy is trained against the surrogate
//! reward `-log(1 - D)`.
//!
//! Modules:
//! - [`nn`]: dense networks with exact reverse-mode gradients and Adam.
//! - [`diffusion`]: variance schedule, forward noising, denoising loss,
//!   reverse-process sampling, input normalization.
//! - [`discriminator`]: diffusion-based confidence, surrogate reward,
//!   dynamic threshold, pseudo-expert filtering, weighted training loss.
//! - [`pedr`]: sum-tree priority buffers, annealed importance weights,
//!   and the per-trajectory buffer coordinator.
//! - [`sac`]: soft actor-critic policy optimizer.
//! - [`envs`]: deterministic toy control environments, scripted experts,
//!   and trajectory files.
//! - [`config`], [`metrics`], [`train`], [`cli`]: run configuration,
//!   evaluation metrics (PCC, Fréchet distance, PCA export), the training
//!   loop, and the command-line interface.

pub mod cli;
pub mod config;
pub mod diffusion;
pub mod discriminator;
pub mod envs;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pedr;
pub mod sac;
pub mod train;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
