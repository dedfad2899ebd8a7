//! Depth up-scaling for Llama-style decoder checkpoints.
//!
//! The main entry point is [`upscale::expand`], which inserts new layers
//! into a [`checkpoint::TensorArchive`]. New layers are either fused from
//! adjacent base layers with optimal-transport neuron alignment
//! ([`tmf::fuse_layers`]), plainly averaged, copied (LLaMA-PRO) or stacked
//! (SOLAR). [`toy_llama`] runs the resulting models so that function
//! preservation can be checked directly.

pub mod checkpoint;
pub mod sinkhorn;
pub mod tensor;
pub mod tmf;
pub mod toy_llama;
pub mod upscale;

pub use checkpoint::{read_archive, write_archive, BlockId, LayerWeights, ModelConfig, TensorArchive};
pub use sinkhorn::{OtParams, ScaledPlan, TransportPlan};
pub use tensor::{Matrix2D, SeededRng, Vector1D};
pub use tmf::{fuse_avg, fuse_layers, FuseOptions, FusedLayer};
pub use toy_llama::{forward, perplexity, TokenSequence};
pub use upscale::{expand, freeze_mask, plan_interpolation, ExpansionPlan, Method, PositionStrategy};

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Archive(#[from] checkpoint::ArchiveError),
    #[error(transparent)]
    Config(#[from] checkpoint::ConfigError),
    #[error(transparent)]
    Forward(#[from] toy_llama::ForwardError),
    #[error(transparent)]
    Ot(#[from] sinkhorn::OtError),
    #[error(transparent)]
    Fuse(#[from] tmf::FuseError),
    #[error(transparent)]
    Upscale(#[from] upscale::UpscaleError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

/// Coarse error classes, used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Unreadable or malformed archives and token files.
    Format,
    /// Plans that cannot be built or do not match the archive.
    Plan,
    /// Transport solver failures.
    Solver,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use upscale::UpscaleError as U;
        match self {
            Error::Archive(_) | Error::Config(_) | Error::Forward(_) | Error::Tensor(_) => {
                ErrorCategory::Format
            }
            Error::Ot(_) | Error::Fuse(_) => ErrorCategory::Solver,
            Error::Upscale(U::Archive(_)) => ErrorCategory::Format,
            Error::Upscale(U::Fuse { .. }) => ErrorCategory::Solver,
            Error::Upscale(_) => ErrorCategory::Plan,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
