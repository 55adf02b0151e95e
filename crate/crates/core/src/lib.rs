//! Spectrum prediction from I/Q captures: spectrogram ingestion, 3D windowed
//! transformer forecasters, spectrum occupancy labelling and evaluation.

pub mod colormap;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod params;
pub mod sor;
pub mod swin;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, Session};
pub use tensor::{Graph, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/windows.md")]
    mod windows {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/occupancy.md")]
    mod occupancy {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
