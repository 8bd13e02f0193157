//! Sine-activated coordinate networks initialized by pretraining on
//! procedural noise.
//!
//! The crate covers the full pipeline: noise corpora, shared-encoder
//! pretraining with per-signal decoder heads, transfer to new signals, the
//! denoising probe, per-frame low-rank video fields, and NTK / loss-landscape
//! analysis of the resulting initializations.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod photos;
pub mod model;
pub mod rng;
pub mod spectrum;
pub mod training;
pub mod video;

pub use error::{Error, Result};
pub use grid::{make_coord_grid, CoordGrid, ImageGrid};
pub use model::{init_siren, Activation, ActivationKind, AdamState, LayerParams, SineMlpParams};
pub use rng::Rng;
