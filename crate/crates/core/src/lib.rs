//! Multi-step bus/tram arrival-time forecasting.
//!
//! Delays along a trip are forecast from the last `N_p` stops by folding the
//! embedded sequence into 2-D period grids, running a vision backbone
//! (multi-kernel convolution or shifted-window attention) over each grid, and
//! aggregating the branches by spectral amplitude. The crate also ships a
//! synthetic transit-delay simulator, training and evaluation, and a
//! checkpoint format.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the
//! `*64` aliases below are the double-precision instantiations used for
//! training.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod period;
pub mod sample;
pub mod scalar;
pub mod sim;
pub mod stationarize;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use backbone::{BackboneKind, BackboneParams};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{ArrivalNet, ModelConfig};
pub use params::{ParamId, ParamStore, ParamVars};
pub use period::{Grid2D, PeriodDecomposition, PeriodEntry};
pub use sample::{SequenceSample, StopRecord, Trip};
pub use scalar::Scalar;
pub use stationarize::{denormalize, normalize, NormStats};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type ArrivalNet64 = ArrivalNet<f64>;
pub type ArrivalNet32 = ArrivalNet<f32>;
