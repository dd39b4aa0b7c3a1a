//! Satellite-to-rainfall nowcasting pipeline.
//!
//! Stage 1 forecasts brightness-temperature fields with a convolutional
//! recurrent encoder-decoder (ConvGRU, with a ConvLSTM baseline), trained
//! from scratch with hand-written backpropagation through time. Stage 2
//! maps the predicted fields into rainfall rates through an empirical
//! power-law transform, aggregates them into a cumulative field with
//! probabilistic CDF output, and extracts extreme events via 3D
//! connected-component labeling.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`grid`]: dense 2D/3D field types shared by everything else
//! - [`io`]: frame files on disk, training windows, synthetic data
//! - [`preprocess`]: normalization, Otsu cloud masking, padding
//! - [`neural`]: differentiable layers and the forecast models
//! - [`forecast`]: Adam training, the staggered 4-model cascade, baselines
//! - [`rainfall`]: BT-to-rain transform, upsampling, cumulative fields, CDFs
//! - [`events`]: 3D event detection and CSV export
//! - [`verify`]: RMSE/Bias/SSIM/POD/FAR/F1/CRPS and the active-scene filter
//! - [`experiments`]: scripted desk-scale comparison and transfer studies
//!
//! Data-parallel inner loops (batch gradients, per-frame metrics, the four
//! cascade members) run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential iteration otherwise. Reductions are
//! always performed in a fixed order so results are bit-identical across
//! thread counts and both modes.

pub mod error;
pub mod events;
pub mod experiments;
pub mod forecast;
pub mod grid;
pub mod io;
pub mod neural;
pub mod par;
pub mod preprocess;
pub mod rainfall;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Field2D, FrameSequence, Unit, Volume3D};
