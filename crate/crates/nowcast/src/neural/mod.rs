//! From-scratch differentiable layers and the forecast models.
//!
//! Everything here is a fixed computation graph with hand-written analytic
//! backward passes: 2D same-padding convolution, sigmoid/tanh gates,
//! ConvGRU and ConvLSTM cells, and the encoder / recurrent-stack / decoder
//! model unrolled over 8 steps (4 observed, 4 forecast).
//!
//! Storage is `f32` in production; every operation is generic over
//! [`Real`] and accumulates in `f64`, so the identical code path can be
//! instantiated at `f64` for finite-difference gradient verification.

mod cells;
mod conv;
mod model;
mod params_io;
mod real;
mod tensor;

pub use cells::{gru_forward, gru_step, lstm_forward, lstm_step, GruParams, LstmParams};
pub use conv::{conv2d_backward, conv2d_forward, ConvParams};
pub use model::{
    model_backward, model_forward, Arch, CellKind, NetParams, RnnParams, FORECAST_STEPS,
    INPUT_STEPS,
};
pub use params_io::{load_params, save_params};
pub use real::Real;
pub use tensor::Tensor;
