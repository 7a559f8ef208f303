//! Dense `f64` tensors, tape-based reverse-mode differentiation, the layers
//! the model is built from, Adam, and UFNP checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{LayerNorm, Linear, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore};
pub use tape::{
    sigmoid, softmax_in_place, softplus, softplus_inv, BackwardCtx, BackwardFn, Gradients, Tape,
    Var,
};
pub use tensor::Tensor;

pub(crate) use tape::normalize;
