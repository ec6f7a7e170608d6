//! Minimal neural-network toolkit on top of candle tensors.

mod adam;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    shift_along, silu, sinusoidal, softmax_last, Conv2d, GroupNorm, Linear, SelfAttention, TapConv1d,
};
pub use params::{ArrayValues, Init, NamedArray, ParamStore, BUFFER_SEGMENT};

use candle_core::{DType, Tensor};

use crate::error::Result;

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
