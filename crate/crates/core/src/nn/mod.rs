//! Dense tensors, hand-differentiated layers and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod layers;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use layers::{
    bce_with_logits, column_moments, gcn_layer, hadamard, linear, relu, sage_layer, sigmoid, spmm,
    BatchNormState, BnCache, BnMode, GcnCache, HadamardCache, LinearCache, ReluCache, SageCache,
};
pub use tensor::{Param, Tensor2};
