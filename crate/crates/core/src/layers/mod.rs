//! Hand-written forward and backward passes for every layer the networks use.

mod activation;
mod conv;
mod loss;
mod norm;
mod pool;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use activation::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    spatial_softmax, spatial_softmax_backward,
};
pub use conv::{conv_backward, conv_forward, conv_forward_reference, ConvGrad, ConvParams};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use norm::{
    batchnorm_backward, batchnorm_forward, BatchNormState, BnCache, BnGrad, DEFAULT_EPSILON,
    DEFAULT_MOMENTUM,
};
pub use pool::{maxpool_backward, maxpool_forward, PoolIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Backward result of a parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<F, P> {
    pub d_input: Tensor<F>,
    pub d_params: P,
}
