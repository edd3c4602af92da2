//! Forward operations and the hand-written backward passes needed by the
//! trainable part of the model.

pub mod conv;
pub mod norm;
pub mod softmax;

pub use conv::{conv1d, conv1d_backward, conv3d, maxpool_spatial, relu, relu_backward};
pub use norm::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, group_norm, BatchNormCache,
    BatchNormState, BN_MOMENTUM, NORM_EPS,
};
pub use softmax::{
    softmax_axis, softmax_last_axis, softmax_last_axis_backward, sorted_sum,
};
