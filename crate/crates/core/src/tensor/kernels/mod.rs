//! Raw forward/backward kernels. The [`Graph`](super::Graph) wraps these;
//! they are also usable directly on plain tensors.

pub mod conv;
pub mod spatial;

pub use conv::{conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, ConvGeom};
pub use spatial::{
    grid_sample, grid_sample_backward, maxpool2x2, maxpool2x2_backward, upsample2x,
    upsample2x_backward,
};
