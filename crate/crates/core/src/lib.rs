//! Quadratic-motion video frame interpolation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, conv/pool/resize/sample kernels and a
//!   reverse-mode differentiation graph with an Adam optimiser.
//! * [`motion`]: quadratic flow evaluation, closed-form coefficients, flow
//!   reversal by Gaussian-weighted splatting, refinement, backward warping
//!   and mask-blended synthesis.
//! * [`nets`]: the grid networks estimating motion coefficients, refining
//!   flows and predicting the blending mask.
//! * [`losses`]: training objectives and PSNR/SSIM.
//! * [`synth`]: parametric scenes with exact quadratic motion, used as ground
//!   truth, plus brute-force reference implementations.
//! * [`pipeline`]: end-to-end interpolation, training, evaluation.
//! * [`io`]: `.flo`, images, checkpoints, dataset manifests and flow
//!   visualisation.

pub mod error;
pub mod io;
pub mod losses;
pub mod motion;
pub mod nets;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
