//! Synthetic ground truth: textured shapes moving with exact quadratic
//! trajectories, their analytic flows, occlusion and motion coefficients,
//! and brute-force references used by the tests.
//!
//! Time is measured in frame intervals; a quad holds frames at
//! `t = -1, 0, 1, 2`.

mod dataset;
mod oracle;
mod scene;

pub use dataset::{
    make_dataset, make_quad, make_scene, Difficulty, Observation, Overlap, Quad, QuadSource, LINKS,
};
pub use oracle::brute_force_reverse;
pub use scene::{
    analytic_flow, centroid, gt_coeffs, intermediate_flows, render_coverage, render_scene, SceneObject,
    SceneSpec, Shape, SPAN, SUPERSAMPLE,
};
