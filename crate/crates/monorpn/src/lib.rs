//! Monocular 3D region-proposal detection machinery.
//!
//! This crate implements the non-learned parts of a single-shot monocular 3D
//! detector: shared 2D/3D anchor templates with data-driven priors, camera
//! projection geometry, depth-aware (row-binned) convolution with a verified
//! fast path, the multi-task loss stack with analytic gradients, greedy NMS,
//! a projection-consistency orientation refinement, KITTI label/calibration
//! I/O, and KITTI-protocol average-precision evaluation.
//!
//! Start with the runnable programs under `examples/` — there is one per
//! subsystem — or the `monorpn` binary, which exposes the batch workflows
//! (`priors`, `infer`, `postopt`, `eval`, `bench`, `selftest`).

pub mod anchors;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod kitti;
pub mod losses;
pub mod nnops;
pub mod selftest;

pub use geometry::{Box2d, Box3d, CameraCalibration, Dim3, ProjectedCenter};
