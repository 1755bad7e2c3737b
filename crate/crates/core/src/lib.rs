//! Latent-class Hough forests for 6 DoF object detection in RGB-D images.
//!
//! Pipeline: [`synth`] renders training views and test scenes, [`forest`]
//! trains one-class template trees, [`inference`] votes, localizes and
//! iteratively re-weights leaves, and [`eval`] scores the results.

pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod frame;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod meanshift;
pub mod synth;

pub use error::{Error, Result};
pub use frame::{Mask, ObjectModel, RgbdFrame};
pub use geometry::{CameraIntrinsics, Pose6D};
