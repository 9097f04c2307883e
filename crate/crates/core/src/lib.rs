//! Train and audit face-swap detectors without a real face dataset.
//!
//! The pipeline: [`generator`] renders seeded batches of synthetic faces,
//! [`swapper`] turns each batch of `N` faces into `N - 1` consecutive-pair
//! swaps, [`detector`] trains a binary classifier (unswapped = real,
//! swapped = fake), [`evaluation`] measures cross-backend and cross-dataset
//! accuracy, [`bias`] reports accuracy / acceptance / rejection disparities
//! across demographic facets, and [`interpret`] produces saliency and
//! occlusion maps. [`persist`] and [`cli`] tie it together on disk.

pub mod adapter;
pub mod bias;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image;
pub mod interpret;
pub mod label;
pub mod persist;
pub mod swapper;

pub use error::{Error, Result};
pub use image::Image;
pub use label::{Class, FAKE_CLASS, REAL_CLASS};
