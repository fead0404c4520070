//! Transfer-attack benchmark toolkit for 3D point-cloud classifiers.
//!
//! The crate covers the full pipeline: synthetic data, two small
//! differentiable classifiers and an autoencoder, the four CW-style
//! baseline attacks with their scale/shear-augmented variants, input
//! purification defenses, and the transferability evaluation harness.

pub mod attacks;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod models;
pub mod neighbors;
pub mod optim;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use geometry::{PointCloud, TransformKind, TransformParams, TransformPolicy};
