//! Geometry of the last-hidden-layer feature space of image classifiers.
//!
//! Given feature vectors of a training set and the final linear head of a
//! classifier, this crate computes exact distances to decision boundaries
//! ([`boundary`]), projections onto the training set's convex hull
//! ([`hull`]), dataset-level ambiguity and adversarial indicators
//! ([`audit`]), inverse maps from feature space back to the input domain
//! of a dense/ReLU extractor ([`inverse`]) and two-point equidistant path
//! projections ([`pathviz`]).

pub mod audit;
pub mod boundary;
pub mod cli;
pub mod config;
pub mod error;
pub mod hull;
pub mod inverse;
pub mod io;
pub mod model;
pub mod pathviz;
pub mod qp;
pub mod tensor;

pub use config::AuditConfig;
pub use error::{Error, Result};
pub use model::{FeatureDataset, Layer, LinearHead, MlpNetwork};
pub use tensor::{Matrix, Vector};
