//! Small-vehicle detection for aerial imagery.
//!
//! A one-stage detector built from plain and residual convolution blocks,
//! together with its training loop, anchor-grid decoding, evaluation and a
//! feature-map visualization that composes a layer's channels into a single
//! modal-intensity image.

pub mod boxes;
pub mod dataio;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod rfav;
pub mod tensor;
pub mod training;

pub use boxes::{BBox, GroundTruthBox};
pub use error::{Error, Result};
pub use network::{Network, NetworkSpec};
pub use tensor::Tensor;
