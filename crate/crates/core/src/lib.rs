//! Desk-scale sensor-to-vision knowledge distillation.
//!
//! The pipeline turns tri-axial wearable-sensor windows into Gramian Angular
//! Field virtual images, trains small multi-modal teacher networks with
//! similarity-preserving fusion and semantic-preserving losses, and distills
//! them into a video-frame student through graph-guided saliency maps and
//! temperature-softened targets.

pub mod data;
pub mod embeddings;
pub mod gaf;
pub mod gsdm;
pub mod io;
pub mod losses;
pub mod models;
pub mod presets;
pub mod spamfm;
pub mod tensor;

pub use tensor::{Graph, NodeId, Tensor, TensorError};
