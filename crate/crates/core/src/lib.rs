//! Cross-modality (visible / infrared) person re-identification.
//!
//! The pipeline is a two-stream network with modality-specific stems and a
//! shared trunk, trained jointly with four losses:
//!
//! * a perceptual edge-features loss that pulls the stem activations of each
//!   modality towards Sobel edge maps, as seen through a frozen feature network,
//! * a cross-modality contrastive-center loss on the normalized embeddings,
//! * identity classification and weighted-regularization triplet losses.
//!
//! Retrieval is evaluated with the usual query/gallery protocol (CMC, mAP, mINP).

pub mod data;
pub mod edge;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
