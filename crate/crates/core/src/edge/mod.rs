//! Sobel edge extraction and the edge-fusion strategies.

mod fusion;
mod sobel;

pub use fusion::{apply_fusion, ClassicLateFusion, FusionKind, FusionParams};
pub use sobel::{
    luminance_u8, resize_bilinear, sobel_directional, sobel_edges, to_single_channel, EdgeMap, Raster,
    SobelKernelBank, LUMA_WEIGHTS,
};
