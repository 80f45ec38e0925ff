//! Parallax-free orthographic stitching of cone-beam transmission images.

pub mod compounding;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod image;
pub mod landmarks;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod protocol;
pub mod spectral;
pub mod stitch;
mod rawio;
pub mod volume;

pub use error::{Error, ErrorKind, Result};
pub use rawio::Dtype;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/fourier.md")]
    mod fourier {}
    #[doc = include_str!("../../../book/src/stitching.md")]
    mod stitching {}
    #[doc = include_str!("../../../book/src/landmarks.md")]
    mod landmarks {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
