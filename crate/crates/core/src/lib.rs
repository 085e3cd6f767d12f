//! Few-shot segmentation by tracking through generated pseudo videos.
//!
//! A reference image is morphed into the target image ([`dbst`]), the
//! resulting frames are prompted with masks derived from a test-time adapted
//! feature prototype ([`ttga`]), and a video object segmentation tracker
//! ([`ivos`]) carries the reference mask to the target.

pub mod affine;
pub mod baselines;
pub mod dbst;
pub mod episode;
pub mod eval;
pub mod error;
pub mod image;
pub mod ivos;
pub mod metrics;
pub mod sequence;
pub mod ttga;

pub use error::{Error, Result};
pub use episode::{Episode, Reference};
pub use image::{Image, Mask};
pub use metrics::{aggregate_miou, iou, ClassScore, EpisodeScore, EvaluationReport};
pub use sequence::PseudoVideoSequence;
