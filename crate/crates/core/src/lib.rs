//! Left-ventricle wall and cavity measurement from B-mode echo clips via
//! anatomical M-mode (AMM) images.
//!
//! An operator places a scanline over the anchor frame; the clip is resampled
//! along it into a V x W AMM image, a detector produces four landmark
//! heatmaps, and the landmark rows are mapped back to B-mode pixels to give
//! IVS, LVID and LVPW lengths (and, for an ED/ES pair, cardiac indices).
//!
//! Coordinates are pixels with the origin at the top-left, x rightward and
//! y downward.

pub mod amm;
pub mod detector;
pub mod formats;
pub mod heatmap;
pub mod indices;
pub mod metrics;
pub mod phantom;
pub mod pipeline;

pub use amm::{AmmImage, AmmPoint, EchoClip, Frame, FrameSize, Point, Scanline};
pub use detector::{DetectorDescriptor, DetectorRegistry};
pub use formats::{AnnotationRecord, ClipManifest, Phase};
pub use heatmap::{HeatmapStack, ScoreKind};
pub use metrics::SegmentLengths;
pub use pipeline::{MeasurementReport, PipelineConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Amm(#[from] amm::AmmError),
    #[error(transparent)]
    Heatmap(#[from] heatmap::HeatmapError),
    #[error(transparent)]
    Detector(#[from] detector::DetectorError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Index(#[from] indices::IndexError),
    #[error(transparent)]
    Phantom(#[from] phantom::PhantomError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error("prediction '{0}' has no matching annotation")]
    UnmatchedSample(String),
    #[error("clips '{first}' and '{second}' must be one ED and one ES")]
    PhaseMismatch { first: String, second: String },
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("clip '{id}': {source}")]
    InClip {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a clip id, once.
    pub fn with_clip(self, id: &str) -> Error {
        match self {
            e @ Error::InClip { .. } => e,
            e => Error::InClip {
                id: id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The error without clip context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InClip { source, .. } => source.root(),
            e => e,
        }
    }

    /// Bad or inconsistent inputs (exit code 2) as opposed to failures while
    /// processing valid inputs (exit code 3).
    pub fn is_input_error(&self) -> bool {
        use detector::DetectorError as D;
        match self.root() {
            Error::Amm(_) | Error::Format(_) | Error::UnmatchedSample(_) => true,
            Error::PhaseMismatch { .. } => true,
            Error::Phantom(phantom::PhantomError::InvalidSpec(_)) => true,
            Error::Detector(
                D::UnknownDetector(_)
                | D::DuplicateId(_)
                | D::BadParam { .. }
                | D::File { .. }
                | D::ShapeMismatch { .. },
            ) => true,
            Error::Metrics(metrics::MetricsError::Geometry(_)) => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_context_wraps_once() {
        let e = Error::from(amm::AmmError::EmptyVideo).with_clip("a").with_clip("b");
        assert_eq!(e.to_string(), "clip 'a': video contains no frames");
        assert!(e.is_input_error());
        let p = Error::from(detector::DetectorError::NoEdgesFound { found: 1 }).with_clip("c");
        assert!(!p.is_input_error());
    }
}
