//! Detector contract shared by patch training (objectness gradient) and
//! evaluation (detections).

mod bridge;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{BBox, GradientRaster, ImageBuffer};

pub use bridge::{
    bridge_detect, encode_error, encode_request, encode_response, parse_response, run_stub_server,
    BridgeClient, BridgeConfig, BridgeDetector, BridgeError, CannedReplies, PROTOCOL_VERSION,
};
pub use toy::{
    toy_detect, toy_max_objectness_grad, toy_window_scores, ToyDetector, ToyDetectorSpec,
    TEMPLATE_SIZE,
};

pub const PERSON: &str = "person";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f64,
    pub class_label: String,
}

impl Detection {
    pub fn person(bbox: BBox, objectness: f64) -> Self {
        Self {
            bbox,
            objectness,
            class_label: PERSON.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub eval: bool,
    pub grad: bool,
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("image {width}x{height} is smaller than the {size}x{size} detector window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        size: usize,
    },
    #[error("detector does not provide objectness gradients (evaluation only)")]
    NotGradCapable,
    #[error("invalid toy detector parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

pub trait Detector: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Runs detection on every image, preserving order.
    fn detect_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<Vec<Detection>>, DetectorError>;

    /// Same as [`Detector::detect_batch`], with a stable name per image for
    /// detectors that exchange images as files.
    fn detect_batch_named(
        &self,
        names: &[String],
        images: &[&ImageBuffer],
    ) -> Result<Vec<Vec<Detection>>, DetectorError> {
        debug_assert_eq!(names.len(), images.len());
        self.detect_batch(images)
    }

    fn detect(&self, image: &ImageBuffer) -> Result<Vec<Detection>, DetectorError> {
        Ok(self.detect_batch(&[image])?.pop().unwrap_or_default())
    }

    /// Maximum objectness over the image and its gradient with respect to every
    /// channel value.
    fn max_objectness_grad(
        &self,
        _image: &ImageBuffer,
    ) -> Result<(f64, GradientRaster), DetectorError> {
        Err(DetectorError::NotGradCapable)
    }
}
