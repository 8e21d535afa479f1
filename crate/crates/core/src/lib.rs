//! Non-learned machinery for one-anchor oriented object detection.
//!
//! The crate covers exact rotated-box geometry, the anchor offset codec,
//! matching-degree label assignment, matching-sensitive losses, forward
//! evaluation of the polarization attention block, rotated NMS and
//! VOC-style average precision, plus the dump and annotation formats that
//! glue those pieces together for batch use from the `cfc` binary.

pub mod anchors;
pub mod assignment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ingest;
pub mod losses;
pub mod pam;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{ConvexPolygon, Point, RotatedBox};
