//! Level-set lesion segmentation with per-point adaptive local windows.
//!
//! A user marks the lesion's long axis with two points. The contour starts as
//! the circle on that diameter and evolves under a region-based energy whose
//! statistics are gathered in a window around each contour point. Window
//! extents come from the lesion's size, GLCM texture of the region of
//! interest, and how far the energy has dropped since the first iteration.

pub mod energy;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod levelset;
pub mod phantom;
pub mod segment;
pub mod texture;
pub mod window;

pub use energy::EnergyModelKind;
pub use error::{Error, Result};
pub use image::{GrayImage, Point, Roi};
pub use levelset::DistanceMap;
pub use segment::{segment, SegConfig, SegResult, SeedAxis, StopReason, WindowMode};
