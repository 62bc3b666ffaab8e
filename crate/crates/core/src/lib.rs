//! Dataset engineering for aerial object detection: tiling, ROI extraction
//! for text-to-image finetuning, and copy-paste composition of synthesized
//! instances with exact annotation output.

pub mod cli;
pub mod coco;
pub mod compositor;
pub mod dota;
pub mod error;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod pool;
pub mod report;
pub mod resample;
pub mod roi;
pub mod seed;
pub mod stats;
pub mod tiler;

pub use error::{Error, Result};
