//! Rendering and preprocessing: game state → RGB frame → 84×84 grayscale →
//! stacked observation tensor.

mod env;
mod image_ops;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;

pub use env::{repeat_and_observe, Environment, FrameStack, ObsTensor, RepeatOutcome};
pub(crate) use image_ops::to_u8;
pub use image_ops::{area_resample, grayscale, preprocess, GrayImage};
pub use render::{render_frame, Frame, Palette, PALETTE};

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("frame is {actual:?} pixels, expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid observation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("image export failed: {0}")]
    Image(#[from] image::ImageError),
}

/// Observation pipeline settings. Sizes are `(width, height)` in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    pub native_size: (usize, usize),
    pub net_size: (usize, usize),
    pub action_repeat: u32,
    pub frame_stack: usize,
    pub gray_weights: [f64; 3],
    /// Side of one grid cell in the native frame.
    pub cell_px: usize,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig {
            native_size: (104, 104),
            net_size: (84, 84),
            action_repeat: 5,
            frame_stack: 4,
            gray_weights: [0.299, 0.587, 0.114],
            cell_px: 8,
        }
    }
}

impl ObsConfig {
    /// Defaults with the native size derived from a `cols × rows` grid.
    pub fn for_grid(cols: usize, rows: usize, cell_px: usize) -> Self {
        ObsConfig {
            native_size: (cols * cell_px, rows * cell_px),
            cell_px,
            ..ObsConfig::default()
        }
    }

    /// Spatial rescale factor `net / native` per axis.
    pub fn delta(&self) -> (f64, f64) {
        (
            self.net_size.0 as f64 / self.native_size.0 as f64,
            self.net_size.1 as f64 / self.native_size.1 as f64,
        )
    }

    pub fn validate(&self) -> Result<(), ObsError> {
        let bad = |m: &str| Err(ObsError::InvalidConfig(m.to_string()));
        if self.native_size.0 == 0 || self.native_size.1 == 0 || self.net_size.0 == 0 || self.net_size.1 == 0 {
            return bad("sizes must be positive");
        }
        let (dx, dy) = self.delta();
        if !(dx < 1.0 && dy < 1.0) {
            return bad("net_size must be strictly smaller than native_size");
        }
        if self.action_repeat == 0 {
            return bad("action_repeat must be at least 1");
        }
        if self.frame_stack == 0 {
            return bad("frame_stack must be at least 1");
        }
        if self.cell_px == 0 {
            return bad("cell_px must be at least 1");
        }
        if self.gray_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("gray_weights must be finite and non-negative");
        }
        Ok(())
    }

    /// Checks that a `cols × rows` grid renders to exactly `native_size`.
    pub fn check_grid(&self, cols: usize, rows: usize) -> Result<(), ObsError> {
        let actual = (cols * self.cell_px, rows * self.cell_px);
        if actual != self.native_size {
            return Err(ObsError::DimensionMismatch {
                expected: self.native_size,
                actual,
            });
        }
        Ok(())
    }
}
