//! Importance-guided foveated rendering.
//!
//! An [`ImportanceMap`] holds one saliency value per render tile. Tiles at or
//! above the threshold are *foveal* and composited at full resolution like
//! [`render_tiled`](crate::rasterizer::render_tiled). The rest are *peripheral*:
//! composited on a lattice every `k` pixels, bilinearly upsampled and box
//! blurred inside the peripheral region only, so foveal pixels are
//! untouched.

mod importance;
mod provider;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use importance::{
    classify_tiles, heuristic_importance, smooth_map, TileClasses, CENTER_PRIOR_SIGMA,
};
pub use provider::{
    query_provider, HttpImportanceProvider, ImportanceOutcome, ImportanceProvider,
    ImportanceRequest, ImportanceSource, ProviderError, IMPORTANCE_PROVIDER_ENV,
};
pub use render::{cost_report, render_foveated, CostReport, FoveatedRender};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoveationError {
    #[error("importance map is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("invalid importance map: {0}")]
    InvalidMap(&'static str),
    #[error("invalid foveation config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Render(#[from] crate::rasterizer::RenderError),
}

/// Row-major grid of saliency values in [0,1], one per render tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl ImportanceMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self, FoveationError> {
        if rows == 0 || cols == 0 {
            return Err(FoveationError::InvalidMap(
                "dimensions must be at least 1x1",
            ));
        }
        if values.len() != rows * cols {
            return Err(FoveationError::InvalidMap(
                "value count does not match dimensions",
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FoveationError::InvalidMap("values must lie in [0,1]"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Result<Self, FoveationError> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        self.values.chunks(self.cols).map(<[f32]>::to_vec).collect()
    }

    fn expect_dims(&self, rows: usize, cols: usize) -> Result<(), FoveationError> {
        if (self.rows, self.cols) != (rows, cols) {
            return Err(FoveationError::DimMismatch {
                rows,
                cols,
                got_rows: self.rows,
                got_cols: self.cols,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoveationConfig {
    /// Tiles with importance at or above this are foveal.
    pub threshold: f32,
    /// Peripheral lattice spacing per axis, 2 or 4.
    pub peripheral_downsample: u32,
    /// Box blur radius in full-resolution pixels.
    pub blur_radius: u32,
    /// Weight of the previous map in temporal smoothing.
    pub temporal_beta: f32,
    pub enabled: bool,
}

impl Default for FoveationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            peripheral_downsample: 4,
            blur_radius: 4,
            temporal_beta: 0.7,
            enabled: true,
        }
    }
}

impl FoveationConfig {
    pub fn validate(&self) -> Result<(), FoveationError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(FoveationError::InvalidConfig("threshold must lie in [0,1]"));
        }
        if !matches!(self.peripheral_downsample, 2 | 4) {
            return Err(FoveationError::InvalidConfig(
                "peripheral_downsample must be 2 or 4",
            ));
        }
        if !(0.0..=1.0).contains(&self.temporal_beta) {
            return Err(FoveationError::InvalidConfig(
                "temporal_beta must lie in [0,1]",
            ));
        }
        if self.blur_radius > 64 {
            return Err(FoveationError::InvalidConfig(
                "blur_radius must be at most 64",
            ));
        }
        Ok(())
    }
}
