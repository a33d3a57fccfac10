//! CPU Gaussian-splat rasterizer.
//!
//! Splats are projected to 2D Gaussians, globally sorted front to back and
//! alpha-composited with early termination once the transmittance drops
//! under a floor. [`render_reference`] evaluates every splat at every pixel
//! and serves as the oracle for the tile-binned, multithreaded
//! [`render_tiled`]. Both paths share the per-pixel compositing routine, so
//! for identical inputs they produce bit-identical pixels.

mod project;

use rayon::prelude::*;
use thiserror::Error;

use crate::splat_model::SplatCloud;
use crate::trajectory::CameraPose;

pub use project::{project, ProjectedSplat, Projector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    /// Linear RGB.
    pub background: [f32; 3],
    /// Footprint radius in standard deviations.
    pub sigma_cutoff: f32,
    pub alpha_min: f32,
    pub alpha_max: f32,
    /// Added to the screen covariance diagonal, px².
    pub dilation: f32,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_floor: f32,
}

impl RenderConfig {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            tile_size: 16,
            background: [0.0; 3],
            sigma_cutoff: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            dilation: 0.3,
            transmittance_floor: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 || self.tile_size == 0 {
            return Err(RenderError::InvalidConfig(
                "width, height and tile_size must be positive",
            ));
        }
        if self.width > u16::MAX as u32 || self.height > u16::MAX as u32 {
            return Err(RenderError::InvalidConfig("dimensions exceed 65535"));
        }
        if !(0.0 < self.alpha_min && self.alpha_min < self.alpha_max && self.alpha_max < 1.0) {
            return Err(RenderError::InvalidConfig(
                "require 0 < alpha_min < alpha_max < 1",
            ));
        }
        if !(self.sigma_cutoff > 0.0 && self.dilation >= 0.0 && self.transmittance_floor >= 0.0) {
            return Err(RenderError::InvalidConfig(
                "cutoff must be positive, dilation and floor non-negative",
            ));
        }
        if self.background.iter().any(|c| !c.is_finite()) {
            return Err(RenderError::InvalidConfig("background must be finite"));
        }
        Ok(())
    }

    /// Tile grid as (columns, rows).
    pub fn tile_grid(&self) -> (usize, usize) {
        (
            self.width.div_ceil(self.tile_size) as usize,
            self.height.div_ceil(self.tile_size) as usize,
        )
    }

    pub fn tile_rect(&self, tile: usize) -> PixelRect {
        let (cols, _) = self.tile_grid();
        let ts = self.tile_size;
        let (tx, ty) = ((tile % cols) as u32, (tile / cols) as u32);
        PixelRect {
            x0: tx * ts,
            y0: ty * ts,
            x1: ((tx + 1) * ts).min(self.width),
            y1: ((ty + 1) * ts).min(self.height),
        }
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    /// Pixels with index in `[lo, hi]` on each axis, clamped to the viewport.
    fn covering(lo_x: f64, hi_x: f64, lo_y: f64, hi_y: f64, width: f64, height: f64) -> Self {
        let clamp = |v: f64, max: f64| v.clamp(0.0, max) as u32;
        Self {
            x0: clamp(lo_x.floor(), width),
            y0: clamp(lo_y.floor(), height),
            x1: clamp(hi_x.floor() + 1.0, width),
            y1: clamp(hi_y.floor() + 1.0, height),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn overlaps(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
        }
    }
}

/// Linear RGB image with per-pixel remaining transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f32; 3]>,
    pub transmittance: Vec<f32>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32, background: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            color: vec![background; n],
            transmittance: vec![1.0; n],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        self.color[self.offset(x, y)]
    }

    pub fn offset(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn max_abs_diff(&self, other: &Framebuffer) -> f32 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.color
            .iter()
            .zip(&other.color)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f32::max)
    }
}

/// Front-to-back permutation: ascending depth, ties by source splat index.
pub fn sort_front_to_back(projected: &[ProjectedSplat]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_unstable_by(|&i, &j| {
        let (a, b) = (&projected[i as usize], &projected[j as usize]);
        a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index))
    });
    order
}

/// Per-tile lists of projected-splat positions in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub cols: usize,
    pub rows: usize,
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.cols * self.rows
    }

    /// Positions into the projected list, front to back.
    pub fn tile(&self, tile: usize) -> &[u32] {
        &self.items[self.offsets[tile]..self.offsets[tile + 1]]
    }
}

fn tile_span(rect: &PixelRect, ts: u32) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (
        (rect.x0 / ts) as usize..(rect.x1 - 1) as usize / ts as usize + 1,
        (rect.y0 / ts) as usize..(rect.y1 - 1) as usize / ts as usize + 1,
    )
}

/// Assigns each projected splat to every tile its pixel rect overlaps,
/// walking `order` so each tile list inherits the global front-to-back order.
pub fn bin_to_tiles(projected: &[ProjectedSplat], order: &[u32], cfg: &RenderConfig) -> TileBins {
    let (cols, rows) = cfg.tile_grid();
    let ts = cfg.tile_size;
    let mut counts = vec![0usize; cols * rows + 1];
    for &i in order {
        let rect = &projected[i as usize].rect;
        if rect.is_empty() {
            continue;
        }
        let (xs, ys) = tile_span(rect, ts);
        for ty in ys {
            for tx in xs.clone() {
                counts[ty * cols + tx + 1] += 1;
            }
        }
    }
    for t in 1..counts.len() {
        counts[t] += counts[t - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut items = vec![0u32; offsets[cols * rows]];
    for &i in order {
        let rect = &projected[i as usize].rect;
        if rect.is_empty() {
            continue;
        }
        let (xs, ys) = tile_span(rect, ts);
        for ty in ys {
            for tx in xs.clone() {
                let t = ty * cols + tx;
                items[cursor[t]] = i;
                cursor[t] += 1;
            }
        }
    }
    TileBins {
        cols,
        rows,
        offsets,
        items,
    }
}

/// Projection, global sort and tile bins for one (cloud, pose, config).
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub projected: Vec<ProjectedSplat>,
    pub order: Vec<u32>,
    pub bins: TileBins,
}

impl PreparedFrame {
    pub fn new(cloud: &SplatCloud, pose: &CameraPose, cfg: &RenderConfig) -> Self {
        let projector = Projector::new(pose, cfg);
        let projected: Vec<ProjectedSplat> = cloud
            .splats()
            .par_iter()
            .enumerate()
            .filter_map(|(i, s)| projector.project(i as u32, s))
            .collect();
        let order = sort_front_to_back(&projected);
        let bins = bin_to_tiles(&projected, &order, cfg);
        Self {
            projected,
            order,
            bins,
        }
    }
}

/// Result of compositing one pixel sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub color: [f32; 3],
    pub transmittance: f32,
    pub evaluations: u64,
}

/// The fields compositing reads, packed so a tile's list is one contiguous run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShadeSplat {
    mean: [f32; 2],
    conic: [f32; 3],
    opacity: f32,
    color: [f32; 3],
}

/// Copies the splats named by `list` (positions into `projected`) into `out`
/// in list order.
pub(crate) fn gather(projected: &[ProjectedSplat], list: &[u32], out: &mut Vec<ShadeSplat>) {
    out.clear();
    out.extend(list.iter().map(|&i| {
        let s = &projected[i as usize];
        ShadeSplat {
            mean: s.mean,
            conic: s.conic,
            opacity: s.opacity,
            color: s.color,
        }
    }));
}

/// Front-to-back compositing of `splats` at the center of pixel (x, y).
/// Shared by every render path.
#[inline]
pub(crate) fn composite_pixel(x: u32, y: u32, splats: &[ShadeSplat], cfg: &RenderConfig) -> Sample {
    let px = x as f32 + 0.5;
    let py = y as f32 + 0.5;
    let cutoff_sq = cfg.sigma_cutoff * cfg.sigma_cutoff;
    let mut color = [0f32; 3];
    let mut t = 1f32;
    let mut evaluations = 0u64;
    for s in splats {
        evaluations += 1;
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let [a, b, c] = s.conic;
        let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if q > cutoff_sq {
            continue;
        }
        let alpha = (s.opacity * (-0.5 * q).exp()).min(cfg.alpha_max);
        if alpha < cfg.alpha_min {
            continue;
        }
        let w = t * alpha;
        color[0] += w * s.color[0];
        color[1] += w * s.color[1];
        color[2] += w * s.color[2];
        t *= 1.0 - alpha;
        if t < cfg.transmittance_floor {
            break;
        }
    }
    for (c, b) in color.iter_mut().zip(cfg.background) {
        *c += t * b;
    }
    Sample {
        color,
        transmittance: t,
        evaluations,
    }
}

/// Counters gathered while rendering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderCounters {
    /// Pixel positions that were composited.
    pub composite_samples: u64,
    /// Splat evaluations across all composited samples.
    pub splat_evaluations: u64,
}

impl std::ops::Add for RenderCounters {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            composite_samples: self.composite_samples + o.composite_samples,
            splat_evaluations: self.splat_evaluations + o.splat_evaluations,
        }
    }
}

/// Brute force: every pixel walks every projected splat front to back.
pub fn render_reference(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<Framebuffer, RenderError> {
    cfg.validate()?;
    let projector = Projector::new(pose, cfg);
    let projected: Vec<ProjectedSplat> = cloud
        .splats()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| projector.project(i as u32, s))
        .collect();
    let order = sort_front_to_back(&projected);
    let mut splats = Vec::new();
    gather(&projected, &order, &mut splats);
    let mut fb = Framebuffer::new(cfg.width, cfg.height, cfg.background);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let sample = composite_pixel(x, y, &splats, cfg);
            let o = fb.offset(x, y);
            fb.color[o] = sample.color;
            fb.transmittance[o] = sample.transmittance;
        }
    }
    Ok(fb)
}

/// Tile-binned render, parallel over rows of tiles.
pub fn render_tiled(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<Framebuffer, RenderError> {
    cfg.validate()?;
    let prepared = PreparedFrame::new(cloud, pose, cfg);
    Ok(render_prepared(&prepared, cfg, |_| true).0)
}

/// Composites the tiles selected by `include` at full resolution. Pixels of
/// skipped tiles keep the background with transmittance 1.
pub(crate) fn render_prepared(
    prepared: &PreparedFrame,
    cfg: &RenderConfig,
    include: impl Fn(usize) -> bool + Sync,
) -> (Framebuffer, RenderCounters) {
    let mut fb = Framebuffer::new(cfg.width, cfg.height, cfg.background);
    let width = cfg.width as usize;
    let band = width * cfg.tile_size as usize;
    let (cols, _) = cfg.tile_grid();
    let counters = fb
        .color
        .par_chunks_mut(band)
        .zip(fb.transmittance.par_chunks_mut(band))
        .enumerate()
        .map_init(Vec::new, |splats, (tile_row, (color, trans))| {
            let mut counters = RenderCounters::default();
            for tile_col in 0..cols {
                let tile = tile_row * cols + tile_col;
                if !include(tile) {
                    continue;
                }
                let rect = cfg.tile_rect(tile);
                gather(&prepared.projected, prepared.bins.tile(tile), splats);
                for y in rect.y0..rect.y1 {
                    let row = (y - rect.y0) as usize * width;
                    for x in rect.x0..rect.x1 {
                        let sample = composite_pixel(x, y, splats, cfg);
                        color[row + x as usize] = sample.color;
                        trans[row + x as usize] = sample.transmittance;
                        counters.composite_samples += 1;
                        counters.splat_evaluations += sample.evaluations;
                    }
                }
            }
            counters
        })
        .reduce(RenderCounters::default, |a, b| a + b);
    (fb, counters)
}
