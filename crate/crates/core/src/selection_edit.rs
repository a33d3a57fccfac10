//! Splat selection by screen-space and world-space shapes, and undoable edits.
//!
//! Screen shapes test the projected splat mean in framebuffer pixels; splats
//! culled by projection are never hit. Polygons and lassos use the even-odd
//! rule.

use std::collections::VecDeque;

use bitvec::prelude::*;
use glam::{DVec3, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rasterizer::{Projector, RenderConfig};
use crate::splat_model::{Splat, SplatCloud};
use crate::trajectory::CameraPose;

pub const UNDO_DEPTH: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("mask was built for cloud version {mask}, cloud is at version {cloud}")]
    StaleMask { mask: u64, cloud: u64 },
    #[error("degenerate shape: {0}")]
    DegenerateShape(&'static str),
    #[error("selection is empty")]
    EmptySelection,
    #[error("translation must be finite")]
    InvalidDelta,
    #[error("nothing to undo")]
    EmptyHistory,
    #[error("undo record targets version {record}, cloud is at version {cloud}")]
    HistoryMismatch { record: u64, cloud: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionShape {
    /// Inclusive pixel rectangle spanned by two corners.
    Rect {
        p0: [f64; 2],
        p1: [f64; 2],
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    /// Freehand outline, implicitly closed.
    Lasso {
        vertices: Vec<[f64; 2]>,
    },
    /// Polyline stroke with a pixel radius.
    Brush {
        stroke: Vec<[f64; 2]>,
        radius: f64,
    },
    /// World-space ball.
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    #[default]
    Replace,
    Add,
    Subtract,
}

/// A bitset over splat indices tied to one cloud version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    bits: BitVec,
    cloud_version: u64,
}

impl SelectionMask {
    pub fn empty_for(cloud: &SplatCloud) -> Self {
        Self {
            bits: bitvec![0; cloud.len()],
            cloud_version: cloud.version(),
        }
    }

    /// Indices past the end of the cloud are ignored.
    pub fn from_indices(cloud: &SplatCloud, indices: &[usize]) -> Self {
        let mut mask = Self::empty_for(cloud);
        for &i in indices {
            if i < mask.bits.len() {
                mask.bits.set(i, true);
            }
        }
        mask
    }

    pub fn cloud_version(&self) -> u64 {
        self.cloud_version
    }

    /// Number of splats the mask covers.
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits.get(index).is_some_and(|b| *b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits.iter_ones().collect()
    }

    fn check(&self, cloud: &SplatCloud) -> Result<(), SelectionError> {
        if self.cloud_version != cloud.version() || self.bits.len() != cloud.len() {
            return Err(SelectionError::StaleMask {
                mask: self.cloud_version,
                cloud: cloud.version(),
            });
        }
        Ok(())
    }
}

/// Even-odd point-in-polygon test by ray crossing; the polygon is closed
/// implicitly.
pub fn point_in_polygon(p: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let [px, py] = p;
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Shortest distance from `p` to an open polyline. A single-point stroke is
/// a dot.
pub fn distance_to_polyline(p: [f64; 2], stroke: &[[f64; 2]]) -> f64 {
    match stroke {
        [] => f64::INFINITY,
        [only] => distance_to_segment(p, *only, *only),
        _ => stroke
            .windows(2)
            .map(|w| distance_to_segment(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

fn finite2(points: &[[f64; 2]]) -> bool {
    points.iter().all(|p| p[0].is_finite() && p[1].is_finite())
}

impl SelectionShape {
    pub fn validate(&self) -> Result<(), SelectionError> {
        use SelectionError::DegenerateShape as D;
        match self {
            SelectionShape::Rect { p0, p1 } if !finite2(&[*p0, *p1]) => {
                Err(D("rect corners must be finite"))
            }
            SelectionShape::Polygon { vertices } | SelectionShape::Lasso { vertices } => {
                if vertices.len() < 3 {
                    Err(D("polygon needs at least 3 vertices"))
                } else if !finite2(vertices) {
                    Err(D("polygon vertices must be finite"))
                } else {
                    Ok(())
                }
            }
            SelectionShape::Brush { stroke, radius } => {
                if stroke.is_empty() || !finite2(stroke) {
                    Err(D("brush stroke needs at least one finite point"))
                } else if !(radius.is_finite() && *radius > 0.0) {
                    Err(D("brush radius must be positive"))
                } else {
                    Ok(())
                }
            }
            SelectionShape::Sphere { center, radius } => {
                if !center.iter().all(|c| c.is_finite()) {
                    Err(D("sphere center must be finite"))
                } else if !(radius.is_finite() && *radius > 0.0) {
                    Err(D("sphere radius must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn hits_screen(&self, p: [f64; 2]) -> bool {
        match self {
            SelectionShape::Rect { p0, p1 } => {
                let (x0, x1) = (p0[0].min(p1[0]), p0[0].max(p1[0]));
                let (y0, y1) = (p0[1].min(p1[1]), p0[1].max(p1[1]));
                (x0..=x1).contains(&p[0]) && (y0..=y1).contains(&p[1])
            }
            SelectionShape::Polygon { vertices } | SelectionShape::Lasso { vertices } => {
                point_in_polygon(p, vertices)
            }
            SelectionShape::Brush { stroke, radius } => distance_to_polyline(p, stroke) <= *radius,
            SelectionShape::Sphere { .. } => false,
        }
    }
}

/// Splat indices hit by `shape` as seen from `pose`.
pub fn hit_test(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
    shape: &SelectionShape,
) -> Result<BitVec, SelectionError> {
    shape.validate()?;
    let mut hits = bitvec![0; cloud.len()];
    if let SelectionShape::Sphere { center, radius } = shape {
        let center = DVec3::from_array(*center);
        for (i, s) in cloud.splats().iter().enumerate() {
            if s.position.as_dvec3().distance(center) <= *radius {
                hits.set(i, true);
            }
        }
        return Ok(hits);
    }
    let projector = Projector::new(pose, cfg);
    for (i, s) in cloud.splats().iter().enumerate() {
        if projector.project(i as u32, s).is_none() {
            continue;
        }
        let p = projector.camera_to_pixel(projector.to_camera(s.position.as_dvec3()));
        if shape.hits_screen(p) {
            hits.set(i, true);
        }
    }
    Ok(hits)
}

/// Combines the hits of `shape` with `existing` under `mode`. A replace
/// ignores `existing` entirely.
pub fn select(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
    shape: &SelectionShape,
    mode: SelectMode,
    existing: &SelectionMask,
) -> Result<SelectionMask, SelectionError> {
    if mode != SelectMode::Replace {
        existing.check(cloud)?;
    }
    let hits = hit_test(cloud, pose, cfg, shape)?;
    let bits = match mode {
        SelectMode::Replace => hits,
        SelectMode::Add => existing.bits.clone() | hits,
        SelectMode::Subtract => existing.bits.clone() & !hits,
    };
    Ok(SelectionMask {
        bits,
        cloud_version: cloud.version(),
    })
}

/// World position for a sphere selection clicked at pixel `p`: the nearest
/// splat whose footprint covers `p`, else the splat whose projected mean is
/// closest to `p` on screen.
pub fn pick_point(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
    p: [f64; 2],
) -> Option<DVec3> {
    let projector = Projector::new(pose, cfg);
    let cutoff_sq = (cfg.sigma_cutoff as f64).powi(2);
    let mut covering: Option<(f32, usize)> = None;
    let mut nearest: Option<(f64, usize)> = None;
    for (i, s) in cloud.splats().iter().enumerate() {
        let Some(ps) = projector.project(i as u32, s) else {
            continue;
        };
        let dx = p[0] - ps.mean[0] as f64;
        let dy = p[1] - ps.mean[1] as f64;
        let [a, b, c] = ps.conic.map(f64::from);
        if a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= cutoff_sq
            && covering.is_none_or(|(d, _)| ps.depth < d)
        {
            covering = Some((ps.depth, i));
        }
        let dist = dx * dx + dy * dy;
        if nearest.is_none_or(|(d, _)| dist < d) {
            nearest = Some((dist, i));
        }
    }
    let index = covering.map(|(_, i)| i).or(nearest.map(|(_, i)| i))?;
    Some(cloud.splats()[index].position.as_dvec3())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Delete,
    Translate { delta: [f32; 3] },
}

#[derive(Debug, Clone, PartialEq)]
enum Inverse {
    /// Removed splats with their original indices, ascending.
    Reinsert(Vec<(usize, Splat)>),
    /// Original positions of the moved splats.
    Restore(Vec<(usize, Vec3)>),
}

/// Everything needed to reverse one edit exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct UndoRecord {
    inverse: Inverse,
    /// Version of the cloud the edit produced.
    produced_version: u64,
}

impl UndoRecord {
    pub fn produced_version(&self) -> u64 {
        self.produced_version
    }

    /// Reverses the edit on the cloud it produced.
    pub fn revert(&self, cloud: &SplatCloud) -> Result<SplatCloud, SelectionError> {
        if cloud.version() != self.produced_version {
            return Err(SelectionError::HistoryMismatch {
                record: self.produced_version,
                cloud: cloud.version(),
            });
        }
        let splats = match &self.inverse {
            Inverse::Reinsert(removed) => {
                let mut out = Vec::with_capacity(cloud.len() + removed.len());
                let mut survivors = cloud.splats().iter();
                let mut removed = removed.iter().peekable();
                while out.len() < cloud.len() + self.removed_count() {
                    match removed.peek() {
                        Some((at, _)) if *at == out.len() => {
                            out.push(removed.next().expect("peeked").1.clone())
                        }
                        _ => out.push(survivors.next().expect("survivor count matches").clone()),
                    }
                }
                out
            }
            Inverse::Restore(moved) => {
                let mut out = cloud.splats().to_vec();
                for (i, p) in moved {
                    out[*i].position = *p;
                }
                out
            }
        };
        Ok(cloud.derive(splats))
    }

    fn removed_count(&self) -> usize {
        match &self.inverse {
            Inverse::Reinsert(r) => r.len(),
            Inverse::Restore(_) => 0,
        }
    }
}

/// Applies `op` to the masked splats, returning the new cloud and its undo
/// record. The input cloud is left untouched.
pub fn apply_edit(
    cloud: &SplatCloud,
    mask: &SelectionMask,
    op: EditOp,
) -> Result<(SplatCloud, UndoRecord), SelectionError> {
    mask.check(cloud)?;
    if mask.is_empty() {
        return Err(SelectionError::EmptySelection);
    }
    let (splats, inverse) = match op {
        EditOp::Delete => {
            let mut kept = Vec::with_capacity(cloud.len() - mask.count());
            let mut removed = Vec::with_capacity(mask.count());
            for (i, s) in cloud.splats().iter().enumerate() {
                if mask.contains(i) {
                    removed.push((i, s.clone()));
                } else {
                    kept.push(s.clone());
                }
            }
            (kept, Inverse::Reinsert(removed))
        }
        EditOp::Translate { delta } => {
            let delta = Vec3::from_array(delta);
            if !delta.is_finite() {
                return Err(SelectionError::InvalidDelta);
            }
            let mut out = cloud.splats().to_vec();
            let mut moved = Vec::with_capacity(mask.count());
            for i in mask.bits.iter_ones() {
                moved.push((i, out[i].position));
                out[i].position += delta;
                if !out[i].position.is_finite() {
                    return Err(SelectionError::InvalidDelta);
                }
            }
            (out, Inverse::Restore(moved))
        }
    };
    let edited = cloud.derive(splats);
    let record = UndoRecord {
        inverse,
        produced_version: edited.version(),
    };
    Ok((edited, record))
}

/// Bounded stack of undo records; the oldest is dropped past the depth limit.
#[derive(Debug, Clone)]
pub struct EditHistory {
    records: VecDeque<UndoRecord>,
    depth: usize,
}

impl Default for EditHistory {
    fn default() -> Self {
        Self::new(UNDO_DEPTH)
    }
}

impl EditHistory {
    pub fn new(depth: usize) -> Self {
        Self {
            records: VecDeque::new(),
            depth: depth.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn push(&mut self, record: UndoRecord) {
        if self.records.len() == self.depth {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    /// Applies the edit and records its inverse.
    pub fn apply(
        &mut self,
        cloud: &SplatCloud,
        mask: &SelectionMask,
        op: EditOp,
    ) -> Result<SplatCloud, SelectionError> {
        let (edited, record) = apply_edit(cloud, mask, op)?;
        self.push(record);
        Ok(edited)
    }

    /// Reverses the most recent edit. On error the history is unchanged.
    pub fn undo(&mut self, cloud: &SplatCloud) -> Result<SplatCloud, SelectionError> {
        let record = self.records.back().ok_or(SelectionError::EmptyHistory)?;
        let restored = record.revert(cloud)?;
        self.records.pop_back();
        // The restored cloud has the content the previous edit produced, under a new version.
        if let Some(previous) = self.records.back_mut() {
            previous.produced_version = restored.version();
        }
        Ok(restored)
    }
}
