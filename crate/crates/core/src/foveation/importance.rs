use super::{FoveationError, ImportanceMap};
use crate::rasterizer::Framebuffer;

/// Width of the Gaussian center prior in normalized grid units.
pub const CENTER_PRIOR_SIGMA: f64 = 0.35;

fn luminance(c: [f32; 3]) -> f64 {
    0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64
}

/// Per-cell luminance standard deviation, cells partitioning the frame
/// proportionally (pixel x belongs to column `floor(x·cols / width)`).
fn cell_contrast(frame: &Framebuffer, rows: usize, cols: usize) -> Vec<f64> {
    let mut sum = vec![0f64; rows * cols];
    let mut sum_sq = vec![0f64; rows * cols];
    let mut count = vec![0u64; rows * cols];
    let (w, h) = (frame.width as usize, frame.height as usize);
    for y in 0..h {
        let r = y * rows / h;
        for x in 0..w {
            let c = x * cols / w;
            let l = luminance(frame.color[y * w + x]);
            let cell = r * cols + c;
            sum[cell] += l;
            sum_sq[cell] += l * l;
            count[cell] += 1;
        }
    }
    (0..rows * cols)
        .map(|cell| {
            if count[cell] == 0 {
                return 0.0;
            }
            let n = count[cell] as f64;
            let mean = sum[cell] / n;
            (sum_sq[cell] / n - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Deterministic fallback saliency: a centered Gaussian prior modulated by
/// local luminance contrast, normalized so the maximum is 1.
///
/// `value = prior · (0.5 + 0.5·contrast)`, where `prior = exp(−d²/(2σ²))`
/// with `d` the distance from the cell center to the grid center in unit
/// grid coordinates and `contrast` the per-cell luminance deviation divided
/// by its maximum over cells (1 everywhere without a frame or when flat).
pub fn heuristic_importance(
    frame: Option<&Framebuffer>,
    rows: usize,
    cols: usize,
) -> Result<ImportanceMap, FoveationError> {
    if rows == 0 || cols == 0 {
        return Err(FoveationError::InvalidMap(
            "dimensions must be at least 1x1",
        ));
    }
    let contrast = frame
        .filter(|f| f.width > 0 && f.height > 0)
        .map(|f| cell_contrast(f, rows, cols))
        .and_then(|c| {
            let max = c.iter().copied().fold(0.0, f64::max);
            (max > 0.0).then(|| c.into_iter().map(|v| v / max).collect::<Vec<_>>())
        });
    let two_sigma_sq = 2.0 * CENTER_PRIOR_SIGMA * CENTER_PRIOR_SIGMA;
    let raw: Vec<f64> = (0..rows * cols)
        .map(|cell| {
            let (r, c) = (cell / cols, cell % cols);
            let dy = (r as f64 + 0.5) / rows as f64 - 0.5;
            let dx = (c as f64 + 0.5) / cols as f64 - 0.5;
            let prior = (-(dx * dx + dy * dy) / two_sigma_sq).exp();
            let k = contrast.as_ref().map_or(1.0, |k| k[cell]);
            prior * (0.5 + 0.5 * k)
        })
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    ImportanceMap::new(
        rows,
        cols,
        raw.into_iter()
            .map(|v| (v / max).clamp(0.0, 1.0) as f32)
            .collect(),
    )
}

/// Exponential smoothing `β·previous + (1−β)·current`.
pub fn smooth_map(
    previous: &ImportanceMap,
    current: &ImportanceMap,
    beta: f32,
) -> Result<ImportanceMap, FoveationError> {
    current.expect_dims(previous.rows, previous.cols)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(FoveationError::InvalidConfig(
            "temporal_beta must lie in [0,1]",
        ));
    }
    let values = previous
        .values
        .iter()
        .zip(&current.values)
        .map(|(&p, &c)| (beta * p + (1.0 - beta) * c).clamp(0.0, 1.0))
        .collect();
    ImportanceMap::new(previous.rows, previous.cols, values)
}

/// Foveal/peripheral class per tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileClasses {
    pub rows: usize,
    pub cols: usize,
    pub foveal: Vec<bool>,
}

impl TileClasses {
    pub fn all_foveal(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            foveal: vec![true; rows * cols],
        }
    }

    pub fn foveal_count(&self) -> usize {
        self.foveal.iter().filter(|&&f| f).count()
    }

    pub fn foveal_fraction(&self) -> f64 {
        self.foveal_count() as f64 / self.foveal.len() as f64
    }
}

/// A tile is foveal iff its value is at least `threshold`. When nothing
/// qualifies, the first maximal tile in row-major order becomes foveal.
pub fn classify_tiles(map: &ImportanceMap, threshold: f32) -> TileClasses {
    let mut foveal: Vec<bool> = map.values.iter().map(|&v| v >= threshold).collect();
    if !foveal.contains(&true) {
        let mut best = 0;
        for (i, &v) in map.values.iter().enumerate() {
            if v > map.values[best] {
                best = i;
            }
        }
        foveal[best] = true;
    }
    TileClasses {
        rows: map.rows,
        cols: map.cols,
        foveal,
    }
}
