use std::cell::RefCell;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::{classify_tiles, FoveationConfig, FoveationError, ImportanceMap, TileClasses};
use crate::rasterizer::{
    composite_pixel, gather, render_prepared, Framebuffer, PreparedFrame, RenderConfig,
    RenderCounters,
};
use crate::splat_model::SplatCloud;
use crate::trajectory::CameraPose;

/// A foveated frame with the tile classification and work counters.
#[derive(Debug, Clone)]
pub struct FoveatedRender {
    pub frame: Framebuffer,
    pub classes: TileClasses,
    pub counters: RenderCounters,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub foveal_fraction: f64,
    pub composite_samples: u64,
    pub splat_evaluations: u64,
    pub elapsed: Duration,
}

pub fn cost_report(render: &FoveatedRender) -> CostReport {
    CostReport {
        foveal_fraction: render.classes.foveal_fraction(),
        composite_samples: render.counters.composite_samples,
        splat_evaluations: render.counters.splat_evaluations,
        elapsed: render.elapsed,
    }
}

/// Renders with full precision in foveal tiles and a subsampled, blurred
/// approximation elsewhere. With foveation disabled or every tile foveal the
/// frame equals [`render_tiled`](crate::rasterizer::render_tiled) bit for bit.
pub fn render_foveated(
    cloud: &SplatCloud,
    pose: &CameraPose,
    map: &ImportanceMap,
    cfg: &RenderConfig,
    fcfg: &FoveationConfig,
) -> Result<FoveatedRender, FoveationError> {
    let start = Instant::now();
    cfg.validate()?;
    fcfg.validate()?;
    let (cols, rows) = cfg.tile_grid();
    map.expect_dims(rows, cols)?;
    let classes = if fcfg.enabled {
        classify_tiles(map, fcfg.threshold)
    } else {
        TileClasses::all_foveal(rows, cols)
    };

    let prepared = PreparedFrame::new(cloud, pose, cfg);
    let (mut frame, mut counters) = render_prepared(&prepared, cfg, |t| classes.foveal[t]);
    if classes.foveal_count() < classes.foveal.len() {
        counters = counters + shade_periphery(&prepared, cfg, fcfg, &classes, &mut frame);
    }
    Ok(FoveatedRender {
        frame,
        classes,
        counters,
        elapsed: start.elapsed(),
    })
}

/// Sample positions along one axis: pixel `k·i + k/2`, clamped to the image.
struct Lattice {
    step: u32,
    xs: Vec<u32>,
    ys: Vec<u32>,
}

impl Lattice {
    fn new(width: u32, height: u32, step: u32) -> Self {
        let axis = |len: u32| {
            (0..len.div_ceil(step))
                .map(|i| (i * step + step / 2).min(len - 1))
                .collect()
        };
        Self {
            step,
            xs: axis(width),
            ys: axis(height),
        }
    }

    /// Bracketing lattice indices and the weight of the upper one for pixel `p`.
    fn bracket(&self, positions: &[u32], p: u32) -> (usize, usize, f32) {
        let last = positions.len() - 1;
        let i0 = (p.saturating_sub(self.step / 2) / self.step) as usize;
        let i0 = i0.min(last);
        let i1 = (i0 + 1).min(last);
        if i1 == i0 || p <= positions[i0] {
            return (i0, i0, 0.0);
        }
        let span = (positions[i1] - positions[i0]) as f32;
        let w = ((p - positions[i0]) as f32 / span).clamp(0.0, 1.0);
        (i0, i1, w)
    }
}

fn lerp3(a: [f32; 3], b: [f32; 3], w: f32) -> [f32; 3] {
    [
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ]
}

fn lerp1(a: f32, b: f32, w: f32) -> f32 {
    a + w * (b - a)
}

/// Fills every peripheral pixel of `frame`. Returns the counters of the
/// lattice samples that had to be composited.
fn shade_periphery(
    prepared: &PreparedFrame,
    cfg: &RenderConfig,
    fcfg: &FoveationConfig,
    classes: &TileClasses,
    frame: &mut Framebuffer,
) -> RenderCounters {
    let lattice = Lattice::new(cfg.width, cfg.height, fcfg.peripheral_downsample);
    let ts = cfg.tile_size;
    let tile_of = |x: u32, y: u32| (y / ts) as usize * classes.cols + (x / ts) as usize;

    // Lattice samples inside foveal tiles reuse the full-resolution pixel.
    let nx = lattice.xs.len();
    let rows: Vec<(Vec<[f32; 3]>, Vec<f32>, RenderCounters)> = lattice
        .ys
        .par_iter()
        .map_init(
            || (Vec::new(), usize::MAX),
            |(splats, gathered), &y| {
                let mut colors = Vec::with_capacity(nx);
                let mut trans = Vec::with_capacity(nx);
                let mut counters = RenderCounters::default();
                for &x in &lattice.xs {
                    let tile = tile_of(x, y);
                    if classes.foveal[tile] {
                        let o = frame.offset(x, y);
                        colors.push(frame.color[o]);
                        trans.push(frame.transmittance[o]);
                    } else {
                        if *gathered != tile {
                            gather(&prepared.projected, prepared.bins.tile(tile), splats);
                            *gathered = tile;
                        }
                        let s = composite_pixel(x, y, splats, cfg);
                        colors.push(s.color);
                        trans.push(s.transmittance);
                        counters.composite_samples += 1;
                        counters.splat_evaluations += s.evaluations;
                    }
                }
                (colors, trans, counters)
            },
        )
        .collect();
    let mut counters = RenderCounters::default();
    let mut lat_color = Vec::with_capacity(nx * lattice.ys.len());
    let mut lat_trans = Vec::with_capacity(nx * lattice.ys.len());
    for (c, t, k) in rows {
        lat_color.extend(c);
        lat_trans.extend(t);
        counters = counters + k;
    }

    let spans = PeripheralSpans::new(cfg, classes);
    let brackets: Vec<(usize, usize, f32)> = (0..cfg.width)
        .map(|x| lattice.bracket(&lattice.xs, x))
        .collect();
    let width = cfg.width as usize;
    frame
        .color
        .par_chunks_mut(width)
        .zip(frame.transmittance.par_chunks_mut(width))
        .enumerate()
        .for_each_init(Vec::new, |blend, (y, (color, trans))| {
            let runs = &spans.rows[y / ts as usize];
            if runs.is_empty() {
                return;
            }
            // Blend the two bracketing lattice rows once, then interpolate along x.
            let (j0, j1, wy) = lattice.bracket(&lattice.ys, y as u32);
            let (top, bottom) = (j0 * nx, j1 * nx);
            blend.clear();
            blend.extend((0..nx).map(|i| {
                let c = lerp3(lat_color[top + i], lat_color[bottom + i], wy);
                (c, lerp1(lat_trans[top + i], lat_trans[bottom + i], wy))
            }));
            for &(x0, x1) in runs {
                for x in x0..x1 {
                    let (i0, i1, wx) = brackets[x];
                    let (c0, t0) = blend[i0];
                    let (c1, t1) = blend[i1];
                    color[x] = lerp3(c0, c1, wx);
                    trans[x] = lerp1(t0, t1, wx).clamp(0.0, 1.0);
                }
            }
        });

    if fcfg.blur_radius > 0 {
        blur_periphery(frame, fcfg.blur_radius as usize, &spans);
    }
    counters
}

/// Maximal runs of peripheral pixels, which only change at tile boundaries:
/// x ranges per tile row and y ranges per tile column.
struct PeripheralSpans {
    tile_size: usize,
    rows: Vec<Vec<(usize, usize)>>,
    cols: Vec<Vec<(usize, usize)>>,
}

impl PeripheralSpans {
    fn new(cfg: &RenderConfig, classes: &TileClasses) -> Self {
        let ts = cfg.tile_size as usize;
        let (w, h) = (cfg.width as usize, cfg.height as usize);
        let runs = |n: usize, len: usize, peripheral: &dyn Fn(usize) -> bool| {
            let mut out: Vec<(usize, usize)> = Vec::new();
            for i in (0..n).filter(|&i| peripheral(i)) {
                let (lo, hi) = (i * ts, ((i + 1) * ts).min(len));
                match out.last_mut() {
                    Some(last) if last.1 == lo => last.1 = hi,
                    _ => out.push((lo, hi)),
                }
            }
            out
        };
        let cols = classes.cols;
        Self {
            tile_size: ts,
            rows: (0..classes.rows)
                .map(|r| runs(cols, w, &|c| !classes.foveal[r * cols + c]))
                .collect(),
            cols: (0..cols)
                .map(|c| runs(classes.rows, h, &|r| !classes.foveal[r * cols + c]))
                .collect(),
        }
    }
}

/// Box-filters `src` into `dst` with edge replication. Sums run in f64 so a
/// constant run stays exactly constant.
fn box_blur_line(src: &[[f32; 3]], dst: &mut [[f32; 3]], radius: usize) {
    let n = src.len();
    if n < 2 {
        dst.copy_from_slice(src);
        return;
    }
    let last = n - 1;
    let mut sum = [0f64; 3];
    add3(&mut sum, src[0], radius as f64);
    for i in 0..=radius {
        add3(&mut sum, src[i.min(last)], 1.0);
    }
    let inv = 1.0 / (2 * radius + 1) as f64;
    for (i, out) in dst.iter_mut().enumerate() {
        *out = scale3(&sum, inv);
        add3(&mut sum, src[(i + radius + 1).min(last)], 1.0);
        add3(&mut sum, src[i.saturating_sub(radius)], -1.0);
    }
}

fn add3(sum: &mut [f64; 3], v: [f32; 3], weight: f64) {
    for k in 0..3 {
        sum[k] += weight * v[k] as f64;
    }
}

fn scale3(sum: &[f64; 3], inv: f64) -> [f32; 3] {
    [
        (sum[0] * inv) as f32,
        (sum[1] * inv) as f32,
        (sum[2] * inv) as f32,
    ]
}

/// Separable box blur over the peripheral spans; each run is filtered
/// independently along rows, then along columns.
fn blur_periphery(frame: &mut Framebuffer, radius: usize, spans: &PeripheralSpans) {
    thread_local! {
        static ROWS_DONE: RefCell<Vec<[f32; 3]>> = const { RefCell::new(Vec::new()) };
    }
    ROWS_DONE.with_borrow_mut(|scratch| {
        scratch.resize(frame.color.len(), [0.0; 3]);
        blur_with_scratch(frame, radius, spans, scratch);
    });
}

fn blur_with_scratch(
    frame: &mut Framebuffer,
    radius: usize,
    spans: &PeripheralSpans,
    rows_done: &mut [[f32; 3]],
) {
    let (w, ts) = (frame.width as usize, spans.tile_size);
    rows_done
        .par_chunks_mut(w)
        .zip(frame.color.par_chunks(w))
        .enumerate()
        .for_each(|(y, (dst, src))| {
            for &(x0, x1) in &spans.rows[y / ts] {
                box_blur_line(&src[x0..x1], &mut dst[x0..x1], radius);
            }
        });

    // Column pass one tile-row band at a time: every peripheral tile column
    // slides a window of whole rows, clamped to the run it belongs to.
    let src = &*rows_done;
    let inv = 1.0 / (2 * radius + 1) as f64;
    frame
        .color
        .par_chunks_mut(w * ts)
        .enumerate()
        .for_each_init(Vec::new, |sums, (band, dst)| {
            let (by0, by1) = (band * ts, band * ts + dst.len() / w);
            for &(x0, x1) in &spans.rows[band] {
                for c in x0 / ts..x1.div_ceil(ts) {
                    let Some(&(y0, y1)) = spans.cols[c]
                        .iter()
                        .find(|&&(y0, y1)| y0 <= by0 && by0 < y1)
                    else {
                        continue;
                    };
                    let (cx0, cx1) = (c * ts, ((c + 1) * ts).min(w));
                    let row = |y: isize| {
                        let y = y.clamp(y0 as isize, y1 as isize - 1) as usize;
                        &src[y * w + cx0..y * w + cx1]
                    };
                    sums.clear();
                    sums.resize(cx1 - cx0, [0f64; 3]);
                    let r = radius as isize;
                    for j in -r..=r {
                        for (s, v) in sums.iter_mut().zip(row(by0 as isize + j)) {
                            add3(s, *v, 1.0);
                        }
                    }
                    for y in by0..by1 {
                        let out = &mut dst[(y - by0) * w + cx0..(y - by0) * w + cx1];
                        for (o, s) in out.iter_mut().zip(sums.iter()) {
                            *o = scale3(s, inv);
                        }
                        let y = y as isize;
                        for ((s, a), b) in sums.iter_mut().zip(row(y + r + 1)).zip(row(y - r)) {
                            add3(s, *a, 1.0);
                            add3(s, *b, -1.0);
                        }
                    }
                }
            }
        });
}
