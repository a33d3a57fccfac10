//! Performance and semantic evaluation: frame-rate metering, the foveation
//! benchmark harness, and CLIP-style consistency and prompt scores computed
//! through a pluggable embedding provider.

use std::collections::{HashMap, VecDeque};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foveation::{
    cost_report, heuristic_importance, render_foveated, smooth_map, FoveationConfig,
    FoveationError, ImportanceMap,
};
use crate::imaging::RgbImage;
use crate::rasterizer::{render_tiled, RenderConfig};
use crate::splat_model::SplatCloud;
use crate::trajectory::CameraPose;

pub const EMBEDDING_PROVIDER_ENV: &str = "EMBEDDING_PROVIDER_URL";
pub const DEFAULT_BENCH_REPS: usize = 20;
pub const DEFAULT_BENCH_WARMUP: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least one view")]
    NoViews,
    #[error("embedding provider: {0}")]
    Provider(String),
}

/// Counts frame completions over a sliding window.
#[derive(Debug, Clone)]
pub struct FpsMeter {
    window: f64,
    stamps: VecDeque<f64>,
}

impl Default for FpsMeter {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl FpsMeter {
    /// `window` in seconds; non-positive values fall back to 1 s.
    pub fn new(window: f64) -> Self {
        let window = if window.is_finite() && window > 0.0 {
            window
        } else {
            1.0
        };
        Self {
            window,
            stamps: VecDeque::new(),
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Records a frame completed at `now` seconds. Timestamps must not go
    /// backwards; earlier ones are ignored.
    pub fn record(&mut self, now: f64) {
        if self.stamps.back().is_some_and(|&last| now < last) {
            return;
        }
        self.stamps.push_back(now);
        while self.stamps.front().is_some_and(|&t| t <= now - self.window) {
            self.stamps.pop_front();
        }
    }

    /// Completions in `(now − window, now]` divided by the window.
    pub fn fps(&self, now: f64) -> f64 {
        let lo = now - self.window;
        let count = self.stamps.iter().filter(|&&t| t > lo && t <= now).count();
        count as f64 / self.window
    }
}

/// `u·v / (|u||v|)`, accumulated in f64.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::DimMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 || !(nu.is_finite() && nv.is_finite()) {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Maps images and text into a shared embedding space.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f32>, MetricsError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, MetricsError>;
}

/// Mean cosine between each view's embedding and the center view's.
pub fn clip_consistency(
    views: &[RgbImage],
    center: &RgbImage,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    if views.is_empty() {
        return Err(MetricsError::NoViews);
    }
    let reference = provider.embed_image(center)?;
    let mut sum = 0.0;
    for view in views {
        sum += cosine(&provider.embed_image(view)?, &reference)?;
    }
    Ok(sum / views.len() as f64)
}

/// Cosine between the prompt's and the image's embeddings.
pub fn clip_score(
    prompt: &str,
    image: &RgbImage,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    cosine(&provider.embed_text(prompt)?, &provider.embed_image(image)?)
}

/// `POST {url}` with `{ "image_png_base64" }` or `{ "text" }`, expecting
/// `{ "embedding": [...] }`. Embeddings are re-normalized on receipt.
pub struct HttpEmbeddingProvider {
    url: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f32>,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(EMBEDDING_PROVIDER_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .map(|url| Self::new(url, Duration::from_secs(10)))
    }

    fn post(&self, body: serde_json::Value) -> Result<Vec<f32>, MetricsError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        if response.status().as_u16() != 200 {
            return Err(MetricsError::Provider(format!(
                "HTTP {}",
                response.status().as_u16()
            )));
        }
        let parsed: EmbeddingResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        normalized(parsed.embedding)
    }
}

fn normalized(v: Vec<f32>) -> Result<Vec<f32>, MetricsError> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MetricsError::ZeroVector);
    }
    Ok(v.into_iter().map(|x| (x as f64 / norm) as f32).collect())
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f32>, MetricsError> {
        let png = image
            .encode_png()
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        self.post(serde_json::json!({ "image_png_base64": b64 }))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, MetricsError> {
        self.post(serde_json::json!({ "text": text }))
    }
}

/// Deterministic provider returning fixed vectors per exact image or text,
/// and a fallback vector for anything else.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbeddings {
    pub images: HashMap<RgbImage, Vec<f32>>,
    pub texts: HashMap<String, Vec<f32>>,
    pub fallback: Option<Vec<f32>>,
}

impl ScriptedEmbeddings {
    pub fn constant(v: Vec<f32>) -> Self {
        Self {
            fallback: Some(v),
            ..Default::default()
        }
    }

    fn or_fallback(&self, v: Option<&Vec<f32>>, what: &str) -> Result<Vec<f32>, MetricsError> {
        v.or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| MetricsError::Provider(format!("no scripted embedding for {what}")))
    }
}

impl EmbeddingProvider for ScriptedEmbeddings {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f32>, MetricsError> {
        self.or_fallback(self.images.get(image), "image")
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, MetricsError> {
        self.or_fallback(self.texts.get(text), "text")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub cc: f64,
    pub cs: f64,
    pub cc_x100: f64,
    pub cs_x100: f64,
    pub fps_mean: f64,
    pub fps_min: f64,
    pub foveated_speedup: f64,
}

impl EvalReport {
    pub fn new(cc: f64, cs: f64, fps: &FpsRun, foveated_speedup: f64) -> Self {
        Self {
            cc,
            cs,
            cc_x100: cc * 100.0,
            cs_x100: cs * 100.0,
            fps_mean: fps.fps_mean,
            fps_min: fps.fps_min,
            foveated_speedup,
        }
    }
}

/// One benchmark configuration's median cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub threshold: f32,
    pub foveal_fraction: f64,
    pub ms_per_frame: f64,
    pub composite_samples: u64,
    pub splat_evaluations: u64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// The importance map the benchmark uses: the heuristic over a full render
/// of the same view.
pub fn benchmark_importance(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<ImportanceMap, FoveationError> {
    let full = render_tiled(cloud, pose, cfg)?;
    let (cols, rows) = cfg.tile_grid();
    heuristic_importance(Some(&full), rows, cols)
}

/// Renders each threshold `reps` times after `warmup` discarded runs and
/// reports the median time per frame. Rows are sorted by foveal fraction.
pub fn benchmark_foveation(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
    base: &FoveationConfig,
    thresholds: &[f32],
    reps: usize,
    warmup: usize,
) -> Result<Vec<BenchRow>, FoveationError> {
    let map = benchmark_importance(cloud, pose, cfg)?;
    let configs: Vec<FoveationConfig> = thresholds
        .iter()
        .map(|&threshold| FoveationConfig { threshold, ..*base })
        .collect();
    let mut times = vec![Vec::with_capacity(reps); configs.len()];
    let mut last = vec![None; configs.len()];
    // One repetition of every configuration per round.
    for round in 0..warmup + reps.max(1) {
        for (i, fcfg) in configs.iter().enumerate() {
            let out = render_foveated(cloud, pose, &map, cfg, fcfg)?;
            if round >= warmup {
                times[i].push(out.elapsed.as_secs_f64() * 1e3);
            }
            last[i] = Some(cost_report(&out));
        }
    }
    let mut rows: Vec<BenchRow> = configs
        .iter()
        .zip(times)
        .zip(last)
        .map(|((fcfg, times), report)| {
            let report = report.expect("at least one repetition ran");
            BenchRow {
                threshold: fcfg.threshold,
                foveal_fraction: report.foveal_fraction,
                ms_per_frame: median(times),
                composite_samples: report.composite_samples,
                splat_evaluations: report.splat_evaluations,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.foveal_fraction
            .total_cmp(&b.foveal_fraction)
            .then(a.threshold.total_cmp(&b.threshold))
    });
    Ok(rows)
}

/// Time of the full-resolution row over the row whose foveal fraction is
/// closest to `fraction`.
pub fn foveated_speedup(rows: &[BenchRow], fraction: f64) -> Option<f64> {
    let full = rows
        .iter()
        .filter(|r| r.foveal_fraction >= 1.0)
        .map(|r| r.ms_per_frame)
        .reduce(f64::max)?;
    let near = rows.iter().min_by(|a, b| {
        (a.foveal_fraction - fraction)
            .abs()
            .total_cmp(&(b.foveal_fraction - fraction).abs())
    })?;
    (near.ms_per_frame > 0.0).then(|| full / near.ms_per_frame)
}

/// Frame-rate statistics of an interactive render loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpsRun {
    pub frames: u64,
    pub seconds: f64,
    pub fps_mean: f64,
    /// Lowest windowed rate observed once the first window had filled.
    pub fps_min: f64,
}

/// Renders back to back for `duration` the way the live loop does: the
/// importance map comes from the previous frame and is smoothed over time.
pub fn measure_render_loop(
    cloud: &SplatCloud,
    pose: &CameraPose,
    cfg: &RenderConfig,
    fcfg: &FoveationConfig,
    duration: Duration,
) -> Result<FpsRun, FoveationError> {
    let (cols, rows) = cfg.tile_grid();
    let mut meter = FpsMeter::default();
    let mut map = heuristic_importance(None, rows, cols)?;
    let mut fps_min = f64::INFINITY;
    let mut frames = 0u64;
    let start = Instant::now();
    loop {
        let out = render_foveated(cloud, pose, &map, cfg, fcfg)?;
        if fcfg.enabled {
            let fresh = heuristic_importance(Some(&out.frame), rows, cols)?;
            map = smooth_map(&map, &fresh, fcfg.temporal_beta)?;
        }
        frames += 1;
        let now = start.elapsed().as_secs_f64();
        meter.record(now);
        if now >= meter.window() {
            fps_min = fps_min.min(meter.fps(now));
        }
        if now >= duration.as_secs_f64() {
            return Ok(FpsRun {
                frames,
                seconds: now,
                fps_mean: frames as f64 / now,
                fps_min: if fps_min.is_finite() {
                    fps_min
                } else {
                    frames as f64 / now
                },
            });
        }
    }
}
