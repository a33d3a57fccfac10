//! Offline rendering of a camera path over a 4D sequence into an encoder sink.
//!
//! Poses are sampled uniformly from the trajectory, smoothed with an
//! exponential moving average, rendered (foveated when enabled), converted to
//! 8-bit sRGB and delivered to the sink strictly in frame order.
//!
//! # External encoder handshake
//!
//! [`ExternalEncoderSink`] runs a command template in which `{width}`,
//! `{height}`, `{fps}` and `{output}` are substituted per argument. The child
//! receives every frame on stdin as `width·height·3` bytes of packed RGB24,
//! rows top to bottom, with no header or separator, and stdin is closed after
//! the last frame. A zero exit status means `{output}` was written.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::foveation::{
    query_provider, render_foveated, smooth_map, FoveationConfig, FoveationError, ImportanceMap,
    ImportanceProvider,
};
use crate::imaging::RgbImage;
use crate::rasterizer::{Framebuffer, RenderConfig};
use crate::sequence_player::frame_at;
use crate::splat_model::Scene;
use crate::trajectory::{slerp, CameraPose, Trajectory, TrajectoryError};

pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.8;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to start encoder `{program}`: {message}")]
    SpawnFailure { program: String, message: String },
    #[error("encoder exited with status {code:?}")]
    EncoderExitNonzero { code: Option<i32> },
    #[error("frame {got} delivered out of order, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("bad encoder command template: {0}")]
    Template(String),
    #[error("{0}")]
    Rejected(String),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("trajectory has no keyframes")]
    EmptyTrajectory,
    #[error("invalid export job: {0}")]
    InvalidJob(&'static str),
    #[error("sink failed after {accepted} accepted frames: {source}")]
    SinkFailure {
        accepted: u64,
        #[source]
        source: SinkError,
    },
    #[error(transparent)]
    Render(#[from] FoveationError),
    #[error(transparent)]
    Trajectory(TrajectoryError),
}

impl From<TrajectoryError> for ExportError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::EmptyTrajectory => ExportError::EmptyTrajectory,
            other => ExportError::Trajectory(other),
        }
    }
}

/// Consumer of exported frames. `accept` is called with indices 0, 1, 2, ...
/// without gaps, between one `start` and one `finalize`.
pub trait EncoderSink: Send {
    fn start(&mut self, width: u32, height: u32, fps: f64) -> Result<(), SinkError>;
    fn accept(&mut self, index: u64, width: u32, height: u32, rgb: &[u8]) -> Result<(), SinkError>;
    /// Flushes and returns the artifact location.
    fn finalize(&mut self) -> Result<PathBuf, SinkError>;
}

/// Everything that determines an export's output.
#[derive(Clone)]
pub struct ExportJob {
    pub trajectory: Trajectory,
    pub scene: Scene,
    pub render: RenderConfig,
    pub fps: f64,
    pub foveation: FoveationConfig,
    pub smoothing_alpha: f64,
    pub prompt: String,
    /// `None` uses the deterministic heuristic importance.
    pub importance: Option<Arc<dyn ImportanceProvider>>,
}

impl ExportJob {
    pub fn new(trajectory: Trajectory, scene: Scene, width: u32, height: u32, fps: f64) -> Self {
        Self {
            trajectory,
            scene,
            render: RenderConfig::new(width, height),
            fps,
            foveation: FoveationConfig::default(),
            smoothing_alpha: DEFAULT_SMOOTHING_ALPHA,
            prompt: String::new(),
            importance: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExportError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ExportError::InvalidJob("fps must be positive"));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(ExportError::InvalidJob("smoothing_alpha must lie in (0,1]"));
        }
        if self.scene.frames.is_empty() || self.scene.frames.len() != self.scene.manifest.len() {
            return Err(ExportError::InvalidJob(
                "scene frames do not match the manifest",
            ));
        }
        self.render.validate().map_err(FoveationError::from)?;
        self.foveation.validate()?;
        Ok(())
    }

    /// Number of frames the job produces.
    pub fn frame_count(&self) -> Result<usize, ExportError> {
        Ok(self.trajectory.sample_times(self.fps)?.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportResult {
    pub frame_count: u64,
    pub output: PathBuf,
}

/// Exponential moving average over a pose sequence: positions and
/// intrinsics blend linearly with weight `alpha` on the new sample,
/// orientations by slerp.
pub fn smooth_poses(poses: &[CameraPose], alpha: f64) -> Result<Vec<CameraPose>, ExportError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ExportError::InvalidJob("smoothing_alpha must lie in (0,1]"));
    }
    let mut out: Vec<CameraPose> = Vec::with_capacity(poses.len());
    for pose in poses {
        let next = match out.last() {
            None => *pose,
            Some(_) if alpha == 1.0 => *pose,
            Some(prev) => {
                let mix = |a: f64, b: f64| alpha * b + (1.0 - alpha) * a;
                CameraPose {
                    position: prev.position * (1.0 - alpha) + pose.position * alpha,
                    orientation: slerp(prev.orientation, pose.orientation, alpha),
                    vfov: mix(prev.vfov, pose.vfov),
                    near: mix(prev.near, pose.near),
                    far: mix(prev.far, pose.far),
                }
            }
        };
        out.push(next);
    }
    Ok(out)
}

/// Renders the job frame by frame into `sink`. `progress` is called with
/// `(frames accepted, total)` after every accepted frame.
pub fn run_export(
    job: &ExportJob,
    sink: &mut dyn EncoderSink,
    mut progress: impl FnMut(u64, u64),
) -> Result<ExportResult, ExportError> {
    job.validate()?;
    let times = job.trajectory.sample_times(job.fps)?;
    let raw: Vec<CameraPose> = times
        .iter()
        .map(|&t| job.trajectory.interpolate(t))
        .collect();
    let poses = smooth_poses(&raw, job.smoothing_alpha)?;
    let total = poses.len() as u64;
    let cfg = &job.render;
    let (cols, rows) = cfg.tile_grid();

    sink.start(cfg.width, cfg.height, job.fps)
        .map_err(|source| ExportError::SinkFailure {
            accepted: 0,
            source,
        })?;

    let start = job.trajectory.start();
    let duration = job.scene.manifest.duration();
    let mut previous: Option<Framebuffer> = None;
    let mut map: Option<ImportanceMap> = None;
    for (k, (pose, t)) in poses.iter().zip(&times).enumerate() {
        let seq_time = (t - start).clamp(0.0, duration);
        let frame_index =
            frame_at(&job.scene.manifest, seq_time).expect("validated scene is non-empty");
        let cloud = &job.scene.frames[frame_index];

        let current = if job.foveation.enabled {
            let outcome = query_provider(
                previous.as_ref(),
                &job.prompt,
                job.importance.as_deref(),
                rows,
                cols,
            );
            let smoothed = match &map {
                Some(prev) => smooth_map(prev, &outcome.map, job.foveation.temporal_beta)?,
                None => outcome.map,
            };
            map = Some(smoothed.clone());
            smoothed
        } else {
            ImportanceMap::filled(rows, cols, 1.0)?
        };
        let rendered = render_foveated(cloud, pose, &current, cfg, &job.foveation)?;
        let image = RgbImage::from_framebuffer(&rendered.frame);
        sink.accept(k as u64, image.width, image.height, &image.data)
            .map_err(|source| ExportError::SinkFailure {
                accepted: k as u64,
                source,
            })?;
        progress(k as u64 + 1, total);
        previous = Some(rendered.frame);
    }
    let output = sink.finalize().map_err(|source| ExportError::SinkFailure {
        accepted: total,
        source,
    })?;
    Ok(ExportResult {
        frame_count: total,
        output,
    })
}

fn check_order(next: &mut u64, index: u64) -> Result<(), SinkError> {
    if index != *next {
        return Err(SinkError::OutOfOrder {
            expected: *next,
            got: index,
        });
    }
    *next += 1;
    Ok(())
}

/// File name of frame `index` in an image sequence.
pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

pub const SIDECAR_FILE_NAME: &str = "sequence.json";

#[derive(Serialize)]
struct Sidecar {
    fps: f64,
    frames: u64,
}

/// Writes `frame_000000.png`, `frame_000001.png`, ... plus a JSON sidecar
/// `{ "fps", "frames" }` into a directory.
pub struct ImageSequenceSink {
    dir: PathBuf,
    fps: f64,
    next: u64,
}

impl ImageSequenceSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            fps: 0.0,
            next: 0,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl EncoderSink for ImageSequenceSink {
    fn start(&mut self, _width: u32, _height: u32, fps: f64) -> Result<(), SinkError> {
        std::fs::create_dir_all(&self.dir)?;
        self.fps = fps;
        self.next = 0;
        Ok(())
    }

    fn accept(&mut self, index: u64, width: u32, height: u32, rgb: &[u8]) -> Result<(), SinkError> {
        check_order(&mut self.next, index)?;
        let image = RgbImage {
            width,
            height,
            data: rgb.to_vec(),
        };
        let png = image
            .encode_png()
            .map_err(|e| SinkError::Rejected(e.to_string()))?;
        std::fs::write(self.dir.join(frame_file_name(index)), png)?;
        Ok(())
    }

    fn finalize(&mut self) -> Result<PathBuf, SinkError> {
        let sidecar = Sidecar {
            fps: self.fps,
            frames: self.next,
        };
        let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(self.dir.join(SIDECAR_FILE_NAME), json)?;
        Ok(self.dir.clone())
    }
}

/// Streams raw RGB24 frames to an external encoder process; see the module
/// docs for the handshake.
pub struct ExternalEncoderSink {
    template: String,
    output: PathBuf,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    next: u64,
}

impl ExternalEncoderSink {
    pub fn new(template: impl Into<String>, output: impl Into<PathBuf>) -> Self {
        Self {
            template: template.into(),
            output: output.into(),
            child: None,
            stdin: None,
            next: 0,
        }
    }

    /// A typical ffmpeg invocation producing an H.264 MP4.
    pub fn ffmpeg(output: impl Into<PathBuf>) -> Self {
        Self::new(
            "ffmpeg -loglevel error -y -f rawvideo -pix_fmt rgb24 -s {width}x{height} -r {fps} -i - -pix_fmt yuv420p {output}",
            output,
        )
    }

    fn command_line(&self, width: u32, height: u32, fps: f64) -> Result<Vec<String>, SinkError> {
        let words = shlex::split(&self.template)
            .ok_or_else(|| SinkError::Template(self.template.clone()))?;
        if words.is_empty() {
            return Err(SinkError::Template("empty command".into()));
        }
        let output = self.output.to_string_lossy();
        Ok(words
            .into_iter()
            .map(|w| {
                w.replace("{width}", &width.to_string())
                    .replace("{height}", &height.to_string())
                    .replace("{fps}", &fps.to_string())
                    .replace("{output}", &output)
            })
            .collect())
    }

    fn wait(&mut self) -> Result<(), SinkError> {
        drop(self.stdin.take());
        let Some(mut child) = self.child.take() else {
            return Ok(());
        };
        let status = child.wait()?;
        if !status.success() {
            return Err(SinkError::EncoderExitNonzero {
                code: status.code(),
            });
        }
        Ok(())
    }
}

impl EncoderSink for ExternalEncoderSink {
    fn start(&mut self, width: u32, height: u32, fps: f64) -> Result<(), SinkError> {
        let argv = self.command_line(width, height, fps)?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| SinkError::SpawnFailure {
                program: argv[0].clone(),
                message: e.to_string(),
            })?;
        self.stdin = child.stdin.take();
        self.child = Some(child);
        self.next = 0;
        Ok(())
    }

    fn accept(
        &mut self,
        index: u64,
        _width: u32,
        _height: u32,
        rgb: &[u8],
    ) -> Result<(), SinkError> {
        check_order(&mut self.next, index)?;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| SinkError::Rejected("encoder not started".into()))?;
        if let Err(e) = stdin.write_all(rgb) {
            // A closed pipe usually means the encoder died; report its status if so.
            self.wait()?;
            return Err(e.into());
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<PathBuf, SinkError> {
        self.wait()?;
        Ok(self.output.clone())
    }
}

impl Drop for ExternalEncoderSink {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Keeps every frame in memory; for tests and in-process consumers.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub fps: f64,
    pub frames: Vec<RgbImage>,
}

impl EncoderSink for MemorySink {
    fn start(&mut self, _width: u32, _height: u32, fps: f64) -> Result<(), SinkError> {
        self.fps = fps;
        self.frames.clear();
        Ok(())
    }

    fn accept(&mut self, index: u64, width: u32, height: u32, rgb: &[u8]) -> Result<(), SinkError> {
        let mut next = self.frames.len() as u64;
        check_order(&mut next, index)?;
        self.frames.push(RgbImage {
            width,
            height,
            data: rgb.to_vec(),
        });
        Ok(())
    }

    fn finalize(&mut self) -> Result<PathBuf, SinkError> {
        Ok(PathBuf::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{orbit_camera, random_cloud};
    use crate::trajectory::{InterpolationMode, Keyframe};
    use glam::{DQuat, DVec3};

    fn pose_at(x: f64) -> CameraPose {
        CameraPose::new(DVec3::new(x, 0.0, 0.0), DQuat::IDENTITY)
    }

    #[test]
    fn smoothing_identity_and_fixpoint() {
        let poses: Vec<CameraPose> = (0..5)
            .map(|i| orbit_camera(i as f64 * 0.3, 0.1, 4.0))
            .collect();
        assert_eq!(smooth_poses(&poses, 1.0).unwrap(), poses);
        let constant = vec![poses[2]; 6];
        for p in smooth_poses(&constant, 0.3).unwrap() {
            assert!((p.position - poses[2].position).length() < 1e-12);
            assert!(p.orientation.dot(poses[2].orientation).abs() > 1.0 - 1e-12);
        }
        assert!(smooth_poses(&poses, 0.0).is_err());
    }

    #[test]
    fn smoothing_formula() {
        let out = smooth_poses(&[pose_at(0.0), pose_at(1.0)], 0.5).unwrap();
        assert_eq!(out[0].position.x, 0.0);
        assert_eq!(out[1].position.x, 0.5);
    }

    fn small_job(fps: f64) -> ExportJob {
        let traj = Trajectory::new(
            vec![
                Keyframe {
                    pose: orbit_camera(0.0, 0.0, 6.0),
                    time: 0.0,
                },
                Keyframe {
                    pose: orbit_camera(0.4, 0.1, 6.0),
                    time: 1.0,
                },
            ],
            InterpolationMode::CatmullRom,
        )
        .unwrap();
        ExportJob::new(traj, Scene::single(random_cloud(200, 3)), 48, 32, fps)
    }

    #[test]
    fn frame_count_and_order() {
        let mut sink = MemorySink::default();
        let mut seen = Vec::new();
        let result = run_export(&small_job(30.0), &mut sink, |done, total| {
            seen.push((done, total))
        })
        .unwrap();
        assert_eq!(result.frame_count, 31);
        assert_eq!(sink.frames.len(), 31);
        assert_eq!(seen.last(), Some(&(31, 31)));
        assert_eq!(sink.frames[0].data.len(), 48 * 32 * 3);
    }

    struct FailAt(u64, u64);

    impl EncoderSink for FailAt {
        fn start(&mut self, _: u32, _: u32, _: f64) -> Result<(), SinkError> {
            Ok(())
        }
        fn accept(&mut self, index: u64, _: u32, _: u32, _: &[u8]) -> Result<(), SinkError> {
            if index == self.0 {
                return Err(SinkError::Rejected("disk full".into()));
            }
            self.1 += 1;
            Ok(())
        }
        fn finalize(&mut self) -> Result<PathBuf, SinkError> {
            Ok(PathBuf::new())
        }
    }

    #[test]
    fn sink_failure_aborts() {
        let mut sink = FailAt(5, 0);
        match run_export(&small_job(30.0), &mut sink, |_, _| {}) {
            Err(ExportError::SinkFailure { accepted, .. }) => assert_eq!(accepted, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(sink.1, 5);
    }

    #[test]
    fn invalid_jobs_rejected() {
        let mut sink = MemorySink::default();
        assert!(matches!(
            run_export(&small_job(0.0), &mut sink, |_, _| {}),
            Err(ExportError::InvalidJob(_))
        ));
        let mut job = small_job(30.0);
        job.smoothing_alpha = 1.5;
        assert!(run_export(&job, &mut sink, |_, _| {}).is_err());
    }

    #[test]
    fn sequence_sink_out_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = ImageSequenceSink::new(dir.path());
        sink.start(2, 2, 24.0).unwrap();
        assert!(matches!(
            sink.accept(1, 2, 2, &[0; 12]),
            Err(SinkError::OutOfOrder {
                expected: 0,
                got: 1
            })
        ));
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_file_name(0), "frame_000000.png");
        assert_eq!(frame_file_name(123456), "frame_123456.png");
    }

    #[test]
    fn template_substitution() {
        let sink = ExternalEncoderSink::new(
            "enc -s {width}x{height} -r {fps} 'out dir/{output}'",
            "v.mp4",
        );
        assert_eq!(
            sink.command_line(64, 48, 30.0).unwrap(),
            vec!["enc", "-s", "64x48", "-r", "30", "out dir/v.mp4"]
        );
        assert!(ExternalEncoderSink::new("  ", "x")
            .command_line(1, 1, 1.0)
            .is_err());
    }
}
