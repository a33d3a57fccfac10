//! Per-viewer session state and command handling.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use splat4d_core::foveation::{
    query_provider, render_foveated, smooth_map, FoveationConfig, FoveationError, ImportanceMap,
    ImportanceProvider,
};
use splat4d_core::imaging::RgbImage;
use splat4d_core::rasterizer::{Framebuffer, RenderConfig};
use splat4d_core::selection_edit::{
    pick_point, select, EditHistory, EditOp, SelectionError, SelectionMask,
};
use splat4d_core::sequence_player::{advance, frame_at, seek, PlaybackState};
use splat4d_core::splat_model::{Scene, SequenceManifest, SplatCloud};
use splat4d_core::synthetic::{orbit_camera, REFERENCE_DISTANCE};
use splat4d_core::trajectory::{CameraPose, DEFAULT_VFOV_DEG};
use splat4d_core::video_export::{
    run_export, EncoderSink, ExportJob, ExternalEncoderSink, ImageSequenceSink,
};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::protocol::{
    encode_frame, parse_client_message, ClientMessage, Command, CommandError, ErrorKind, Event,
    ExportParams, FrameFormat, FrameHeader, ShapeParam, SinkParam, FLAG_FOVEATED,
};
use crate::scene_store::{SceneStore, StoredScene};

pub const DEFAULT_WIDTH: u32 = 640;
pub const DEFAULT_HEIGHT: u32 = 360;
pub const MAX_DIMENSION: u32 = 4096;
pub const MAX_TARGET_FPS: f64 = 240.0;
/// Export progress is reported every this many frames.
pub const PROGRESS_INTERVAL: u64 = 10;
const EVENT_CAPACITY: usize = 256;

/// Server-wide settings every session shares.
#[derive(Clone)]
pub struct SessionConfig {
    pub exports_dir: PathBuf,
    pub importance: Option<Arc<dyn ImportanceProvider>>,
}

impl SessionConfig {
    pub fn new(exports_dir: impl Into<PathBuf>) -> Self {
        Self {
            exports_dir: exports_dir.into(),
            importance: None,
        }
    }
}

/// Everything one render tick needs, copied out of the session so the
/// render runs without holding the session lock.
#[derive(Clone)]
pub struct RenderTask {
    pub cloud: Arc<SplatCloud>,
    pub pose: CameraPose,
    pub render: RenderConfig,
    pub foveation: FoveationConfig,
    pub previous_map: Option<ImportanceMap>,
    pub prompt: String,
    pub format: FrameFormat,
    pub time: f64,
    pub frame_index: usize,
}

#[derive(Debug, Error)]
pub enum TickError {
    #[error(transparent)]
    Render(#[from] FoveationError),
    #[error("frame encoding failed: {0}")]
    Encode(String),
}

pub struct RenderedFrame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
    pub frame: Framebuffer,
    pub map: ImportanceMap,
    pub foveal_fraction: f64,
    pub importance_source: &'static str,
}

impl RenderedFrame {
    pub fn message(&self) -> Vec<u8> {
        encode_frame(&self.header, &self.payload)
    }
}

/// Renders one frame: queries importance for the previous frame, smooths it
/// with the session's last map, renders and encodes.
pub fn render_task(
    task: &RenderTask,
    seq: u32,
    previous_frame: Option<&Framebuffer>,
    provider: Option<&dyn ImportanceProvider>,
) -> Result<RenderedFrame, TickError> {
    let (cols, rows) = task.render.tile_grid();
    let outcome = query_provider(previous_frame, &task.prompt, provider, rows, cols);
    let map = match &task.previous_map {
        Some(prev) if prev.rows() == rows && prev.cols() == cols => {
            smooth_map(prev, &outcome.map, task.foveation.temporal_beta)?
        }
        _ => outcome.map,
    };
    let rendered = render_foveated(&task.cloud, &task.pose, &map, &task.render, &task.foveation)?;
    let image = RgbImage::from_framebuffer(&rendered.frame);
    let payload = match task.format {
        FrameFormat::Png => image
            .encode_png()
            .map_err(|e| TickError::Encode(e.to_string()))?,
        FrameFormat::Rgb8 => image.data,
    };
    let foveal_fraction = rendered.classes.foveal_fraction();
    let foveated = task.foveation.enabled && foveal_fraction < 1.0;
    Ok(RenderedFrame {
        header: FrameHeader {
            seq,
            width: task.render.width as u16,
            height: task.render.height as u16,
            format: task.format,
            flags: if foveated { FLAG_FOVEATED } else { 0 },
            sim_time_ms: (task.time * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32,
        },
        payload,
        frame: rendered.frame,
        map,
        foveal_fraction,
        importance_source: outcome.source.as_str(),
    })
}

/// A camera on +z of the bounds center whose vertical field of view just
/// contains the bounding sphere, with a 10% margin.
pub fn default_camera(cloud: &SplatCloud) -> CameraPose {
    let Some(bounds) = cloud.bounds() else {
        return orbit_camera(0.0, 0.0, REFERENCE_DISTANCE);
    };
    let center = bounds.center().as_dvec3();
    let radius = (bounds.extent().as_dvec3().length() * 0.5).max(1e-3);
    let half_fov = DEFAULT_VFOV_DEG.to_radians() * 0.5;
    let pose = orbit_camera(0.0, 0.0, 1.1 * radius / half_fov.sin());
    CameraPose {
        position: pose.position + center,
        far: (radius * 20.0).max(100.0),
        ..pose
    }
}

pub struct Session {
    id: String,
    scene_id: String,
    manifest: SequenceManifest,
    frames: Vec<Arc<SplatCloud>>,
    camera: CameraPose,
    playback: PlaybackState,
    selection: SelectionMask,
    /// Undo history per scene frame; edits touch the current frame only.
    histories: HashMap<usize, EditHistory>,
    foveation: FoveationConfig,
    render: RenderConfig,
    prompt: String,
    importance: Option<ImportanceMap>,
    format: FrameFormat,
    overlay: bool,
    dirty: bool,
    export_running: Arc<AtomicBool>,
    next_job: u64,
    events: broadcast::Sender<Event>,
    store: Arc<SceneStore>,
    config: SessionConfig,
}

fn validation(seq: u64, code: &str, message: impl Into<String>) -> Event {
    CommandError::validation(seq, code, message).into_event()
}

fn selection_error(seq: u64, e: SelectionError) -> Event {
    let code = match e {
        SelectionError::StaleMask { .. } => "stale_mask",
        SelectionError::DegenerateShape(_) => "degenerate_shape",
        SelectionError::EmptySelection => "empty_selection",
        SelectionError::InvalidDelta => "invalid_delta",
        SelectionError::EmptyHistory => "nothing_to_undo",
        SelectionError::HistoryMismatch { .. } => "history_mismatch",
    };
    validation(seq, code, e.to_string())
}

fn ack(seq: u64, result: Option<Value>) -> Event {
    Event::Ack { seq, result }
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        scene: &StoredScene,
        store: Arc<SceneStore>,
        config: SessionConfig,
    ) -> Self {
        let (events, _) = broadcast::channel(EVENT_CAPACITY);
        let mut session = Self {
            id: id.into(),
            scene_id: String::new(),
            manifest: scene.scene.manifest.clone(),
            frames: Vec::new(),
            camera: orbit_camera(0.0, 0.0, REFERENCE_DISTANCE),
            playback: PlaybackState::default(),
            selection: SelectionMask::empty_for(&SplatCloud::empty()),
            histories: HashMap::new(),
            foveation: FoveationConfig::default(),
            render: RenderConfig::new(DEFAULT_WIDTH, DEFAULT_HEIGHT),
            prompt: String::new(),
            importance: None,
            format: FrameFormat::Png,
            overlay: false,
            dirty: true,
            export_running: Arc::new(AtomicBool::new(false)),
            next_job: 1,
            events,
            store,
            config,
        };
        session.load(scene);
        session
    }

    fn load(&mut self, scene: &StoredScene) {
        let Scene { manifest, frames } = &scene.scene;
        self.scene_id = scene.id.clone();
        self.manifest = manifest.clone();
        self.frames = frames.clone();
        self.camera = default_camera(&frames[0]);
        self.playback = PlaybackState {
            time: 0.0,
            playing: false,
            ..self.playback
        };
        self.selection = SelectionMask::empty_for(&frames[0]);
        self.histories.clear();
        self.importance = None;
        self.dirty = true;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    pub fn camera(&self) -> &CameraPose {
        &self.camera
    }

    pub fn playback(&self) -> &PlaybackState {
        &self.playback
    }

    pub fn selection(&self) -> &SelectionMask {
        &self.selection
    }

    pub fn foveation(&self) -> &FoveationConfig {
        &self.foveation
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn format(&self) -> FrameFormat {
        self.format
    }

    pub fn overlay(&self) -> bool {
        self.overlay
    }

    pub fn importance(&self) -> Option<&ImportanceMap> {
        self.importance.as_ref()
    }

    pub fn export_running(&self) -> bool {
        self.export_running.load(Ordering::SeqCst)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    pub fn current_index(&self) -> usize {
        frame_at(&self.manifest, self.playback.time).expect("manifests are never empty")
    }

    pub fn current_cloud(&self) -> &Arc<SplatCloud> {
        &self.frames[self.current_index()]
    }

    /// Whether state changed since the last [`Session::tick`].
    pub fn dirty(&self) -> bool {
        self.dirty
    }

    pub fn hello_event(&self, resumed: bool) -> Event {
        Event::Hello {
            session: self.id.clone(),
            scene: self.scene_id.clone(),
            frames: self.frames.len(),
            duration: self.manifest.duration(),
            width: self.render.width,
            height: self.render.height,
            format: self.format,
            resumed,
        }
    }

    /// Parses and applies one client text message. Frame acks are flow
    /// control and must be routed elsewhere; here they are rejected.
    pub fn handle_text(&mut self, text: &str) -> Event {
        match parse_client_message(text) {
            Ok(ClientMessage::Command { seq, command }) => self.handle(seq, command),
            Ok(ClientMessage::FrameAck { .. }) => {
                validation(0, "unexpected_frame_ack", "frame acks are connection-level")
            }
            Err(e) => e.into_event(),
        }
    }

    /// Applies one command, returning its ack or error. A rejected command
    /// leaves the session unchanged.
    pub fn handle(&mut self, seq: u64, command: Command) -> Event {
        let event = self.apply(seq, command);
        if matches!(event, Event::Ack { .. }) {
            self.dirty = true;
        }
        event
    }

    fn apply(&mut self, seq: u64, command: Command) -> Event {
        match command {
            Command::Hello {
                format,
                width,
                height,
                overlay,
            } => {
                let width = width.unwrap_or(self.render.width);
                let height = height.unwrap_or(self.render.height);
                if !(1..=MAX_DIMENSION).contains(&width) || !(1..=MAX_DIMENSION).contains(&height) {
                    return validation(
                        seq,
                        "resolution_out_of_range",
                        format!("width and height must lie in 1..={MAX_DIMENSION}"),
                    );
                }
                if let Some(format) = format {
                    self.format = format;
                }
                if let Some(overlay) = overlay {
                    self.overlay = overlay;
                }
                if (width, height) != (self.render.width, self.render.height) {
                    self.render = RenderConfig {
                        width,
                        height,
                        ..self.render
                    };
                    self.importance = None;
                }
                ack(
                    seq,
                    Some(json!({ "format": self.format, "width": width, "height": height })),
                )
            }
            Command::LoadScene { scene } => match self.store.get(&scene) {
                Some(stored) => {
                    self.load(&stored);
                    ack(
                        seq,
                        Some(
                            json!({ "frames": self.frames.len(), "duration": self.manifest.duration() }),
                        ),
                    )
                }
                None => validation(seq, "scene_not_found", format!("no scene `{scene}`")),
            },
            Command::SetCamera { pose } => {
                self.camera = pose;
                ack(seq, None)
            }
            Command::Seek { t } => {
                if !t.is_finite() {
                    return validation(seq, "time_must_be_finite", "seek time must be finite");
                }
                self.playback = seek(&self.playback, &self.manifest, t);
                ack(seq, Some(json!({ "time": self.playback.time })))
            }
            Command::Play => {
                if !self.playback.looping && self.playback.time >= self.manifest.duration() {
                    self.playback.time = 0.0;
                }
                self.playback.playing = true;
                ack(seq, None)
            }
            Command::Pause => {
                self.playback.playing = false;
                ack(seq, None)
            }
            Command::SetSpeed { speed } => match self.playback.with_speed(speed) {
                Ok(p) => {
                    self.playback = p;
                    ack(seq, None)
                }
                Err(_) => validation(
                    seq,
                    "speed_must_be_positive",
                    format!("speed must be positive and finite, got {speed}"),
                ),
            },
            Command::SetFps { fps } => {
                if fps > MAX_TARGET_FPS {
                    return validation(
                        seq,
                        "fps_out_of_range",
                        format!("fps must be at most {MAX_TARGET_FPS}"),
                    );
                }
                match self.playback.with_target_fps(fps) {
                    Ok(p) => {
                        self.playback = p;
                        ack(seq, None)
                    }
                    Err(_) => validation(
                        seq,
                        "fps_must_be_positive",
                        format!("fps must be positive and finite, got {fps}"),
                    ),
                }
            }
            Command::SetLoop { enabled } => {
                self.playback.looping = enabled;
                ack(seq, None)
            }
            Command::Select { shape, mode } => self.select(seq, &shape, mode),
            Command::Edit { op } => self.edit(seq, op),
            Command::Undo => {
                let index = self.current_index();
                let Some(history) = self.histories.get_mut(&index) else {
                    return selection_error(seq, SelectionError::EmptyHistory);
                };
                match history.undo(&self.frames[index]) {
                    Ok(restored) => {
                        self.selection = SelectionMask::empty_for(&restored);
                        let count = restored.len();
                        self.frames[index] = Arc::new(restored);
                        ack(seq, Some(json!({ "splats": count })))
                    }
                    Err(e) => selection_error(seq, e),
                }
            }
            Command::SetFoveation { config } => match config.validate() {
                Ok(()) => {
                    self.foveation = config;
                    ack(seq, None)
                }
                Err(e) => validation(seq, "invalid_foveation", e.to_string()),
            },
            Command::SetPrompt { text } => {
                self.prompt = text;
                ack(seq, None)
            }
            Command::StartExport(params) => self.start_export(seq, params),
            Command::Ping => ack(seq, None),
        }
    }

    fn select(
        &mut self,
        seq: u64,
        shape: &ShapeParam,
        mode: splat4d_core::selection_edit::SelectMode,
    ) -> Event {
        let cloud = Arc::clone(self.current_cloud());
        let shape = match (shape.resolved(), shape) {
            (Some(s), _) => s,
            (None, ShapeParam::SpherePick { point, radius }) => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return selection_error(
                        seq,
                        SelectionError::DegenerateShape("sphere radius must be positive"),
                    );
                }
                match pick_point(&cloud, &self.camera, &self.render, *point) {
                    Some(center) => splat4d_core::selection_edit::SelectionShape::Sphere {
                        center: center.to_array(),
                        radius: *radius,
                    },
                    None => {
                        return validation(
                            seq,
                            "nothing_under_cursor",
                            "no splat projects near the picked point",
                        )
                    }
                }
            }
            (None, _) => unreachable!("only sphere_pick lacks a resolved shape"),
        };
        match select(
            &cloud,
            &self.camera,
            &self.render,
            &shape,
            mode,
            &self.selection,
        ) {
            Ok(mask) => {
                self.selection = mask;
                let mut result = json!({ "count": self.selection.count() });
                if let splat4d_core::selection_edit::SelectionShape::Sphere { center, .. } = shape {
                    result["center"] = json!(center);
                }
                ack(seq, Some(result))
            }
            Err(e) => selection_error(seq, e),
        }
    }

    fn edit(&mut self, seq: u64, op: EditOp) -> Event {
        let index = self.current_index();
        let history = self.histories.entry(index).or_default();
        match history.apply(&self.frames[index], &self.selection, op) {
            Ok(edited) => {
                self.selection = match op {
                    EditOp::Delete => SelectionMask::empty_for(&edited),
                    EditOp::Translate { .. } => {
                        SelectionMask::from_indices(&edited, &self.selection.indices())
                    }
                };
                let count = edited.len();
                self.frames[index] = Arc::new(edited);
                ack(seq, Some(json!({ "splats": count })))
            }
            Err(e) => selection_error(seq, e),
        }
    }

    fn start_export(&mut self, seq: u64, params: ExportParams) -> Event {
        if self.export_running() {
            return CommandError {
                seq: Some(seq),
                kind: ErrorKind::ExportBusy,
                code: "export_busy".to_string(),
                message: "an export is already running for this session".to_string(),
            }
            .into_event();
        }
        let width = params.width.unwrap_or(self.render.width);
        let height = params.height.unwrap_or(self.render.height);
        if !(1..=MAX_DIMENSION).contains(&width) || !(1..=MAX_DIMENSION).contains(&height) {
            return validation(
                seq,
                "resolution_out_of_range",
                format!("width and height must lie in 1..={MAX_DIMENSION}"),
            );
        }
        let scene = Scene {
            manifest: self.manifest.clone(),
            frames: self.frames.clone(),
        };
        let mut job = ExportJob::new(params.trajectory, scene, width, height, params.fps);
        job.render = RenderConfig {
            width,
            height,
            ..self.render
        };
        job.foveation = self.foveation;
        job.prompt = self.prompt.clone();
        job.importance = self.config.importance.clone();
        if let Some(alpha) = params.smoothing_alpha {
            job.smoothing_alpha = alpha;
        }
        if let Err(e) = job.validate() {
            return validation(seq, "invalid_export", e.to_string());
        }
        let total = match job.frame_count() {
            Ok(n) => n as u64,
            Err(e) => return validation(seq, "invalid_export", e.to_string()),
        };

        let job_id = self.next_job;
        let stem = format!("{}-job{job_id}", self.id);
        let mut sink: Box<dyn EncoderSink> = match params.sink {
            SinkParam::ImageSequence => {
                Box::new(ImageSequenceSink::new(self.config.exports_dir.join(&stem)))
            }
            SinkParam::Ffmpeg => Box::new(ExternalEncoderSink::ffmpeg(
                self.config.exports_dir.join(format!("{stem}.mp4")),
            )),
            SinkParam::Encoder {
                template,
                extension,
            } => {
                if extension.is_empty() || !extension.chars().all(|c| c.is_ascii_alphanumeric()) {
                    return validation(
                        seq,
                        "invalid_export",
                        "extension must be non-empty and alphanumeric",
                    );
                }
                Box::new(ExternalEncoderSink::new(
                    template,
                    self.config.exports_dir.join(format!("{stem}.{extension}")),
                ))
            }
        };
        if let Err(e) = std::fs::create_dir_all(&self.config.exports_dir) {
            return validation(
                seq,
                "invalid_export",
                format!("exports directory unavailable: {e}"),
            );
        }
        self.next_job += 1;
        self.export_running.store(true, Ordering::SeqCst);

        let running = Arc::clone(&self.export_running);
        let events = self.events.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("export-{stem}"))
            .spawn(move || {
                let result = run_export(&job, sink.as_mut(), |done, total| {
                    if done % PROGRESS_INTERVAL == 0 {
                        let _ = events.send(Event::ExportProgress { job: job_id, done, total });
                    }
                });
                drop(sink);
                let event = match result {
                    Ok(r) => {
                        tracing::info!(job = job_id, frames = r.frame_count, output = %r.output.display(), "export finished");
                        Event::ExportDone {
                            job: job_id,
                            output: r.output.display().to_string(),
                            frames: r.frame_count,
                        }
                    }
                    Err(e) => {
                        tracing::warn!(job = job_id, error = %e, "export failed");
                        Event::Error {
                            seq: Some(seq),
                            kind: ErrorKind::ExportFailed,
                            code: "export_failed".to_string(),
                            message: e.to_string(),
                        }
                    }
                };
                running.store(false, Ordering::SeqCst);
                let _ = events.send(event);
            });
        if let Err(e) = spawned {
            self.export_running.store(false, Ordering::SeqCst);
            return validation(
                seq,
                "invalid_export",
                format!("could not start export worker: {e}"),
            );
        }
        ack(seq, Some(json!({ "job": job_id, "frames": total })))
    }

    /// Advances playback by `wall_dt` seconds and snapshots what the next
    /// frame needs. Clears the dirty flag.
    pub fn tick(&mut self, wall_dt: f64) -> RenderTask {
        self.playback = advance(&self.playback, &self.manifest, wall_dt);
        self.dirty = false;
        let frame_index = self.current_index();
        RenderTask {
            cloud: Arc::clone(&self.frames[frame_index]),
            pose: self.camera,
            render: self.render,
            foveation: self.foveation,
            previous_map: self.importance.clone(),
            prompt: self.prompt.clone(),
            format: self.format,
            time: self.playback.time,
            frame_index,
        }
    }

    /// Stores the smoothed importance map of a finished render, unless the
    /// render size changed meanwhile.
    pub fn commit_importance(&mut self, map: ImportanceMap) {
        let (cols, rows) = self.render.tile_grid();
        if map.rows() == rows && map.cols() == cols {
            self.importance = Some(map);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use splat4d_core::synthetic::drifting_sequence;

    fn session() -> Session {
        let store = Arc::new(SceneStore::in_memory());
        let stored = store.insert("s1", drifting_sequence(4, 200, 2.0, 9));
        Session::new(
            "abc",
            &stored,
            store,
            SessionConfig::new(std::env::temp_dir()),
        )
    }

    #[test]
    fn seek_past_end_clamps() {
        let mut s = session();
        let d = s.manifest().duration();
        assert_eq!(
            s.handle(1, Command::Seek { t: d + 5.0 }).reply_seq(),
            Some(1)
        );
        assert_eq!(s.playback().time, d);
    }

    #[test]
    fn zero_speed_is_rejected_without_side_effects() {
        let mut s = session();
        let before = *s.playback();
        match s.handle(7, Command::SetSpeed { speed: 0.0 }) {
            Event::Error {
                seq, kind, code, ..
            } => {
                assert_eq!(seq, Some(7));
                assert_eq!(kind, ErrorKind::ValidationFailed);
                assert_eq!(code, "speed_must_be_positive");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(*s.playback(), before);
    }

    #[test]
    fn unknown_command_is_reported() {
        let mut s = session();
        match s.handle_text(r#"{"seq":3,"type":"Frobnicate"}"#) {
            Event::Error { seq, kind, .. } => {
                assert_eq!(seq, Some(3));
                assert_eq!(kind, ErrorKind::UnknownCommand);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn select_edit_undo_cycle() {
        let mut s = session();
        let n = s.current_cloud().len();
        let all = ShapeParam::Rect {
            p0: [0.0, 0.0],
            p1: [640.0, 360.0],
        };
        let Event::Ack {
            result: Some(r), ..
        } = s.handle(
            1,
            Command::Select {
                shape: all,
                mode: Default::default(),
            },
        )
        else {
            panic!("select failed")
        };
        let selected = r["count"].as_u64().unwrap() as usize;
        assert!(selected > n / 2);
        assert!(matches!(
            s.handle(2, Command::Edit { op: EditOp::Delete }),
            Event::Ack { .. }
        ));
        assert_eq!(s.current_cloud().len(), n - selected);
        assert!(matches!(s.handle(3, Command::Undo), Event::Ack { .. }));
        assert_eq!(s.current_cloud().len(), n);
        match s.handle(4, Command::Undo) {
            Event::Error { code, .. } => assert_eq!(code, "nothing_to_undo"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sphere_pick_centers_on_a_splat() {
        let mut s = session();
        let shape = ShapeParam::SpherePick {
            point: [320.0, 180.0],
            radius: 0.3,
        };
        let Event::Ack {
            result: Some(r), ..
        } = s.handle(
            1,
            Command::Select {
                shape,
                mode: Default::default(),
            },
        )
        else {
            panic!("pick failed")
        };
        assert!(r["count"].as_u64().unwrap() >= 1);
        let c: Vec<f32> = r["center"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap() as f32)
            .collect();
        assert!(s
            .current_cloud()
            .splats()
            .iter()
            .any(|sp| sp.position.to_array() == [c[0], c[1], c[2]]));
    }

    #[test]
    fn tick_renders_requested_format() {
        let mut s = session();
        s.handle(
            1,
            Command::Hello {
                format: Some(FrameFormat::Rgb8),
                width: Some(96),
                height: Some(64),
                overlay: None,
            },
        );
        let task = s.tick(0.0);
        let out = render_task(&task, 5, None, None).unwrap();
        assert_eq!(out.header.seq, 5);
        assert_eq!((out.header.width, out.header.height), (96, 64));
        assert_eq!(out.payload.len(), 96 * 64 * 3);
        assert_eq!(out.importance_source, "heuristic");
        s.commit_importance(out.map);
        assert!(s.importance().is_some());
        assert!(!s.dirty());
    }

    #[test]
    fn playing_tick_advances_time() {
        let mut s = session();
        s.handle(1, Command::Play);
        s.handle(2, Command::SetSpeed { speed: 2.0 });
        let task = s.tick(0.25);
        assert!((task.time - 0.5).abs() < 1e-12);
        assert_eq!(task.frame_index, 1);
    }
}
