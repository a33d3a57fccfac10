use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SOURCE_FPS: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("manifest parse error: {0}")]
    ParseError(String),
    #[error("timestamps must strictly increase (frame {index}: {previous} then {current})")]
    NonMonotoneTimestamps {
        index: usize,
        previous: f64,
        current: f64,
    },
    #[error("sequence has no frames")]
    EmptySequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Path (relative to the manifest) or scene-frame id.
    #[serde(rename = "file")]
    pub frame_ref: String,
    #[serde(rename = "t")]
    pub timestamp: f64,
}

/// Ordered frame timestamps of a 4D sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceManifest {
    source_fps: f64,
    frames: Vec<FrameEntry>,
    duration: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    source_fps: Option<f64>,
    frames: Vec<RawFrame>,
    #[serde(default)]
    duration: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    file: String,
    #[serde(default)]
    t: Option<f64>,
}

impl SequenceManifest {
    /// Validates and completes a frame list. Missing timestamps become
    /// `index / source_fps`; a missing duration becomes
    /// `last timestamp + 1 / source_fps`.
    pub fn new(
        frames: Vec<(String, Option<f64>)>,
        source_fps: Option<f64>,
        duration: Option<f64>,
    ) -> Result<Self, ManifestError> {
        let source_fps = source_fps.unwrap_or(DEFAULT_SOURCE_FPS);
        if !(source_fps.is_finite() && source_fps > 0.0) {
            return Err(ManifestError::ParseError(format!(
                "source_fps must be positive, got {source_fps}"
            )));
        }
        if frames.is_empty() {
            return Err(ManifestError::EmptySequence);
        }
        let frames: Vec<FrameEntry> = frames
            .into_iter()
            .enumerate()
            .map(|(i, (frame_ref, t))| FrameEntry {
                frame_ref,
                timestamp: t.unwrap_or(i as f64 / source_fps),
            })
            .collect();
        if let Some(bad) = frames.iter().find(|f| !f.timestamp.is_finite()) {
            return Err(ManifestError::ParseError(format!(
                "non-finite timestamp for {}",
                bad.frame_ref
            )));
        }
        if frames[0].timestamp != 0.0 {
            return Err(ManifestError::ParseError(format!(
                "first timestamp must be 0, got {}",
                frames[0].timestamp
            )));
        }
        for (index, pair) in frames.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(ManifestError::NonMonotoneTimestamps {
                    index: index + 1,
                    previous: pair[0].timestamp,
                    current: pair[1].timestamp,
                });
            }
        }
        let last = frames.last().map_or(0.0, |f| f.timestamp);
        let duration = duration.unwrap_or(last + 1.0 / source_fps);
        if !duration.is_finite() || duration < last {
            return Err(ManifestError::ParseError(format!(
                "duration {duration} is shorter than the last timestamp {last}"
            )));
        }
        Ok(Self {
            source_fps,
            frames,
            duration,
        })
    }

    /// Evenly spaced frames at `source_fps`, in the given order.
    pub fn uniform(frame_refs: Vec<String>, source_fps: f64) -> Result<Self, ManifestError> {
        Self::new(
            frame_refs.into_iter().map(|f| (f, None)).collect(),
            Some(source_fps),
            None,
        )
    }

    pub fn source_fps(&self) -> f64 {
        self.source_fps
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|f| f.timestamp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Parses the JSON manifest format
/// `{ "source_fps": 30, "frames": [ { "file": "...", "t": 0.0 } ], "duration": 1.0 }`.
pub fn load_manifest(text: &str) -> Result<SequenceManifest, ManifestError> {
    let raw: RawManifest =
        serde_json::from_str(text).map_err(|e| ManifestError::ParseError(e.to_string()))?;
    SequenceManifest::new(
        raw.frames.into_iter().map(|f| (f.file, f.t)).collect(),
        raw.source_fps,
        raw.duration,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_spacing_when_timestamps_omitted() {
        let m = load_manifest(
            r#"{"source_fps":30,"frames":[{"file":"a.ply"},{"file":"b.ply"},{"file":"c.ply"}]}"#,
        )
        .unwrap();
        let ts: Vec<f64> = m.timestamps().collect();
        assert_eq!(ts, vec![0.0, 1.0 / 30.0, 2.0 / 30.0]);
        assert_eq!(m.duration(), 2.0 / 30.0 + 1.0 / 30.0);
        assert!((m.duration() - 3.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn non_monotone_is_rejected() {
        let err = load_manifest(
            r#"{"frames":[{"file":"a","t":0},{"file":"b","t":0.5},{"file":"c","t":0.25}]}"#,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ManifestError::NonMonotoneTimestamps { index: 2, .. }
        ));
    }

    #[test]
    fn single_frame_lasts_one_source_period() {
        let m = load_manifest(r#"{"frames":[{"file":"a","t":0}]}"#).unwrap();
        assert_eq!(m.duration(), 1.0 / DEFAULT_SOURCE_FPS);
    }

    #[test]
    fn empty_and_malformed() {
        assert_eq!(
            load_manifest(r#"{"frames":[]}"#),
            Err(ManifestError::EmptySequence)
        );
        assert!(matches!(
            load_manifest("{"),
            Err(ManifestError::ParseError(_))
        ));
        assert!(matches!(
            load_manifest(r#"{"frames":[{"file":"a","t":0.1}]}"#),
            Err(ManifestError::ParseError(_))
        ));
        assert!(matches!(
            load_manifest(r#"{"frames":[{"file":"a","t":0},{"file":"b","t":1}],"duration":0.5}"#),
            Err(ManifestError::ParseError(_))
        ));
    }

    #[test]
    fn explicit_duration_is_kept() {
        let m = load_manifest(
            r#"{"source_fps":10,"frames":[{"file":"a","t":0},{"file":"b","t":1}],"duration":1.0}"#,
        )
        .unwrap();
        assert_eq!(m.duration(), 1.0);
        assert_eq!(m.source_fps(), 10.0);
    }
}
