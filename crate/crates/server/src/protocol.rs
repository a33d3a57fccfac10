//! Wire protocol between a viewer and a session.
//!
//! Client to server: JSON text messages. Commands carry a client sequence
//! number `seq` and a `type` tag; the server answers each with exactly one
//! `ack` or `error` event echoing `seq`. Flow control is separate: after
//! displaying a frame the client sends `{"type":"frame_ack","frame_seq":n}`,
//! which is never acknowledged.
//!
//! Server to client: JSON [`Event`]s as text messages and frames as binary
//! messages, each a 20-byte little-endian [`FrameHeader`] followed by the
//! payload (PNG or packed RGB8).

use serde::{Deserialize, Serialize};
use serde_json::Value;
use splat4d_core::foveation::FoveationConfig;
use splat4d_core::selection_edit::{EditOp, SelectMode, SelectionShape};
use splat4d_core::trajectory::{CameraPose, Trajectory};
use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"S4DF";
pub const FRAME_HEADER_LEN: usize = 20;
/// Header flag bit set when the frame was rendered with foveation.
pub const FLAG_FOVEATED: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("frame shorter than its {FRAME_HEADER_LEN}-byte header")]
    ShortFrame,
    #[error("bad frame magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown frame format {0}")]
    UnknownFormat(u8),
    #[error("raw frame payload is {got} bytes, header implies {expected}")]
    PayloadSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    #[default]
    Png,
    Rgb8,
}

impl FrameFormat {
    pub fn code(self) -> u8 {
        match self {
            FrameFormat::Png => 0,
            FrameFormat::Rgb8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ProtocolError> {
        match code {
            0 => Ok(FrameFormat::Png),
            1 => Ok(FrameFormat::Rgb8),
            other => Err(ProtocolError::UnknownFormat(other)),
        }
    }
}

/// Layout: magic[4] seq:u32 width:u16 height:u16 format:u8 flags:u8
/// reserved:u16 (zero) sim_time_ms:u32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub seq: u32,
    pub width: u16,
    pub height: u16,
    pub format: FrameFormat,
    pub flags: u8,
    pub sim_time_ms: u32,
}

impl FrameHeader {
    pub fn foveated(&self) -> bool {
        self.flags & FLAG_FOVEATED != 0
    }

    pub fn encode(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut out = [0u8; FRAME_HEADER_LEN];
        out[0..4].copy_from_slice(&FRAME_MAGIC);
        out[4..8].copy_from_slice(&self.seq.to_le_bytes());
        out[8..10].copy_from_slice(&self.width.to_le_bytes());
        out[10..12].copy_from_slice(&self.height.to_le_bytes());
        out[12] = self.format.code();
        out[13] = self.flags;
        out[16..20].copy_from_slice(&self.sim_time_ms.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let h: &[u8; FRAME_HEADER_LEN] = bytes
            .get(..FRAME_HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or(ProtocolError::ShortFrame)?;
        let magic = [h[0], h[1], h[2], h[3]];
        if magic != FRAME_MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        Ok(Self {
            seq: u32::from_le_bytes([h[4], h[5], h[6], h[7]]),
            width: u16::from_le_bytes([h[8], h[9]]),
            height: u16::from_le_bytes([h[10], h[11]]),
            format: FrameFormat::from_code(h[12])?,
            flags: h[13],
            sim_time_ms: u32::from_le_bytes([h[16], h[17], h[18], h[19]]),
        })
    }
}

pub fn encode_frame(header: &FrameHeader, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(payload);
    out
}

/// Splits a binary frame message, checking raw payloads against the header.
pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), ProtocolError> {
    let header = FrameHeader::decode(bytes)?;
    let payload = &bytes[FRAME_HEADER_LEN..];
    if header.format == FrameFormat::Rgb8 {
        let expected = header.width as usize * header.height as usize * 3;
        if payload.len() != expected {
            return Err(ProtocolError::PayloadSize {
                expected,
                got: payload.len(),
            });
        }
    }
    Ok((header, payload))
}

/// Selection shapes as sent by a viewer. `sphere_pick` carries a screen
/// point; the server resolves it to the splat under the cursor and uses
/// that splat's position as the sphere center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeParam {
    Rect { p0: [f64; 2], p1: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
    Lasso { vertices: Vec<[f64; 2]> },
    Brush { stroke: Vec<[f64; 2]>, radius: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    SpherePick { point: [f64; 2], radius: f64 },
}

impl ShapeParam {
    /// The shape with a world-space sphere center, `None` for `sphere_pick`.
    pub fn resolved(&self) -> Option<SelectionShape> {
        Some(match self.clone() {
            ShapeParam::Rect { p0, p1 } => SelectionShape::Rect { p0, p1 },
            ShapeParam::Polygon { vertices } => SelectionShape::Polygon { vertices },
            ShapeParam::Lasso { vertices } => SelectionShape::Lasso { vertices },
            ShapeParam::Brush { stroke, radius } => SelectionShape::Brush { stroke, radius },
            ShapeParam::Sphere { center, radius } => SelectionShape::Sphere { center, radius },
            ShapeParam::SpherePick { .. } => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SinkParam {
    /// PNG files plus a JSON sidecar in a fresh directory.
    #[default]
    ImageSequence,
    /// H.264 MP4 through an `ffmpeg` found on PATH.
    Ffmpeg,
    /// Custom encoder command; `{width}`, `{height}`, `{fps}` and `{output}`
    /// are substituted, raw RGB24 frames arrive on stdin.
    Encoder { template: String, extension: String },
}

fn default_export_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportParams {
    pub trajectory: Trajectory,
    #[serde(default = "default_export_fps")]
    pub fps: f64,
    /// Defaults to the session's render size.
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    #[serde(default)]
    pub smoothing_alpha: Option<f64>,
    #[serde(default)]
    pub sink: SinkParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Negotiates the frame format and render size; all fields optional.
    Hello {
        #[serde(default)]
        format: Option<FrameFormat>,
        #[serde(default)]
        width: Option<u32>,
        #[serde(default)]
        height: Option<u32>,
        /// Include the importance map in stats events.
        #[serde(default)]
        overlay: Option<bool>,
    },
    LoadScene {
        scene: String,
    },
    SetCamera {
        pose: CameraPose,
    },
    Seek {
        t: f64,
    },
    Play,
    Pause,
    SetSpeed {
        speed: f64,
    },
    SetFps {
        fps: f64,
    },
    SetLoop {
        enabled: bool,
    },
    Select {
        shape: ShapeParam,
        #[serde(default)]
        mode: SelectMode,
    },
    Edit {
        op: EditOp,
    },
    Undo,
    SetFoveation {
        config: FoveationConfig,
    },
    SetPrompt {
        text: String,
    },
    StartExport(ExportParams),
    Ping,
}

/// Every `type` tag a command may carry.
pub const COMMAND_TYPES: &[&str] = &[
    "hello",
    "load_scene",
    "set_camera",
    "seek",
    "play",
    "pause",
    "set_speed",
    "set_fps",
    "set_loop",
    "select",
    "edit",
    "undo",
    "set_foveation",
    "set_prompt",
    "start_export",
    "ping",
];

pub const FRAME_ACK_TYPE: &str = "frame_ack";

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Command { seq: u64, command: Command },
    FrameAck { frame_seq: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    UnknownCommand,
    ValidationFailed,
    ExportBusy,
    ExportFailed,
}

/// A rejected command: `seq` is `None` only when the message had none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandError {
    pub seq: Option<u64>,
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
}

impl CommandError {
    pub fn validation(seq: u64, code: &str, message: impl Into<String>) -> Self {
        Self {
            seq: Some(seq),
            kind: ErrorKind::ValidationFailed,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn into_event(self) -> Event {
        Event::Error {
            seq: self.seq,
            kind: self.kind,
            code: self.code,
            message: self.message,
        }
    }
}

fn malformed(seq: Option<u64>, message: impl Into<String>) -> CommandError {
    CommandError {
        seq,
        kind: ErrorKind::ValidationFailed,
        code: "malformed_payload".to_string(),
        message: message.into(),
    }
}

/// Parses one client text message.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, CommandError> {
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(None, e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed(None, "message must be a JSON object"));
    };
    let tag = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    if tag == FRAME_ACK_TYPE {
        let frame_seq = obj
            .get("frame_seq")
            .and_then(Value::as_u64)
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| malformed(None, "frame_ack needs a u32 frame_seq"))?;
        return Ok(ClientMessage::FrameAck { frame_seq });
    }
    let seq = match obj.remove("seq") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| malformed(None, "seq must be a non-negative integer"))?,
        None => {
            return Err(CommandError {
                seq: None,
                kind: ErrorKind::ValidationFailed,
                code: "missing_seq".to_string(),
                message: "commands must carry a sequence number".to_string(),
            })
        }
    };
    if !COMMAND_TYPES.contains(&tag.as_str()) {
        return Err(CommandError {
            seq: Some(seq),
            kind: ErrorKind::UnknownCommand,
            code: "unknown_command".to_string(),
            message: format!("unknown command type `{tag}`"),
        });
    }
    let keys: Vec<String> = obj
        .iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, _)| k.clone())
        .collect();
    let command: Command = serde_json::from_value(Value::Object(obj))
        .map_err(|e| malformed(Some(seq), e.to_string()))?;
    // Internally tagged unit variants ignore extra fields, so compare
    // against what the parsed command serializes back to.
    if let Value::Object(known) = serde_json::to_value(&command).expect("commands serialize") {
        if let Some(extra) = keys.iter().find(|k| !known.contains_key(k.as_str())) {
            return Err(malformed(Some(seq), format!("unknown field `{extra}`")));
        }
    }
    Ok(ClientMessage::Command { seq, command })
}

/// Serializes a command with its sequence number, as a client would.
pub fn command_text(seq: u64, command: &Command) -> String {
    let mut value = serde_json::to_value(command).expect("commands serialize");
    value
        .as_object_mut()
        .expect("commands serialize as objects")
        .insert("seq".to_string(), seq.into());
    value.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsPayload {
    pub frame_seq: u32,
    pub time: f64,
    pub frame_index: usize,
    pub playing: bool,
    /// Frames produced per second over the last window.
    pub fps: f64,
    pub foveal_fraction: f64,
    pub importance_source: String,
    pub dropped_frames: u64,
    pub in_flight: usize,
    pub splats: usize,
    pub selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<Vec<f32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// First message on every connection.
    Hello {
        session: String,
        scene: String,
        frames: usize,
        duration: f64,
        width: u32,
        height: u32,
        format: FrameFormat,
        resumed: bool,
    },
    Ack {
        seq: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<Value>,
    },
    Error {
        seq: Option<u64>,
        kind: ErrorKind,
        code: String,
        message: String,
    },
    ExportProgress {
        job: u64,
        done: u64,
        total: u64,
    },
    ExportDone {
        job: u64,
        output: String,
        frames: u64,
    },
    Diagnostic {
        message: String,
    },
    Stats(StatsPayload),
}

impl Event {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }

    /// Sequence number of an ack or error.
    pub fn reply_seq(&self) -> Option<u64> {
        match self {
            Event::Ack { seq, .. } => Some(*seq),
            Event::Error { seq, .. } => *seq,
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = FrameHeader {
            seq: 0xdead_beef,
            width: 1280,
            height: 720,
            format: FrameFormat::Rgb8,
            flags: FLAG_FOVEATED,
            sim_time_ms: 123_456,
        };
        assert_eq!(FrameHeader::decode(&h.encode()).unwrap(), h);
        assert!(h.foveated());
    }

    #[test]
    fn header_rejects_garbage() {
        assert_eq!(FrameHeader::decode(b"S4DF"), Err(ProtocolError::ShortFrame));
        let mut bytes = [0u8; 20];
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(
            FrameHeader::decode(&bytes),
            Err(ProtocolError::BadMagic(*b"XXXX"))
        );
        bytes[..4].copy_from_slice(b"S4DF");
        bytes[12] = 9;
        assert_eq!(
            FrameHeader::decode(&bytes),
            Err(ProtocolError::UnknownFormat(9))
        );
    }

    #[test]
    fn raw_payload_must_match_dimensions() {
        let h = FrameHeader {
            seq: 1,
            width: 2,
            height: 2,
            format: FrameFormat::Rgb8,
            flags: 0,
            sim_time_ms: 0,
        };
        assert!(decode_frame(&encode_frame(&h, &[0; 12])).is_ok());
        assert_eq!(
            decode_frame(&encode_frame(&h, &[0; 11])).unwrap_err(),
            ProtocolError::PayloadSize {
                expected: 12,
                got: 11
            }
        );
    }

    #[test]
    fn parses_commands() {
        let msg = parse_client_message(r#"{"seq":4,"type":"set_speed","speed":2.0}"#).unwrap();
        assert_eq!(
            msg,
            ClientMessage::Command {
                seq: 4,
                command: Command::SetSpeed { speed: 2.0 }
            }
        );
        let msg = parse_client_message(r#"{"type":"frame_ack","frame_seq":17}"#).unwrap();
        assert_eq!(msg, ClientMessage::FrameAck { frame_seq: 17 });
    }

    #[test]
    fn unknown_and_malformed_commands() {
        let e = parse_client_message(r#"{"seq":9,"type":"Frobnicate"}"#).unwrap_err();
        assert_eq!(
            (e.seq, e.kind, e.code.as_str()),
            (Some(9), ErrorKind::UnknownCommand, "unknown_command")
        );
        let e = parse_client_message(r#"{"seq":2,"type":"seek"}"#).unwrap_err();
        assert_eq!(
            (e.seq, e.kind, e.code.as_str()),
            (Some(2), ErrorKind::ValidationFailed, "malformed_payload")
        );
        let e = parse_client_message(r#"{"seq":3,"type":"play","extra":1}"#).unwrap_err();
        assert_eq!(e.code, "malformed_payload");
        let e = parse_client_message(r#"{"type":"ping"}"#).unwrap_err();
        assert_eq!((e.seq, e.code.as_str()), (None, "missing_seq"));
        let e = parse_client_message("[1,2]").unwrap_err();
        assert_eq!(e.seq, None);
    }

    #[test]
    fn command_text_round_trips() {
        let commands = [
            Command::Play,
            Command::Seek { t: 0.25 },
            Command::Select {
                shape: ShapeParam::SpherePick {
                    point: [3.0, 4.0],
                    radius: 0.5,
                },
                mode: SelectMode::Add,
            },
            Command::Edit {
                op: EditOp::Translate {
                    delta: [1.0, 0.0, -2.0],
                },
            },
            Command::SetFoveation {
                config: FoveationConfig::default(),
            },
        ];
        for (seq, command) in commands.into_iter().enumerate() {
            let text = command_text(seq as u64, &command);
            assert_eq!(
                parse_client_message(&text).unwrap(),
                ClientMessage::Command {
                    seq: seq as u64,
                    command
                }
            );
        }
    }

    #[test]
    fn every_listed_type_is_a_command() {
        for tag in COMMAND_TYPES {
            let e = parse_client_message(&format!(r#"{{"seq":1,"type":"{tag}"}}"#));
            if let Err(e) = e {
                assert_ne!(e.kind, ErrorKind::UnknownCommand, "{tag}");
            }
        }
    }

    #[test]
    fn events_serialize_with_type_tag() {
        let ack = Event::Ack {
            seq: 3,
            result: None,
        };
        assert_eq!(ack.to_text(), r#"{"type":"ack","seq":3}"#);
        let err =
            CommandError::validation(5, "speed_must_be_positive", "speed must be > 0").into_event();
        let v: Value = serde_json::from_str(&err.to_text()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["kind"], "validation_failed");
        assert_eq!(v["code"], "speed_must_be_positive");
        assert_eq!(v["seq"], 5);
    }
}
