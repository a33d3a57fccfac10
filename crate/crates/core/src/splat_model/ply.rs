//! Gaussian-splat PLY reading and writing.
//!
//! Input may be ASCII or binary little-endian; output is always binary
//! little-endian with the property order
//! `x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3`
//! followed by `f_rest_*` when the cloud carries higher-order SH terms.
//! Stored values are pre-activation: opacity is a logit, scales are logs and
//! color is the SH DC coefficient.

use glam::{Quat, Vec3};
use thiserror::Error;

use super::{Splat, SplatCloud};

/// Zeroth-order real spherical harmonic, `1 / (2·sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177;

/// Logits are clamped here so opacities of exactly 0 or 1 stay finite on disk.
const LOGIT_CLAMP: f64 = 16.0;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),
    #[error("vertex element lacks required property `{0}`")]
    MissingProperty(String),
    #[error("payload truncated at byte {offset}: header declares {expected} vertices, only {parsed} present")]
    Truncated {
        offset: usize,
        expected: usize,
        parsed: usize,
    },
    #[error("non-finite `{property}` in vertex {vertex} (byte {offset})")]
    NonFinite {
        vertex: usize,
        property: String,
        offset: usize,
    },
    #[error("vertex {vertex} has a zero rotation quaternion (byte {offset})")]
    DegenerateRotation { vertex: usize, offset: usize },
    #[error("bad ASCII value `{token}` at byte {offset}")]
    BadValue { token: String, offset: usize },
}

impl PlyError {
    /// Byte offset into the input where the problem was detected, if known.
    pub fn offset(&self) -> Option<usize> {
        match self {
            PlyError::Truncated { offset, .. }
            | PlyError::NonFinite { offset, .. }
            | PlyError::DegenerateRotation { offset, .. }
            | PlyError::BadValue { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    const END: &[u8] = b"end_header";
    let bad = |m: &str| PlyError::Header(m.to_string());
    if !bytes.starts_with(b"ply") {
        return Err(bad("missing `ply` magic"));
    }
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("missing end_header"))?;
    let mut body_offset = end + END.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in text.lines().skip(1) {
        let mut words = line.split_whitespace();
        match words.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let name = words
                    .next()
                    .ok_or_else(|| bad("format line without a name"))?;
                format = Some(match name {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            Some("element") => {
                let name = words.next().ok_or_else(|| bad("element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element"))?;
                let ty = words.next().ok_or_else(|| bad("property without a type"))?;
                let property = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(bad("malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| PlyError::Header(format!("unknown type `{ty}`")))?;
                    let name = words.next().ok_or_else(|| bad("property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(property);
            }
            Some(other) => return Err(PlyError::Header(format!("unexpected keyword `{other}`"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| bad("missing format line"))?,
        elements,
        body_offset,
    })
}

/// Where each needed attribute lives among a vertex's scalar values.
struct Layout {
    required: [usize; 14],
    rest: Vec<usize>,
}

fn vertex_layout(element: &Element) -> Result<(Layout, Vec<String>), PlyError> {
    // Index of each scalar property among the scalars of one vertex.
    let names: Vec<String> = element
        .properties
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { name, .. } => Some(name.clone()),
            Property::List { .. } => None,
        })
        .collect();
    let find = |n: &str| names.iter().position(|m| m == n);
    let mut required = [0usize; 14];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = find(name).ok_or_else(|| PlyError::MissingProperty(name.to_string()))?;
    }
    let mut rest: Vec<(usize, usize)> = names
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            n.strip_prefix("f_rest_")?
                .parse::<usize>()
                .ok()
                .map(|k| (k, i))
        })
        .collect();
    rest.sort_unstable();
    Ok((
        Layout {
            required,
            rest: rest.into_iter().map(|(_, i)| i).collect(),
        },
        names,
    ))
}

/// Sequential reader over the payload of one element at a time.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: Format,
}

enum ReadError {
    Eof,
    Bad(PlyError),
}

impl Body<'_> {
    fn next_token(&mut self) -> Result<&str, ReadError> {
        let b = self.bytes;
        while self.pos < b.len() && b[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < b.len() && !b[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ReadError::Eof);
        }
        std::str::from_utf8(&b[start..self.pos]).map_err(|_| {
            ReadError::Bad(PlyError::BadValue {
                token: String::from_utf8_lossy(&b[start..self.pos]).into_owned(),
                offset: start,
            })
        })
    }

    fn read(&mut self, ty: Scalar) -> Result<f64, ReadError> {
        match self.format {
            Format::BinaryLe => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(ReadError::Eof);
                }
                let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            Format::Ascii => {
                let start = self.pos;
                let token = self.next_token()?;
                token.parse::<f64>().map_err(|_| {
                    ReadError::Bad(PlyError::BadValue {
                        token: token.to_string(),
                        offset: start,
                    })
                })
            }
        }
    }

    /// Reads one element instance, appending its scalar values to `out`.
    fn read_instance(&mut self, element: &Element, out: &mut Vec<f64>) -> Result<(), ReadError> {
        for property in &element.properties {
            match property {
                Property::Scalar { ty, .. } => out.push(self.read(*ty)?),
                Property::List { count, item } => {
                    let n = self.read(*count)?;
                    if !(n >= 0.0) {
                        return Err(ReadError::Eof);
                    }
                    for _ in 0..n as usize {
                        self.read(*item)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parses a Gaussian-splat PLY and activates the stored attributes.
pub fn parse_ply(bytes: &[u8]) -> Result<SplatCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::Header("no vertex element".to_string()))?;
    let (layout, names) = vertex_layout(vertex)?;

    let mut body = Body {
        bytes,
        pos: header.body_offset,
        format: header.format,
    };
    let mut scratch = Vec::new();
    let mut splats = Vec::with_capacity(vertex.count.min(1 << 24));
    for element in &header.elements {
        let is_vertex = std::ptr::eq(element, vertex);
        for index in 0..element.count {
            scratch.clear();
            let start = body.pos;
            match body.read_instance(element, &mut scratch) {
                Ok(()) => {}
                Err(ReadError::Bad(e)) => return Err(e),
                Err(ReadError::Eof) => {
                    return Err(PlyError::Truncated {
                        offset: body.pos,
                        expected: vertex.count,
                        parsed: if is_vertex { index } else { splats.len() },
                    })
                }
            }
            if is_vertex {
                splats.push(activate(&scratch, &layout, &names, index, start)?);
            }
        }
    }
    Ok(SplatCloud::new(splats).expect("activated splats satisfy the cloud invariants"))
}

fn activate(
    values: &[f64],
    layout: &Layout,
    names: &[String],
    vertex: usize,
    offset: usize,
) -> Result<Splat, PlyError> {
    let non_finite = |slot: usize| PlyError::NonFinite {
        vertex,
        property: names[slot].clone(),
        offset,
    };
    for &slot in layout.required.iter().chain(&layout.rest) {
        if !values[slot].is_finite() {
            return Err(non_finite(slot));
        }
    }
    let r = |k: usize| values[layout.required[k]];

    let scale_raw = [r(7), r(8), r(9)];
    let mut scale = [0f32; 3];
    for k in 0..3 {
        let s = scale_raw[k].exp() as f32;
        if !s.is_finite() || s <= 0.0 {
            return Err(non_finite(layout.required[7 + k]));
        }
        scale[k] = s;
    }

    let (w, x, y, z) = (r(10), r(11), r(12), r(13));
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(PlyError::DegenerateRotation { vertex, offset });
    }
    let rotation = Quat::from_xyzw(
        (x / norm) as f32,
        (y / norm) as f32,
        (z / norm) as f32,
        (w / norm) as f32,
    )
    .normalize();

    let color = [0, 1, 2].map(|k| (SH_C0 * r(3 + k) + 0.5).clamp(0.0, 1.0) as f32);
    let position = Vec3::new(r(0) as f32, r(1) as f32, r(2) as f32);
    if !position.is_finite() {
        return Err(non_finite(layout.required[0]));
    }

    Ok(Splat {
        position,
        rotation,
        scale: Vec3::from_array(scale),
        opacity: sigmoid(r(6)) as f32,
        color,
        sh_rest: layout
            .rest
            .iter()
            .map(|&slot| values[slot] as f32)
            .collect(),
    })
}

/// Writes the cloud as binary little-endian PLY, undoing the activations.
pub fn serialize_ply(cloud: &SplatCloud) -> Vec<u8> {
    let rest = cloud.sh_rest_len();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for name in REQUIRED {
        header.push_str("property float ");
        header.push_str(name);
        header.push('\n');
    }
    for k in 0..rest {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    header.push_str("end_header\n");

    let mut out = Vec::with_capacity(header.len() + cloud.len() * 4 * (REQUIRED.len() + rest));
    out.extend_from_slice(header.as_bytes());
    for s in cloud.splats() {
        let opacity = s.opacity as f64;
        let logit = (opacity / (1.0 - opacity))
            .ln()
            .clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let q = s.rotation;
        let row = [
            s.position.x,
            s.position.y,
            s.position.z,
            ((s.color[0] as f64 - 0.5) / SH_C0) as f32,
            ((s.color[1] as f64 - 0.5) / SH_C0) as f32,
            ((s.color[2] as f64 - 0.5) / SH_C0) as f32,
            logit as f32,
            (s.scale.x as f64).ln() as f32,
            (s.scale.y as f64).ln() as f32,
            (s.scale.z as f64).ln() as f32,
            q.w,
            q.x,
            q.y,
            q.z,
        ];
        for v in row.iter().chain(&s.sh_rest) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ascii(rows: &[[f32; 14]], declared: usize) -> Vec<u8> {
        let mut s = format!("ply\nformat ascii 1.0\nelement vertex {declared}\n");
        for name in REQUIRED {
            s.push_str(&format!("property float {name}\n"));
        }
        s.push_str("end_header\n");
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s.into_bytes()
    }

    const ZERO_ROW: [f32; 14] = [0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 0.];

    #[test]
    fn zero_logit_is_half_opacity() {
        let cloud = parse_ply(&ascii(&[ZERO_ROW], 1)).unwrap();
        assert_eq!(cloud.splats()[0].opacity, 0.5);
    }

    #[test]
    fn unit_scale_and_normalized_rotation() {
        let mut row = ZERO_ROW;
        row[10] = 2.0;
        let cloud = parse_ply(&ascii(&[row], 1)).unwrap();
        let s = &cloud.splats()[0];
        assert_eq!(s.scale, Vec3::ONE);
        assert_eq!(s.rotation, Quat::IDENTITY);
    }

    #[test]
    fn zero_dc_is_mid_gray() {
        let cloud = parse_ply(&ascii(&[ZERO_ROW], 1)).unwrap();
        assert_eq!(cloud.splats()[0].color, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn short_payload_is_truncated() {
        let rows = vec![ZERO_ROW; 9];
        let err = parse_ply(&ascii(&rows, 10)).unwrap_err();
        assert!(
            matches!(
                err,
                PlyError::Truncated {
                    expected: 10,
                    parsed: 9,
                    ..
                }
            ),
            "{err:?}"
        );

        let cloud = SplatCloud::new(vec![
            Splat::new(
                Vec3::ZERO,
                Quat::IDENTITY,
                Vec3::ONE,
                0.5,
                [0.5; 3]
            );
            10
        ])
        .unwrap();
        let bytes = serialize_ply(&cloud);
        let err = parse_ply(&bytes[..bytes.len() - 56]).unwrap_err();
        assert!(
            matches!(
                err,
                PlyError::Truncated {
                    expected: 10,
                    parsed: 9,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn missing_property_is_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nend_header\n";
        assert_eq!(
            parse_ply(text.as_bytes()).unwrap_err(),
            PlyError::MissingProperty("z".to_string())
        );
    }

    #[test]
    fn big_endian_is_unsupported() {
        let text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(PlyError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn nan_is_rejected() {
        let mut text = String::from_utf8(ascii(&[ZERO_ROW], 1)).unwrap();
        text = text.replacen("\n0 0 0", "\nnan 0 0", 1);
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(PlyError::NonFinite { vertex: 0, .. })
        ));
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        let mut row = ZERO_ROW;
        row[10] = 0.0;
        assert!(matches!(
            parse_ply(&ascii(&[row], 1)),
            Err(PlyError::DegenerateRotation { .. })
        ));
    }

    #[test]
    fn empty_cloud_serializes() {
        let bytes = serialize_ply(&SplatCloud::empty());
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert_eq!(parse_ply(&bytes).unwrap().len(), 0);
    }

    #[test]
    fn output_header_is_canonical() {
        let bytes = serialize_ply(&SplatCloud::empty());
        let expected = "ply\nformat binary_little_endian 1.0\nelement vertex 0\n\
            property float x\nproperty float y\nproperty float z\n\
            property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n\
            property float opacity\n\
            property float scale_0\nproperty float scale_1\nproperty float scale_2\n\
            property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
            end_header\n";
        assert_eq!(String::from_utf8(bytes).unwrap(), expected);
    }

    #[test]
    fn full_opacity_clamps_logit() {
        let cloud = SplatCloud::new(vec![Splat::new(
            Vec3::ZERO,
            Quat::IDENTITY,
            Vec3::ONE,
            1.0,
            [0.5; 3],
        )])
        .unwrap();
        let bytes = serialize_ply(&cloud);
        let header_len = bytes.len() - 14 * 4;
        let logit = f32::from_le_bytes(bytes[header_len + 24..header_len + 28].try_into().unwrap());
        assert_eq!(logit, 16.0);
        // 1 / (1 + e^-16) = 0.99999988746...
        let back = parse_ply(&bytes).unwrap();
        assert!(back.splats()[0].opacity >= 0.9999);
    }

    #[test]
    fn extra_elements_and_lists_are_skipped() {
        let mut text =
            String::from("ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 1\n");
        for name in REQUIRED {
            text.push_str(&format!("property float {name}\n"));
        }
        text.push_str("property float f_rest_1\nproperty float f_rest_0\n");
        text.push_str("element face 1\nproperty list uchar int vertex_indices\nend_header\n");
        text.push_str("1 2 3 0 0 0 0 0 0 0 1 0 0 0 0.25 0.75\n3 0 0 0\n");
        let cloud = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.splats()[0].position, Vec3::new(1.0, 2.0, 3.0));
        // f_rest ordered by index, not by header position.
        assert_eq!(cloud.splats()[0].sh_rest, vec![0.75, 0.25]);
    }

    #[test]
    fn binary_with_double_and_crlf_header() {
        let mut bytes = b"ply\r\nformat binary_little_endian 1.0\r\nelement vertex 1\r\n".to_vec();
        for name in REQUIRED {
            bytes.extend_from_slice(format!("property double {name}\r\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\r\n");
        for v in [
            0.5f64, -1.0, 2.0, 0., 0., 0., 0., 0., 0., 0., 1., 0., 0., 0.,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_ply(&bytes).unwrap();
        assert_eq!(cloud.splats()[0].position, Vec3::new(0.5, -1.0, 2.0));
    }
}
