//! 8-bit sRGB images and PNG encoding at the output boundary.
//!
//! Linear values are clamped to [0,1], mapped through the piecewise sRGB
//! transfer function (`12.92·c` below 0.0031308, else
//! `1.055·c^(1/2.4) − 0.055`, evaluated in `f32`) and quantized with
//! `floor(s·255 + 0.5)`. NaN maps to 0.

use thiserror::Error;

use crate::rasterizer::Framebuffer;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("PNG decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported PNG layout {0:?}")]
    Layout(png::ColorType),
}

/// Tightly packed RGB8 pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn from_framebuffer(fb: &Framebuffer) -> Self {
        let mut data = Vec::with_capacity(fb.color.len() * 3);
        for px in &fb.color {
            data.extend(px.iter().map(|&c| linear_to_srgb8(c)));
        }
        Self {
            width: fb.width,
            height: fb.height,
            data,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            encoder.set_compression(png::Compression::Fast);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.data)?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Layout(info.color_type));
        }
        buf.truncate(info.buffer_size());
        Ok(Self {
            width: info.width,
            height: info.height,
            data: buf,
        })
    }
}

pub fn linear_to_srgb8(c: f32) -> u8 {
    if c.is_nan() {
        return 0;
    }
    let c = c.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_anchor_points() {
        assert_eq!(linear_to_srgb8(0.0), 0);
        assert_eq!(linear_to_srgb8(1.0), 255);
        assert_eq!(linear_to_srgb8(-3.0), 0);
        assert_eq!(linear_to_srgb8(7.0), 255);
        assert_eq!(linear_to_srgb8(f32::NAN), 0);
        // 0.5 linear is 0.7354 sRGB, 187.5 -> 188.
        assert_eq!(linear_to_srgb8(0.5), 188);
        // Linear segment: 0.002 * 12.92 * 255 = 6.59 -> 7.
        assert_eq!(linear_to_srgb8(0.002), 7);
    }

    #[test]
    fn transfer_is_monotone() {
        let mut last = 0;
        for i in 0..=10_000 {
            let v = linear_to_srgb8(i as f32 / 10_000.0);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn png_round_trip() {
        let img = RgbImage {
            width: 3,
            height: 2,
            data: (0..18).map(|v| v * 13).collect(),
        };
        let png = img.encode_png().unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(RgbImage::decode_png(&png).unwrap(), img);
    }
}
