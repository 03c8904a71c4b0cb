use std::io::Cursor;

use base64::Engine as _;
use glam::DVec3;

use super::RenderError;

/// Camera-space normals with a coverage flag per pixel, row-major from the
/// top-left corner. Uncovered pixels hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: u32,
    pub height: u32,
    pub normals: Vec<DVec3>,
    pub coverage: Vec<bool>,
}

impl NormalMap {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            normals: vec![DVec3::ZERO; n],
            coverage: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    pub fn same_size(&self, width: u32, height: u32) -> bool {
        self.width == width && self.height == height
    }

    /// Rescales covered normals to unit length and zeroes uncovered ones.
    pub fn renormalized(mut self) -> Self {
        for (n, &c) in self.normals.iter_mut().zip(&self.coverage) {
            *n = if c { n.normalize_or(DVec3::Z) } else { DVec3::ZERO };
        }
        self
    }

    /// Checks the unit-normal / zero-background invariant.
    pub fn check_invariants(&self, tolerance: f64) -> bool {
        self.normals.len() == self.coverage.len()
            && self.normals.iter().zip(&self.coverage).all(|(n, &c)| {
                if c {
                    (n.length() - 1.0).abs() <= tolerance
                } else {
                    *n == DVec3::ZERO
                }
            })
    }

    /// 16-bit RGBA PNG: `rgb = round((n + 1) / 2 * 65535)`, alpha 65535 where
    /// covered and 0 elsewhere.
    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut data = Vec::with_capacity(self.len() * 8);
        for (n, &c) in self.normals.iter().zip(&self.coverage) {
            for v in [n.x, n.y, n.z] {
                data.extend_from_slice(&quantize(v).to_be_bytes());
            }
            let alpha: u16 = if c { u16::MAX } else { 0 };
            data.extend_from_slice(&alpha.to_be_bytes());
        }
        encode_png(
            self.width,
            self.height,
            png::ColorType::Rgba,
            png::BitDepth::Sixteen,
            &data,
        )
    }

    /// Inverse of [`NormalMap::to_png`]. Decoded normals are the dequantized
    /// channel values, not renormalized, so that re-encoding reproduces the
    /// input bytes exactly. Pixels with alpha below half are uncovered.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let (info, buf) = decode_png(bytes)?;
        if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Sixteen {
            return Err(RenderError::Png(format!(
                "normal maps must be 16-bit RGBA, got {:?} {:?}",
                info.color_type, info.bit_depth
            )));
        }
        let mut map = Self::empty(info.width, info.height);
        for (i, px) in buf.chunks_exact(8).enumerate() {
            let ch = |k: usize| u16::from_be_bytes([px[2 * k], px[2 * k + 1]]);
            if ch(3) >= 0x8000 {
                map.coverage[i] = true;
                map.normals[i] = DVec3::new(dequantize(ch(0)), dequantize(ch(1)), dequantize(ch(2)));
            }
        }
        Ok(map)
    }

    pub fn to_base64_png(&self) -> Result<String, RenderError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.to_png()?))
    }

    pub fn from_base64_png(text: &str) -> Result<Self, RenderError> {
        Self::from_png(&decode_base64(text)?)
    }

    /// The map as it survives a PNG round trip.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for (n, &c) in out.normals.iter_mut().zip(&self.coverage) {
            if c {
                *n = DVec3::new(
                    dequantize(quantize(n.x)),
                    dequantize(quantize(n.y)),
                    dequantize(quantize(n.z)),
                );
            } else {
                *n = DVec3::ZERO;
            }
        }
        out
    }
}

#[inline]
fn quantize(v: f64) -> u16 {
    ((v + 1.0) * 0.5 * 65535.0).round().clamp(0.0, 65535.0) as u16
}

#[inline]
fn dequantize(q: u16) -> f64 {
    q as f64 / 65535.0 * 2.0 - 1.0
}

/// Binary per-pixel selection (the brush / edit region).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// 8-bit grayscale PNG, 255 = selected.
    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let data: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_png(
            self.width,
            self.height,
            png::ColorType::Grayscale,
            png::BitDepth::Eight,
            &data,
        )
    }

    /// Accepts 8-bit grayscale (threshold 128) or any PNG whose first channel
    /// can be thresholded after expansion to 8 bits.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let (info, buf) = decode_png(bytes)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(RenderError::Png(format!(
                "masks must be 8-bit, got {:?}",
                info.bit_depth
            )));
        }
        let channels = info.color_type.samples();
        let data = buf.chunks_exact(channels).map(|px| px[0] >= 128).collect();
        Ok(Self {
            width: info.width,
            height: info.height,
            data,
        })
    }

    pub fn to_base64_png(&self) -> Result<String, RenderError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.to_png()?))
    }

    pub fn from_base64_png(text: &str) -> Result<Self, RenderError> {
        Self::from_png(&decode_base64(text)?)
    }
}

fn decode_base64(text: &str) -> Result<Vec<u8>, RenderError> {
    base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| RenderError::Png(format!("invalid base64: {e}")))
}

fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc
            .write_header()
            .map_err(|e| RenderError::Png(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| RenderError::Png(e.to_string()))?;
        writer.finish().map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}

struct PngInfo {
    width: u32,
    height: u32,
    color_type: png::ColorType,
    bit_depth: png::BitDepth,
}

fn decode_png(bytes: &[u8]) -> Result<(PngInfo, Vec<u8>), RenderError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| RenderError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RenderError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| RenderError::Png(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    if matches!(frame.color_type, png::ColorType::Indexed) {
        return Err(RenderError::Png("indexed PNGs are not supported".into()));
    }
    Ok((
        PngInfo {
            width: frame.width,
            height: frame.height,
            color_type: frame.color_type,
            bit_depth: frame.bit_depth,
        },
        buf,
    ))
}
