use std::path::Path;

use crate::error::{Error, Result};
use crate::msnet::NormalMap;
use crate::tensor::Tensor;

use super::atomic_write;

/// Interleaved 32-bit float image, rows stored top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    /// 1 (grey) or 3 (colour).
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("PFM supports 1 or 3 channels, not {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape {
                op: "float_image",
                expected: vec![height, width, channels],
                actual: vec![data.len()],
            });
        }
        Ok(FloatImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// From a planar `[C,H,W]` tensor (values rounded to f32).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::Shape {
                op: "float_image",
                expected: vec![3, 0, 0],
                actual: t.shape().to_vec(),
            });
        };
        let hw = h * w;
        let mut data = Vec::with_capacity(c * hw);
        for px in 0..hw {
            for ch in 0..c {
                data.push(t.data()[ch * hw + px] as f32);
            }
        }
        Self::new(w, h, c, data)
    }

    /// Planar `[C,H,W]` f64 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut data = vec![0.0; self.channels * hw];
        for (i, v) in self.data.iter().enumerate() {
            data[(i % self.channels) * hw + i / self.channels] = *v as f64;
        }
        Tensor::new(&[self.channels, self.height, self.width], data).expect("consistent shape")
    }

    pub fn from_normals(n: &NormalMap) -> Result<Self> {
        let data = n.values().iter().flat_map(|v| v.map(|x| x as f32)).collect();
        Self::new(n.width(), n.height(), 3, data)
    }

    pub fn to_normals(&self, mask: Vec<bool>) -> Result<NormalMap> {
        if self.channels != 3 {
            return Err(Error::invalid("a normal map needs 3 channels"));
        }
        let values = self
            .data
            .chunks_exact(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect();
        NormalMap::new(self.height, self.width, values, mask)
    }
}

/// PFM bytes: `PF`/`Pf` header, dimensions, negative scale (little-endian),
/// then rows from bottom to top.
pub fn encode_pfm(img: &FloatImage) -> Result<Vec<u8>> {
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PFM: refusing to write non-finite values"));
    }
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], origin: &Path) -> Result<FloatImage> {
    let bad = |msg: &str| Error::format(origin, format!("PFM: {msg}"));
    // Header: three whitespace-separated tokens after the magic line, the
    // last one followed by a single whitespace byte.
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("bad magic")),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != count * 4 {
        return Err(bad(&format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            count * 4
        )));
    }
    let row = width * channels;
    let mut data = vec![0f32; count];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (i / row, i % row);
        data[(height - 1 - file_row) * row + col] = v;
    }
    FloatImage::new(width, height, channels, data)
}

pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    atomic_write(path, &encode_pfm(img)?)
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
