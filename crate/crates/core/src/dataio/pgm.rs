use std::path::Path;

use crate::error::{Error, Result};

use super::atomic_write;

/// Binary PGM (`P5`), 0 for masked-out and 255 for masked-in pixels.
pub fn encode_pgm_mask(width: usize, height: usize, mask: &[bool]) -> Result<Vec<u8>> {
    if mask.len() != width * height {
        return Err(Error::Shape {
            op: "pgm",
            expected: vec![height, width],
            actual: vec![mask.len()],
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255u8 } else { 0 }));
    Ok(out)
}

/// Returns `(width, height, mask)`; any non-zero value is masked in.
pub fn decode_pgm_mask(bytes: &[u8], origin: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bad = |msg: &str| Error::format(origin, format!("PGM: {msg}"));
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
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
    if tokens[0] != "P5" {
        return Err(bad("bad magic"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit masks are supported"));
    }
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(bad("payload size does not match header"));
    }
    Ok((width, height, payload.iter().map(|&v| v > 0).collect()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    atomic_write(path, &encode_pgm_mask(width, height, mask)?)
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm_mask(&bytes, path)
}
