//! Grayscale portable float maps (`Pf`).
//!
//! Layout: `Pf\n<width> <height>\n<scale>\n` followed by `width * height`
//! 32-bit floats, bottom row first. A negative scale means little-endian.
//! Invalid pixels are written as `+inf` and non-finite values read back as invalid.

use super::DisparityMap;
use crate::error::{Error, Result};

/// Header token terminated by a single whitespace byte; returns the token and the next offset.
fn token(bytes: &[u8], mut pos: usize) -> Result<(&str, usize)> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos || pos >= bytes.len() {
        return Err(Error::format(start, "truncated header"));
    }
    let s = std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format(start, "non-ASCII header"))?;
    Ok((s, pos + 1))
}

fn parse<T: std::str::FromStr>(bytes: &[u8], pos: usize, what: &str) -> Result<(T, usize)> {
    let (tok, next) = token(bytes, pos)?;
    let value = tok
        .parse()
        .map_err(|_| Error::format(next - 1 - tok.len(), format!("bad {what} {tok:?}")))?;
    Ok((value, next))
}

pub fn read_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let (magic, pos) = token(bytes, 0)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::format(0, "unsupported channels: colour PFM (PF), expected Pf")),
        other => return Err(Error::format(0, format!("bad magic {other:?}"))),
    }
    let (width, pos): (usize, _) = parse(bytes, pos, "width")?;
    let (height, pos): (usize, _) = parse(bytes, pos, "height")?;
    let scale_at = pos;
    let (scale, pos): (f64, _) = parse(bytes, pos, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(scale_at, format!("scale must be non-zero, got {scale}")));
    }
    let little = scale < 0.0;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(scale_at, "dimensions overflow"))?;
    let need = n * 4;
    if bytes.len() - pos < need {
        return Err(Error::format(bytes.len(), format!("payload needs {need} bytes, found {}", bytes.len() - pos)));
    }
    let mut values = vec![0f32; n];
    for (k, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, x) = (k / width, k % width);
        values[(height - 1 - row) * width + x] = v;
    }
    let valid = values.iter().map(|v| v.is_finite()).collect();
    DisparityMap::new(width, height, values, valid)
}

/// Little-endian with scale `-1.0`.
pub fn write_pfm(map: &DisparityMap) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + 4 * map.values.len());
    out.extend_from_slice(header.as_bytes());
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            let i = y * map.width + x;
            let v = if map.valid[i] { map.values[i] } else { f32::INFINITY };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
