//! 8-bit binary PGM (P5) images and raw little-endian `f32` sidecars.

use std::path::Path;

use crate::error::{Error, Result};
use crate::otsu::quantize;

/// Encode a row-major grid of values in `[0, 1]` as P5 bytes.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("truncated header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| Error::Pgm(e.to_string()))?);
    }
    if fields[0] != "P5" {
        return Err(Error::Pgm(format!("magic `{}` is not P5", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Pgm(format!("`{s}`: {e}")));
    let (w, h, max) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if max != 255 {
        return Err(Error::Pgm(format!("maxval {max} unsupported")));
    }
    pos += 1;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != w * h {
        return Err(Error::Pgm(format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Ok((w, h, data.to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode_pgm(width, height, values))?;
    Ok(())
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Invalid(format!("f32 sidecar length {} not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
