//! Middlebury `.flo` flow files: `f32` magic `202021.25`, `i32` width,
//! `i32` height, then row-major interleaved `(u, v)` as `f32`, all
//! little-endian.

use std::path::Path;

use mxj_autodiff::Tensor;

use crate::error::{DataError, Result};

pub const MAGIC: f32 = 202021.25;

/// Encodes a `2 x H x W` field (channel 0 is `u`).
pub fn encode_flo(flow: &Tensor) -> Result<Vec<u8>> {
    let s = flow.shape();
    if s.len() != 3 || s[0] != 2 {
        return Err(DataError::Config(format!("flow must be 2 x H x W, got {s:?}")));
    }
    if !flow.all_finite() {
        return Err(DataError::Config("flow contains non-finite values".into()));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let d = flow.data();
    for k in 0..h * w {
        out.extend_from_slice(&(d[k] as f32).to_le_bytes());
        out.extend_from_slice(&(d[h * w + k] as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Tensor> {
    parse(bytes).map_err(|e| DataError::format(Path::new("<flo bytes>"), e))
}

pub fn write_flo(path: &Path, flow: &Tensor) -> Result<()> {
    let bytes = encode_flo(flow)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    parse(&bytes).map_err(|e| DataError::format(path, e))
}

fn parse(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let word = |i: usize| -> [u8; 4] { bytes[4 * i..4 * i + 4].try_into().unwrap() };
    if bytes.len() < 12 {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    let magic = f32::from_le_bytes(word(0));
    if magic != MAGIC {
        return Err(format!("bad magic {magic}"));
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(format!("bad dimensions {w} x {h}"));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes for {w} x {h}, found {}", bytes.len()));
    }
    let mut data = vec![0.0; 2 * h * w];
    for k in 0..h * w {
        data[k] = f32::from_le_bytes(word(3 + 2 * k)) as f64;
        data[h * w + k] = f32::from_le_bytes(word(4 + 2 * k)) as f64;
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err("non-finite flow value".into());
    }
    Tensor::new(&[2, h, w], data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_field_is_twenty_bytes() {
        let b = encode_flo(&Tensor::zeros(&[2, 1, 1])).unwrap();
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = encode_flo(&Tensor::zeros(&[2, 2, 2])).unwrap();
        assert!(decode_flo(&b[..b.len() - 1]).is_err());
        b[0] ^= 1;
        assert!(decode_flo(&b).is_err());
    }
}
