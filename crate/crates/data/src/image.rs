//! Binary netpbm images: 8-bit grayscale PGM (`P5`) and RGB PPM (`P6`).

use std::path::Path;

use mxj_autodiff::Tensor;

use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size");
        Self { width, height, data }
    }

    /// Rounds values in `[0, 1]` to gray levels; out-of-range values clamp.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Self {
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(width, height, data)
    }

    /// `1 x H x W` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.height, self.width],
            self.data.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("image dimensions are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(DataError::Config(format!("expected 1 x H x W image, got {s:?}")));
        }
        Ok(Self::from_unit(s[2], s[1], t.data()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (magic, w, h, data) = parse_netpbm(bytes)?;
        if magic != "P5" {
            return Err(format!("expected P5, found {magic}"));
        }
        if data.len() != w * h {
            return Err(format!("expected {} pixels, found {}", w * h, data.len()));
        }
        Ok(Self::new(w, h, data.to_vec()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| DataError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| DataError::format(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved `r, g, b`.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height, "image buffer size");
        Self { width, height, data }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (magic, w, h, data) = parse_netpbm(bytes)?;
        if magic != "P6" {
            return Err(format!("expected P6, found {magic}"));
        }
        if data.len() != 3 * w * h {
            return Err(format!("expected {} bytes, found {}", 3 * w * h, data.len()));
        }
        Ok(Self::new(w, h, data.to_vec()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| DataError::io(path, e))
    }
}

/// Splits a netpbm file into magic, width, height and raster. Comments
/// (`#` to end of line) are allowed between header tokens; only maxval
/// 255 is accepted.
fn parse_netpbm(bytes: &[u8]) -> std::result::Result<(String, usize, usize, &[u8]), String> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates maxval from the raster
    pos += 1;
    if pos > bytes.len() {
        return Err("truncated header".into());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if w == 0 || h == 0 {
        return Err(format!("bad dimensions {w} x {h}"));
    }
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    Ok((tokens[0].clone(), w, h, &bytes[pos..]))
}
