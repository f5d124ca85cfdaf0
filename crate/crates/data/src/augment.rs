//! Clip-consistent cropping and flipping: one decision per clip keeps the
//! inter-frame flows valid.

use mxj_autodiff::Tensor;
use rand::Rng;

use crate::clip::ClipSample;
use crate::error::{DataError, Result};
use crate::face::{MIRROR, N_LANDMARKS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Random crop, and a horizontal flip with probability 0.5 if `flip`.
    Train { flip: bool },
    /// Center crop only.
    Test,
}

pub fn center_offset(size: usize, crop: usize) -> usize {
    (size - crop) / 2
}

pub fn augment(clip: &ClipSample, mode: Mode, size: usize, rng: &mut impl Rng) -> Result<ClipSample> {
    let (h, w) = clip.size();
    if h < size || w < size {
        return Err(DataError::Config(format!("{h} x {w} frames are smaller than the {size} crop")));
    }
    match mode {
        Mode::Test => crop(clip, [center_offset(w, size), center_offset(h, size)], size),
        Mode::Train { flip: allow_flip } => {
            let ox = rng.gen_range(0..=w - size);
            let oy = rng.gen_range(0..=h - size);
            let out = crop(clip, [ox, oy], size)?;
            if allow_flip && rng.gen_bool(0.5) {
                Ok(flip(&out))
            } else {
                Ok(out)
            }
        }
    }
}

/// `size x size` window with top-left corner `offset = [x, y]`.
pub fn crop(clip: &ClipSample, offset: [usize; 2], size: usize) -> Result<ClipSample> {
    let (h, w) = clip.size();
    let [ox, oy] = offset;
    if ox + size > w || oy + size > h {
        return Err(DataError::Config(format!("crop {size} at {offset:?} exceeds {h} x {w}")));
    }
    let cut = |t: &Tensor| -> Tensor {
        let c = t.shape()[0];
        let mut out = Vec::with_capacity(c * size * size);
        for ch in 0..c {
            for y in oy..oy + size {
                let row = ch * h * w + y * w;
                out.extend_from_slice(&t.data()[row + ox..row + ox + size]);
            }
        }
        Tensor::new(&[c, size, size], out).expect("crop size is positive")
    };
    let landmarks = clip
        .landmarks
        .iter()
        .map(|l| {
            l.chunks(2)
                .flat_map(|p| [p[0] - ox as f64, p[1] - oy as f64])
                .collect()
        })
        .collect();
    Ok(ClipSample {
        frames: clip.frames.iter().map(cut).collect(),
        flows: clip.flows.iter().map(cut).collect(),
        landmarks,
        ..clip.clone()
    })
}

/// Horizontal mirror: columns reversed, flow `u` negated, landmarks
/// reflected about the center column and relabelled left/right.
pub fn flip(clip: &ClipSample) -> ClipSample {
    let (h, w) = clip.size();
    let mirror = |t: &Tensor, negate_first: bool| -> Tensor {
        let mut out = t.clone();
        let src = t.data();
        let dst = out.data_mut();
        for ch in 0..t.shape()[0] {
            let sign = if negate_first && ch == 0 { -1.0 } else { 1.0 };
            for y in 0..h {
                let row = ch * h * w + y * w;
                for x in 0..w {
                    dst[row + x] = sign * src[row + w - 1 - x];
                }
            }
        }
        out
    };
    let landmarks = clip
        .landmarks
        .iter()
        .map(|l| {
            if l.len() == 2 * N_LANDMARKS {
                (0..N_LANDMARKS)
                    .flat_map(|i| {
                        let j = MIRROR[i];
                        [(w - 1) as f64 - l[2 * j], l[2 * j + 1]]
                    })
                    .collect()
            } else {
                // no correspondence table for other layouts: reflect only
                l.chunks(2).flat_map(|p| [(w - 1) as f64 - p[0], p[1]]).collect()
            }
        })
        .collect();
    ClipSample {
        frames: clip.frames.iter().map(|f| mirror(f, false)).collect(),
        flows: clip.flows.iter().map(|f| mirror(f, true)).collect(),
        landmarks,
        ..clip.clone()
    }
}
