//! Backward warping with a flow field.

use mxj_autodiff::{bilinear_sample, Tensor};

use crate::error::{DataError, Result};

/// Samples `next` (`C x H x W`) at `p + flow(p)`; with the flow from frame
/// `k` to `k + 1` this reconstructs frame `k`.
pub fn warp_back(next: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let s = next.shape();
    if s.len() != 3 || flow.shape() != [2, s[1], s[2]] {
        return Err(DataError::Config(format!("flow {:?} for frame {s:?}", flow.shape())));
    }
    let hw = s[1] * s[2];
    let u = Tensor::new(&s[1..], flow.data()[..hw].to_vec())?;
    let v = Tensor::new(&s[1..], flow.data()[hw..].to_vec())?;
    Ok(bilinear_sample(next, &u, &v)?)
}

/// Mean absolute difference over pixels at least `border` away from every
/// edge, all channels.
pub fn interior_mae(a: &Tensor, b: &Tensor, border: usize) -> f64 {
    assert_eq!(a.shape(), b.shape(), "image shapes differ");
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    assert!(2 * border < h && 2 * border < w, "border leaves no interior");
    let mut sum = 0.0;
    for ch in 0..c {
        for y in border..h - border {
            for x in border..w - border {
                let i = (ch * h + y) * w + x;
                sum += (a.data()[i] - b.data()[i]).abs();
            }
        }
    }
    sum / (c * (h - 2 * border) * (w - 2 * border)) as f64
}
