use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Resample `image` (`C x H x W`) through a per-pixel displacement field:
/// output `(a, b)` reads the image at row `a + v[a,b]`, column `b + u[a,b]`
/// with bilinear interpolation. Coordinates outside the image are clamped
/// to the border. Not differentiable.
pub fn bilinear_sample(image: &Tensor, u: &Tensor, v: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(shape_err("bilinear_sample", format!("image must be C x H x W, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if u.shape() != [h, w] || v.shape() != [h, w] {
        return Err(shape_err(
            "bilinear_sample",
            format!("flow {:?}/{:?} for image {s:?}", u.shape(), v.shape()),
        ));
    }
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for a in 0..h {
        for b in 0..w {
            let k = a * w + b;
            let y = (a as f64 + v.data()[k]).clamp(0.0, (h - 1) as f64);
            let x = (b as f64 + u.data()[k]).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            for ch in 0..c {
                let p = &src[ch * h * w..(ch + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + k] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(s, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_identity() {
        let img = Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.7).sin());
        let z = Tensor::zeros(&[4, 5]);
        assert_eq!(bilinear_sample(&img, &z, &z).unwrap(), img);
    }

    #[test]
    fn integer_shift_clamps_border() {
        let img = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let u = Tensor::full(&[2, 3], 1.0);
        let v = Tensor::zeros(&[2, 3]);
        let out = bilinear_sample(&img, &u, &v).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 3.0, 5.0, 6.0, 6.0]);
    }

    #[test]
    fn half_pixel_midpoint() {
        let img = Tensor::new(&[1, 1, 2], vec![0.0, 10.0]).unwrap();
        let u = Tensor::full(&[1, 2], 0.5);
        let v = Tensor::zeros(&[1, 2]);
        let out = bilinear_sample(&img, &u, &v).unwrap();
        assert_eq!(out.data()[0], 5.0);
    }

    #[test]
    fn shape_mismatch() {
        let img = Tensor::zeros(&[1, 3, 3]);
        let u = Tensor::zeros(&[3, 2]);
        assert!(bilinear_sample(&img, &u, &u).is_err());
    }
}
