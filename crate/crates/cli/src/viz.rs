//! Flow color coding: hue is the direction of `(u, v)` (0 degrees = +x,
//! red; 120 = green; 240 = blue, counter-clockwise in image coordinates
//! with y pointing down), saturation is the magnitude relative to the
//! largest magnitude in the field, value is always 1. A zero field is
//! white.

use mxj_autodiff::Tensor;
use mxj_data::RgbImage;

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Color of one flow vector given the normalizing magnitude.
pub fn flow_rgb(u: f64, v: f64, max_mag: f64) -> [u8; 3] {
    let mag = u.hypot(v);
    let sat = if max_mag > 0.0 { (mag / max_mag).min(1.0) } else { 0.0 };
    // negate v so that upward motion (v < 0) is counter-clockwise on screen
    let hue = (-v).atan2(u).to_degrees();
    hsv_to_rgb(hue, sat, 1.0).map(|c| (c * 255.0).round() as u8)
}

pub fn flow_image(flow: &Tensor) -> RgbImage {
    let (h, w) = (flow.shape()[1], flow.shape()[2]);
    let (u, v) = flow.data().split_at(h * w);
    let max_mag = u.iter().zip(v).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let data = u.iter().zip(v).flat_map(|(&a, &b)| flow_rgb(a, b, max_mag)).collect();
    RgbImage::new(w, h, data)
}
