//! Sliding-window geometry shared by convolution, transposed convolution
//! and pooling. Two-dimensional windows are the depth-1 case.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn output_len(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if k == 0 || s == 0 || n + 2 * p < k {
        return None;
    }
    Some((n + 2 * p - k) / s + 1)
}

impl Window {
    pub fn new(input: [usize; 3], kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Option<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = output_len(input[a], kernel[a], stride[a], pad[a])?;
        }
        Some(Self {
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    pub fn planar(input: [usize; 2], kernel: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Option<Self> {
        Self::new(
            [1, input[0], input[1]],
            [1, kernel[0], kernel[1]],
            [1, stride[0], stride[1]],
            [0, pad[0], pad[1]],
        )
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Input coordinate along `axis` for output position `o` and kernel tap `k`.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride[axis] + k) as isize - self.pad[axis] as isize;
        if pos < 0 || pos as usize >= self.input[axis] {
            None
        } else {
            Some(pos as usize)
        }
    }
}

/// Unfold `channels x input` into a `(channels * kernel) x output` matrix.
pub fn im2col(w: &Window, channels: usize, input: &[f64], cols: &mut [f64]) {
    let in_len = w.input_len();
    let out_len = w.output_len();
    debug_assert_eq!(input.len(), channels * in_len);
    debug_assert_eq!(cols.len(), channels * w.kernel_len() * out_len);
    let [od, oh, ow] = w.output;
    let [_, ih, iw] = w.input;
    let mut row = 0;
    for c in 0..channels {
        let plane = &input[c * in_len..(c + 1) * in_len];
        for kd in 0..w.kernel[0] {
            for kh in 0..w.kernel[1] {
                for kw in 0..w.kernel[2] {
                    let dst = &mut cols[row * out_len..(row + 1) * out_len];
                    let mut idx = 0;
                    for z in 0..od {
                        let sz = w.source(0, z, kd);
                        for y in 0..oh {
                            let sy = w.source(1, y, kh);
                            match (sz, sy) {
                                (Some(sz), Some(sy)) => {
                                    let base = (sz * ih + sy) * iw;
                                    for x in 0..ow {
                                        dst[idx] = match w.source(2, x, kw) {
                                            Some(sx) => plane[base + sx],
                                            None => 0.0,
                                        };
                                        idx += 1;
                                    }
                                }
                                _ => {
                                    dst[idx..idx + ow].fill(0.0);
                                    idx += ow;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `channels x input`.
pub fn col2im(w: &Window, channels: usize, cols: &[f64], out: &mut [f64]) {
    let in_len = w.input_len();
    let out_len = w.output_len();
    debug_assert_eq!(out.len(), channels * in_len);
    debug_assert_eq!(cols.len(), channels * w.kernel_len() * out_len);
    let [od, oh, ow] = w.output;
    let [_, ih, iw] = w.input;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut out[c * in_len..(c + 1) * in_len];
        for kd in 0..w.kernel[0] {
            for kh in 0..w.kernel[1] {
                for kw in 0..w.kernel[2] {
                    let src = &cols[row * out_len..(row + 1) * out_len];
                    let mut idx = 0;
                    for z in 0..od {
                        let sz = w.source(0, z, kd);
                        for y in 0..oh {
                            let sy = w.source(1, y, kh);
                            if let (Some(sz), Some(sy)) = (sz, sy) {
                                let base = (sz * ih + sy) * iw;
                                for x in 0..ow {
                                    if let Some(sx) = w.source(2, x, kw) {
                                        plane[base + sx] += src[idx];
                                    }
                                    idx += 1;
                                }
                            } else {
                                idx += ow;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
