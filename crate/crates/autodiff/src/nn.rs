//! Dense layers: fully connected, 2-D/3-D convolution (cross-correlation,
//! zero padding), 2-D transposed convolution and 3-D max pooling.

use crate::error::{config_err, shape_err, Result};
use crate::kernels::{col2im, gemm, im2col, Window};
use crate::tape::{GradSlots, Op, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// `w x + b` with `w: out x in`; `x` is flattened to length `in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.rank() != 2 || wv.shape()[1] != xv.len() {
            return Err(shape_err(
                "linear",
                format!("weight {:?} vs input of {} values", wv.shape(), xv.len()),
            ));
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; out_dim];
        gemm(out_dim, in_dim, 1, wv.data(), false, xv.data(), false, &mut out, 0.0);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out_dim {
                return Err(shape_err("linear", format!("bias {:?} for {out_dim} outputs", bv.shape())));
            }
            out.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("linear", Tensor::from_vec(out), Op::Linear { x, w, b }, &parents)
    }

    /// 2-D cross-correlation of `C_in x H x W` with `C_out x C_in x kh x kw`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        let window = Window::planar(
            [xs[1], xs[2]],
            [ws[2], ws[3]],
            [stride.0, stride.1],
            [padding.0, padding.1],
        )
        .ok_or_else(|| {
            config_err(
                "conv2d",
                format!("kernel {ws:?} stride {stride:?} padding {padding:?} on input {xs:?}"),
            )
        })?;
        let out_shape = [ws[0], window.output[1], window.output[2]];
        self.conv_impl("conv2d", x, w, b, window, &out_shape)
    }

    /// 3-D cross-correlation of `C_in x T x H x W` with `C_out x C_in x kt x kh x kw`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 5 {
            return Err(shape_err("conv3d", format!("input {xs:?}, kernel {ws:?}")));
        }
        let window = Window::new([xs[1], xs[2], xs[3]], [ws[2], ws[3], ws[4]], stride, padding)
            .ok_or_else(|| {
                config_err(
                    "conv3d",
                    format!("kernel {ws:?} stride {stride:?} padding {padding:?} on input {xs:?}"),
                )
            })?;
        let out_shape = [ws[0], window.output[0], window.output[1], window.output[2]];
        self.conv_impl("conv3d", x, w, b, window, &out_shape)
    }

    fn conv_impl(
        &mut self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        window: Window,
        out_shape: &[usize],
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (c_out, c_in) = (wv.shape()[0], wv.shape()[1]);
        if xv.shape()[0] != c_in {
            return Err(shape_err(
                op,
                format!("input has {} channels, kernel expects {c_in}", xv.shape()[0]),
            ));
        }
        let rows = c_in * window.kernel_len();
        let n = window.output_len();
        let mut cols = vec![0.0; rows * n];
        im2col(&window, c_in, xv.data(), &mut cols);
        let mut out = vec![0.0; c_out * n];
        gemm(c_out, rows, n, wv.data(), false, &cols, false, &mut out, 0.0);
        if let Some(b) = b {
            add_channel_bias(op, self.value(b), &mut out, c_out, n)?;
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(op, Tensor::new(out_shape, out)?, Op::Conv { x, w, b, window }, &parents)
    }

    /// 2-D transposed convolution with kernel `C_in x C_out x k x k`;
    /// output side is `(n - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] {
            return Err(shape_err("conv_transpose2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        let (kh, kw) = (ws[2], ws[3]);
        let out_len = |n: usize, k: usize| -> Option<usize> {
            ((n - 1) * stride + k).checked_sub(2 * padding).filter(|&v| v > 0)
        };
        let bad = || {
            config_err(
                "conv_transpose2d",
                format!("kernel {ws:?} stride {stride} padding {padding} on input {xs:?}"),
            )
        };
        if stride == 0 {
            return Err(bad());
        }
        let ho = out_len(xs[1], kh).ok_or_else(bad)?;
        let wo = out_len(xs[2], kw).ok_or_else(bad)?;
        let window = Window::planar([ho, wo], [kh, kw], [stride, stride], [padding, padding]).ok_or_else(bad)?;
        if window.output != [1, xs[1], xs[2]] {
            return Err(bad());
        }
        let c_in = xs[0];
        let c_out = ws[1];
        let xv = self.value(x);
        let wv = self.value(w);
        let rows = c_out * kh * kw;
        let hw = xs[1] * xs[2];
        let mut cols = vec![0.0; rows * hw];
        gemm(rows, c_in, hw, wv.data(), true, xv.data(), false, &mut cols, 0.0);
        let mut out = vec![0.0; c_out * ho * wo];
        col2im(&window, c_out, &cols, &mut out);
        if let Some(b) = b {
            add_channel_bias("conv_transpose2d", self.value(b), &mut out, c_out, ho * wo)?;
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            "conv_transpose2d",
            Tensor::new(&[c_out, ho, wo], out)?,
            Op::ConvTranspose { x, w, b, window },
            &parents,
        )
    }

    /// Max over `C x T x H x W` windows without padding. Ties resolve to the
    /// lowest linear input index, which also receives the whole gradient.
    pub fn maxpool3d(&mut self, x: Var, kernel: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(shape_err("maxpool3d", format!("input {:?}", xv.shape())));
        }
        let s = xv.shape();
        let window = Window::new([s[1], s[2], s[3]], kernel, stride, [0; 3]).ok_or_else(|| {
            config_err(
                "maxpool3d",
                format!("kernel {kernel:?} stride {stride:?} on input {s:?}"),
            )
        })?;
        let c = s[0];
        let [d, h, w] = window.input;
        let [od, oh, ow] = window.output;
        let plane = d * h * w;
        let data = xv.data();
        let mut out = Vec::with_capacity(c * window.output_len());
        let mut argmax = Vec::with_capacity(out.capacity());
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_val = f64::NEG_INFINITY;
                        for kz in 0..kernel[0] {
                            for ky in 0..kernel[1] {
                                for kx in 0..kernel[2] {
                                    let iz = z * stride[0] + kz;
                                    let iy = y * stride[1] + ky;
                                    let ix = xx * stride[2] + kx;
                                    let idx = ch * plane + (iz * h + iy) * w + ix;
                                    if best == usize::MAX || data[idx] > best_val {
                                        best = idx;
                                        best_val = data[idx];
                                    }
                                }
                            }
                        }
                        out.push(best_val);
                        argmax.push(best);
                    }
                }
            }
        }
        let out = Tensor::new(&[c, od, oh, ow], out)?;
        self.push("maxpool3d", out, Op::MaxPool { x, argmax }, &[x])
    }
}

fn add_channel_bias(op: &'static str, bias: &Tensor, out: &mut [f64], channels: usize, plane: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(shape_err(op, format!("bias {:?} for {channels} channels", bias.shape())));
    }
    for (chunk, b) in out.chunks_mut(plane).zip(bias.data()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

fn bias_backward(tape: &Tape, b: Option<Var>, g: &[f64], plane: usize, slots: &mut GradSlots) {
    if let Some(gb) = b.and_then(|b| tape.slot(slots, b)) {
        for (gb, chunk) in gb.iter_mut().zip(g.chunks(plane)) {
            *gb += chunk.iter().sum::<f64>();
        }
    }
}

pub(crate) fn linear_backward(tape: &Tape, x: Var, w: Var, b: Option<Var>, g: &[f64], slots: &mut GradSlots) {
    let xv = tape.value(x).data();
    let wv = tape.value(w).data();
    let (out_dim, in_dim) = (g.len(), xv.len());
    if let Some(gx) = tape.slot(slots, x) {
        gemm(in_dim, out_dim, 1, wv, true, g, false, gx, 1.0);
    }
    if let Some(gw) = tape.slot(slots, w) {
        gemm(out_dim, 1, in_dim, g, false, xv, false, gw, 1.0);
    }
    bias_backward(tape, b, g, 1, slots);
}

pub(crate) fn conv_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    window: &Window,
    g: &[f64],
    slots: &mut GradSlots,
) {
    let xv = tape.value(x);
    let wv = tape.value(w);
    let (c_out, c_in) = (wv.shape()[0], wv.shape()[1]);
    let rows = c_in * window.kernel_len();
    let n = window.output_len();
    if tape.requires_grad(w) {
        let mut cols = vec![0.0; rows * n];
        im2col(window, c_in, xv.data(), &mut cols);
        let gw = tape.slot(slots, w).expect("kernel gradient slot");
        gemm(c_out, n, rows, g, false, &cols, true, gw, 1.0);
    }
    if let Some(gx) = tape.slot(slots, x) {
        let mut dcols = vec![0.0; rows * n];
        gemm(rows, c_out, n, wv.data(), true, g, false, &mut dcols, 0.0);
        col2im(window, c_in, &dcols, gx);
    }
    bias_backward(tape, b, g, n, slots);
}

pub(crate) fn conv_transpose_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    window: &Window,
    g: &[f64],
    slots: &mut GradSlots,
) {
    let xv = tape.value(x);
    let wv = tape.value(w);
    let (c_in, c_out) = (wv.shape()[0], wv.shape()[1]);
    let rows = c_out * window.kernel_len();
    let hw = window.output_len();
    let mut dcols = vec![0.0; rows * hw];
    im2col(window, c_out, g, &mut dcols);
    if let Some(gx) = tape.slot(slots, x) {
        gemm(c_in, rows, hw, wv.data(), false, &dcols, false, gx, 1.0);
    }
    if let Some(gw) = tape.slot(slots, w) {
        gemm(c_in, hw, rows, xv.data(), false, &dcols, true, gw, 1.0);
    }
    bias_backward(tape, b, g, window.input_len(), slots);
}
