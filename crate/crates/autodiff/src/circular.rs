//! Per-channel positional offsets and circular (wrap-around) convolution
//! along one spatial axis of a `C x H x W` tensor.

use crate::error::{shape_err, Result};
use crate::tape::{Direction, GradSlots, Op, Tape, Var};
use crate::tensor::Tensor;

fn axis_len(shape: &[usize], dir: Direction) -> usize {
    match dir {
        Direction::Vertical => shape[1],
        Direction::Horizontal => shape[2],
    }
}

fn check_pair(op: &'static str, x: &Tensor, e: &Tensor, dir: Direction) -> Result<()> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(shape_err(op, format!("input must be C x H x W, got {xs:?}")));
    }
    let want = [xs[0], axis_len(xs, dir)];
    if e.shape() != want {
        return Err(shape_err(
            op,
            format!("{dir:?} operand must be {want:?}, got {:?}", e.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    /// Adds `emb` to every position of `x`. A vertical `emb` is `C x H` and
    /// is repeated along `W`; a horizontal one is `C x W`, repeated along `H`.
    pub fn broadcast_add(&mut self, x: Var, emb: Var, dir: Direction) -> Result<Var> {
        let (xv, ev) = (self.value(x), self.value(emb));
        check_pair("broadcast_add", xv, ev, dir)?;
        let [c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
        let (xd, ed) = (xv.data(), ev.data());
        let mut out = xd.to_vec();
        for ch in 0..c {
            for i in 0..h {
                let row = &mut out[(ch * h + i) * w..(ch * h + i + 1) * w];
                match dir {
                    Direction::Vertical => {
                        let e = ed[ch * h + i];
                        row.iter_mut().for_each(|v| *v += e);
                    }
                    Direction::Horizontal => {
                        row.iter_mut().zip(&ed[ch * w..(ch + 1) * w]).for_each(|(v, e)| *v += e);
                    }
                }
            }
        }
        let out = Tensor::new(&[c, h, w], out)?;
        self.push("broadcast_add", out, Op::BroadcastAdd { x, emb, dir }, &[x, emb])
    }

    /// `y[c,i,j] = sum_s u[c,s] * x[c,(i+s) mod H,j]` (vertical) or
    /// `sum_s u[c,s] * x[c,i,(j+s) mod W]` (horizontal).
    pub fn circular_conv(&mut self, x: Var, u: Var, dir: Direction) -> Result<Var> {
        let (xv, uv) = (self.value(x), self.value(u));
        check_pair("circular_conv", xv, uv, dir)?;
        let [c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
        let (xd, ud) = (xv.data(), uv.data());
        let mut out = vec![0.0; xd.len()];
        match dir {
            Direction::Vertical => {
                for ch in 0..c {
                    let plane = &xd[ch * h * w..(ch + 1) * h * w];
                    let taps = &ud[ch * h..(ch + 1) * h];
                    for i in 0..h {
                        let dst = &mut out[(ch * h + i) * w..(ch * h + i + 1) * w];
                        for (s, &tap) in taps.iter().enumerate() {
                            let r = (i + s) % h;
                            for (d, v) in dst.iter_mut().zip(&plane[r * w..(r + 1) * w]) {
                                *d += tap * v;
                            }
                        }
                    }
                }
            }
            Direction::Horizontal => {
                for ch in 0..c {
                    let taps = &ud[ch * w..(ch + 1) * w];
                    for i in 0..h {
                        let src = &xd[(ch * h + i) * w..(ch * h + i + 1) * w];
                        let dst = &mut out[(ch * h + i) * w..(ch * h + i + 1) * w];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (s, &tap) in taps.iter().enumerate() {
                                acc += tap * src[(j + s) % w];
                            }
                            *d = acc;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[c, h, w], out)?;
        self.push("circular_conv", out, Op::Circular { x, u, dir }, &[x, u])
    }
}

pub(crate) fn broadcast_add_backward(
    tape: &Tape,
    x: Var,
    emb: Var,
    dir: Direction,
    g: &[f64],
    slots: &mut GradSlots,
) {
    crate::tape::add_into(tape.slot(slots, x), g, 1.0);
    let s = tape.shape(x);
    let [c, h, w] = [s[0], s[1], s[2]];
    if let Some(ge) = tape.slot(slots, emb) {
        for ch in 0..c {
            for i in 0..h {
                let row = &g[(ch * h + i) * w..(ch * h + i + 1) * w];
                match dir {
                    Direction::Vertical => ge[ch * h + i] += row.iter().sum::<f64>(),
                    Direction::Horizontal => {
                        for (e, v) in ge[ch * w..(ch + 1) * w].iter_mut().zip(row) {
                            *e += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn circular_backward(tape: &Tape, x: Var, u: Var, dir: Direction, g: &[f64], slots: &mut GradSlots) {
    let xv = tape.value(x);
    let ud = tape.value(u).data();
    let xd = xv.data();
    let [c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
    let len = axis_len(xv.shape(), dir);
    // index of the source element feeding output (i, j) through tap s
    let src = |i: usize, j: usize, s: usize| match dir {
        Direction::Vertical => ((i + s) % h) * w + j,
        Direction::Horizontal => i * w + (j + s) % w,
    };
    if let Some(gx) = tape.slot(slots, x) {
        for ch in 0..c {
            let base = ch * h * w;
            let taps = &ud[ch * len..(ch + 1) * len];
            for i in 0..h {
                for j in 0..w {
                    let gv = g[base + i * w + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for (s, &tap) in taps.iter().enumerate() {
                        gx[base + src(i, j, s)] += tap * gv;
                    }
                }
            }
        }
    }
    if let Some(gu) = tape.slot(slots, u) {
        for ch in 0..c {
            let base = ch * h * w;
            for s in 0..len {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        acc += g[base + i * w + j] * xd[base + src(i, j, s)];
                    }
                }
                gu[ch * len + s] += acc;
            }
        }
    }
}
