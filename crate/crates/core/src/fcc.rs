//! Fully-connected circular convolution.
//!
//! `fcc_v` adds a learnable per-row embedding and then mixes every row of a
//! column circularly: `Y(c,i,j) = sum_s U(c,s) X'(c,(i+s) mod H, j)`.
//! `fcc_h` is the same along rows. The block runs V-then-H and H-then-V
//! branches between 1x1 mixing convolutions.

use mxj_autodiff::{Direction, Graph, ParamId, Tape, Var};

use crate::error::Result;
use crate::layers::{Affine, Init};

/// Positional embedding `p` and circular kernel `u`, both `C x L` where `L`
/// is the length of the convolved axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FccSlot<T> {
    pub p: T,
    pub u: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FccWeights<T> {
    pub pre: Affine<T>,
    /// Branch one: V then H. Branch two: H then V. No sharing.
    pub slots: [FccSlot<T>; 4],
    pub post: Affine<T>,
}

impl<T: Copy> FccWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> FccWeights<U> {
        let pre = self.pre.map(f);
        let slots = self.slots.map(|s| FccSlot { p: f(s.p), u: f(s.u) });
        FccWeights {
            pre,
            slots,
            post: self.post.map(f),
        }
    }
}

impl FccWeights<ParamId> {
    pub fn init(init: &mut Init, prefix: &str, c: usize, h: usize, w: usize) -> Self {
        let pre = init.conv(&format!("{prefix}.pre_mix"), c, c, 1);
        let lens = [(h, "v"), (w, "h"), (w, "h"), (h, "v")];
        let slots = std::array::from_fn(|i| {
            let (len, dir) = lens[i];
            let name = format!("{prefix}.b{}.{dir}", i / 2);
            FccSlot {
                p: init.zeros(&format!("{name}.pos"), &[c, len]),
                u: init.uniform(&format!("{name}.kernel"), &[c, len], 1.0 / (len as f64).sqrt()),
            }
        });
        let post = init.conv(&format!("{prefix}.post_mix"), 2 * c, c, 1);
        Self { pre, slots, post }
    }

    pub fn bind(&self, g: &mut Graph) -> FccWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

pub fn fcc_v(tape: &mut Tape, x: Var, slot: FccSlot<Var>) -> Result<Var> {
    let xp = tape.broadcast_add(x, slot.p, Direction::Vertical)?;
    Ok(tape.circular_conv(xp, slot.u, Direction::Vertical)?)
}

pub fn fcc_h(tape: &mut Tape, x: Var, slot: FccSlot<Var>) -> Result<Var> {
    let xp = tape.broadcast_add(x, slot.p, Direction::Horizontal)?;
    Ok(tape.circular_conv(xp, slot.u, Direction::Horizontal)?)
}

pub fn fcc_block(tape: &mut Tape, x: Var, w: &FccWeights<Var>) -> Result<Var> {
    let x1 = tape.conv2d(x, w.pre.w, Some(w.pre.b), (1, 1), (0, 0))?;
    let a = fcc_v(tape, x1, w.slots[0])?;
    let a = fcc_h(tape, a, w.slots[1])?;
    let b = fcc_h(tape, x1, w.slots[2])?;
    let b = fcc_v(tape, b, w.slots[3])?;
    let both = tape.concat(&[a, b], 0)?;
    Ok(tape.conv2d(both, w.post.w, Some(w.post.b), (1, 1), (0, 0))?)
}
