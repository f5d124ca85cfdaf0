use mxj_autodiff::{Graph, ParamId, Tape, Var};

use crate::ccc::{ccc_forward, CccWeights};
use crate::error::Result;
use crate::fcc::{fcc_block, FccWeights};
use crate::layers::Init;

/// Either half may be absent for the ablation variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct F5cWeights<T> {
    pub fcc: Option<FccWeights<T>>,
    pub ccc: Option<CccWeights<T>>,
}

impl<T: Copy> F5cWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> F5cWeights<U> {
        let fcc = self.fcc.as_ref().map(|w| w.map(f));
        let ccc = self.ccc.as_ref().map(|w| w.map(f));
        F5cWeights { fcc, ccc }
    }
}

impl F5cWeights<ParamId> {
    pub fn init(init: &mut Init, prefix: &str, shape: [usize; 3], fcc: bool, ccc: bool) -> Self {
        let [c, h, w] = shape;
        Self {
            fcc: fcc.then(|| FccWeights::init(init, &format!("{prefix}.fcc"), c, h, w)),
            ccc: ccc.then(|| CccWeights::init(init, &format!("{prefix}.ccc"), c, h, w)),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> F5cWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// `y1 = x + fcc(x)`, then `y = y1 + ccc(y1)`.
pub fn f5c_forward(tape: &mut Tape, x: Var, w: &F5cWeights<Var>, k: usize) -> Result<Var> {
    let mut y = x;
    if let Some(fcc) = &w.fcc {
        let r = fcc_block(tape, y, fcc)?;
        y = tape.add(y, r)?;
    }
    if let Some(ccc) = &w.ccc {
        let r = ccc_forward(tape, y, ccc, k)?;
        y = tape.add(y, r)?;
    }
    Ok(y)
}
