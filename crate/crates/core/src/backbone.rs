//! Four plain convolutions turning a frame into the rich feature map.

use mxj_autodiff::{Graph, ParamId, Tape, Var};

use crate::config::BACKBONE_GEOMETRY;
use crate::error::Result;
use crate::layers::{Affine, Init};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneWeights<T> {
    pub layers: [Affine<T>; 4],
}

impl<T: Copy> BackboneWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> BackboneWeights<U> {
        BackboneWeights {
            layers: self.layers.map(|l| l.map(f)),
        }
    }
}

impl BackboneWeights<ParamId> {
    pub fn init(init: &mut Init, in_channels: usize, channels: [usize; 4]) -> Self {
        let mut c_in = in_channels;
        let layers = std::array::from_fn(|i| {
            let (k, _, _) = BACKBONE_GEOMETRY[i];
            let l = init.conv(&format!("backbone.conv{}", i + 1), c_in, channels[i], k);
            c_in = channels[i];
            l
        });
        Self { layers }
    }

    pub fn bind(&self, g: &mut Graph) -> BackboneWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// ReLU follows the first three layers; the last feeds the residual F5C
/// stack directly.
pub fn rich_feature(tape: &mut Tape, frame: Var, w: &BackboneWeights<Var>) -> Result<Var> {
    let mut x = frame;
    for (i, (layer, &(_, s, p))) in w.layers.iter().zip(&BACKBONE_GEOMETRY).enumerate() {
        x = tape.conv2d(x, layer.w, Some(layer.b), (s, s), (p, p))?;
        if i < 3 {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}
