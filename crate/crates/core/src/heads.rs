//! The three task heads.

use mxj_autodiff::{Graph, ParamId, Tape, Var};

use crate::error::{config_err, Result};
use crate::layers::{Affine, Init};

/// Pooling window per axis: the configured size, shrunk to fit short axes.
pub fn pool_window(pool: usize, dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| pool.min(d))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerWeights<T> {
    pub conv: Affine<T>,
    pub fc1: Affine<T>,
    pub fc2: Affine<T>,
}

impl<T: Copy> MerWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> MerWeights<U> {
        let conv = self.conv.map(f);
        let fc1 = self.fc1.map(f);
        MerWeights {
            conv,
            fc1,
            fc2: self.fc2.map(f),
        }
    }
}

/// Geometry of the MER head for a fused sequence of `steps` maps of
/// `channels x h x w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MerGeometry {
    pub channels: usize,
    pub steps: usize,
    pub h: usize,
    pub w: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MerGeometry {
    pub fn pooled(&self) -> [usize; 3] {
        let win = pool_window(self.pool, [self.steps, self.h, self.w]);
        [self.steps / win[0], self.h / win[1], self.w / win[2]]
    }

    pub fn flat_len(&self) -> usize {
        self.conv_channels * self.pooled().iter().product::<usize>()
    }
}

impl MerWeights<ParamId> {
    pub fn init(init: &mut Init, g: &MerGeometry) -> Self {
        let k = g.kernel;
        let conv = init.kaiming(
            "mer.conv3d",
            &[g.conv_channels, g.channels, k, k, k],
            g.channels * k * k * k,
            g.conv_channels,
        );
        let fc1 = init.linear("mer.fc1", g.flat_len(), g.hidden);
        let fc2 = init.output("mer.fc2", &[g.classes, g.hidden], g.hidden, g.classes);
        Self { conv, fc1, fc2 }
    }

    pub fn bind(&self, g: &mut Graph) -> MerWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// Stacks the fused maps along time and classifies: conv3d, ReLU, max-pool,
/// FC, ReLU, FC. Returns raw logits.
pub fn mer_head(tape: &mut Tape, seq: &[Var], w: &MerWeights<Var>, kernel: usize, pool: usize) -> Result<Var> {
    if seq.is_empty() {
        return config_err("MER head needs a non-empty sequence");
    }
    let s = tape.shape(seq[0]).to_vec();
    let steps = seq
        .iter()
        .map(|&v| tape.reshape(v, &[s[0], 1, s[1], s[2]]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let x = tape.concat(&steps, 1)?;
    let p = kernel / 2;
    let y = tape.conv3d(x, w.conv.w, Some(w.conv.b), [1, 1, 1], [p, p, p])?;
    let y = tape.relu(y)?;
    let win = pool_window(pool, [seq.len(), s[1], s[2]]);
    let y = tape.maxpool3d(y, win, win)?;
    let n = tape.value(y).len();
    let y = tape.reshape(y, &[n])?;
    let y = tape.linear(y, w.fc1.w, Some(w.fc1.b))?;
    let y = tape.relu(y)?;
    Ok(tape.linear(y, w.fc2.w, Some(w.fc2.b))?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowWeights<T> {
    /// Stride-2 3x3 convolutions to 1/2, 1/4, 1/8 resolution.
    pub enc: [Affine<T>; 3],
    /// Stride-2 4x4 transposed convolutions back to 1/4, 1/2, 1/1.
    pub dec: [Affine<T>; 3],
    /// 3x3 convolution to `(u, v)`.
    pub out: Affine<T>,
}

impl<T: Copy> FlowWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> FlowWeights<U> {
        let enc = self.enc.map(|l| l.map(f));
        let dec = self.dec.map(|l| l.map(f));
        FlowWeights {
            enc,
            dec,
            out: self.out.map(f),
        }
    }
}

impl FlowWeights<ParamId> {
    /// `frame_channels` per frame, `feature_channels` per F5C feature.
    pub fn init(init: &mut Init, frame_channels: usize, feature_channels: usize, widths: [usize; 3]) -> Self {
        let [c1, c2, c3] = widths;
        let x0 = 2 * frame_channels;
        let enc = [
            init.conv("flow.enc1", x0, c1, 3),
            init.conv("flow.enc2", c1, c2, 3),
            init.conv("flow.enc3", c2, c3, 3),
        ];
        let deconv = |init: &mut Init, name: &str, c_in: usize, c_out: usize| {
            init.kaiming(name, &[c_in, c_out, 4, 4], c_in * 4, c_out)
        };
        let dec = [
            deconv(init, "flow.dec3", c3 + 2 * feature_channels, c2),
            deconv(init, "flow.dec2", 2 * c2, c1),
            deconv(init, "flow.dec1", 2 * c1, c1),
        ];
        let out = init.output("flow.out", &[2, c1 + x0, 3, 3], (c1 + x0) * 9, 2);
        Self { enc, dec, out }
    }

    pub fn bind(&self, g: &mut Graph) -> FlowWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// Encoder-decoder flow estimate between two frames. The F5C features of
/// both frames join the encoder at 1/8 resolution; each decoder stage is
/// concatenated with the encoder level of matching size.
pub fn flow_head(tape: &mut Tape, frames: [Var; 2], features: [Var; 2], w: &FlowWeights<Var>) -> Result<Var> {
    let x0 = tape.concat(&frames, 0)?;
    let mut enc = Vec::with_capacity(3);
    let mut x = x0;
    for l in &w.enc {
        x = tape.conv2d(x, l.w, Some(l.b), (2, 2), (1, 1))?;
        x = tape.relu(x)?;
        enc.push(x);
    }
    let z = tape.concat(&[enc[2], features[0], features[1]], 0)?;
    let skips = [enc[1], enc[0], x0];
    let mut z = z;
    for (l, skip) in w.dec.iter().zip(skips) {
        let d = tape.conv_transpose2d(z, l.w, Some(l.b), 2, 1)?;
        let d = tape.relu(d)?;
        if tape.shape(d)[1..] != tape.shape(skip)[1..] {
            return config_err(format!(
                "decoder stage {:?} does not match encoder level {:?}",
                tape.shape(d),
                tape.shape(skip)
            ));
        }
        z = tape.concat(&[d, skip], 0)?;
    }
    Ok(tape.conv2d(z, w.out.w, Some(w.out.b), (1, 1), (1, 1))?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkWeights<T> {
    pub conv: Affine<T>,
    pub fc1: Affine<T>,
    pub fc2: Affine<T>,
}

impl<T: Copy> LandmarkWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> LandmarkWeights<U> {
        let conv = self.conv.map(f);
        let fc1 = self.fc1.map(f);
        LandmarkWeights {
            conv,
            fc1,
            fc2: self.fc2.map(f),
        }
    }
}

/// Side of the landmark head's feature map after its stride-2 convolution.
pub fn landmark_side(h: usize) -> usize {
    (h + 2 - 3) / 2 + 1
}

impl LandmarkWeights<ParamId> {
    pub fn init(init: &mut Init, feature: [usize; 3], channels: usize, hidden: usize, m: usize) -> Self {
        let [c, h, w] = feature;
        let conv = init.conv("landmark.conv", c, channels, 3);
        let flat = channels * landmark_side(h) * landmark_side(w);
        let fc1 = init.linear("landmark.fc1", flat, hidden);
        let fc2 = init.output("landmark.fc2", &[2 * m, hidden], hidden, 2 * m);
        Self { conv, fc1, fc2 }
    }

    pub fn bind(&self, g: &mut Graph) -> LandmarkWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// Flat `x0, y0, x1, y1, ...` landmark estimate from one F5C feature.
pub fn landmark_head(tape: &mut Tape, feature: Var, w: &LandmarkWeights<Var>) -> Result<Var> {
    let y = tape.conv2d(feature, w.conv.w, Some(w.conv.b), (2, 2), (1, 1))?;
    let y = tape.relu(y)?;
    let n = tape.value(y).len();
    let y = tape.reshape(y, &[n])?;
    let y = tape.linear(y, w.fc1.w, Some(w.fc1.b))?;
    let y = tape.relu(y)?;
    Ok(tape.linear(y, w.fc2.w, Some(w.fc2.b))?)
}
