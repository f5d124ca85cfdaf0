//! Channel correspondence convolution: channels are graph vertices linked
//! to their most cosine-similar peers, edge features are aggregated by an
//! elementwise max, and a 1x1 convolution mixes the result.

use mxj_autodiff::{Graph, ParamId, Tape, Tensor, Var};

use crate::error::{config_err, CoreError, Result};
use crate::layers::{Affine, Init};

/// Directed k-NN graph over channels; `neighbors[i]` is ordered by
/// decreasing similarity, ties by lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

/// Cosine similarity; a zero vector is at similarity 0 to everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Builds the graph from the current values of a `C x H x W` feature map.
pub fn build_knn_graph(x: &Tensor, k: usize) -> Result<ChannelGraph> {
    let s = x.shape();
    if s.len() != 3 {
        return config_err(format!("graph input must be C x H x W, got {s:?}"));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    if k == 0 || k >= c {
        return config_err(format!("k = {k} must lie in 1..{c}"));
    }
    let f = |i: usize| &x.data()[i * hw..(i + 1) * hw];
    let mut sim = vec![0.0; c * c];
    for i in 0..c {
        for j in i + 1..c {
            let v = cosine_similarity(f(i), f(j));
            sim[i * c + j] = v;
            sim[j * c + i] = v;
        }
    }
    let neighbors = (0..c)
        .map(|i| {
            let mut cand: Vec<usize> = (0..c).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| sim[i * c + b].total_cmp(&sim[i * c + a]).then(a.cmp(&b)));
            cand.truncate(k);
            cand
        })
        .collect();
    Ok(ChannelGraph { k, neighbors })
}

/// `e[s] = relu(v1[s]·f_i + v2[s]·(f_j - f_i))` evaluated directly.
pub fn edge_feature(fi: &[f64], fj: &[f64], v1: &Tensor, v2: &Tensor) -> Vec<f64> {
    let n = fi.len();
    (0..n)
        .map(|s| {
            let r1 = &v1.data()[s * n..(s + 1) * n];
            let r2 = &v2.data()[s * n..(s + 1) * n];
            let z: f64 = (0..n).map(|r| r1[r] * fi[r] + r2[r] * (fj[r] - fi[r])).sum();
            z.max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CccWeights<T> {
    /// `HW x HW`, row `s` is `v_s^(1)`.
    pub v1: T,
    /// `HW x HW`, row `s` is `v_s^(2)`.
    pub v2: T,
    pub post: Affine<T>,
}

impl<T: Copy> CccWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(T) -> U) -> CccWeights<U> {
        let v1 = f(self.v1);
        let v2 = f(self.v2);
        CccWeights {
            v1,
            v2,
            post: self.post.map(f),
        }
    }
}

impl CccWeights<ParamId> {
    pub fn init(init: &mut Init, prefix: &str, c: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        let bound = 1.0 / (hw as f64).sqrt();
        Self {
            v1: init.uniform(&format!("{prefix}.v1"), &[hw, hw], bound),
            v2: init.uniform(&format!("{prefix}.v2"), &[hw, hw], bound),
            post: init.conv(&format!("{prefix}.post_mix"), c, c, 1),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> CccWeights<Var> {
        self.map(&mut |id| g.param(id))
    }
}

/// Max-aggregated edge features over a fixed graph, before mixing.
pub fn ccc_aggregate(tape: &mut Tape, x: Var, v1: Var, v2: Var, graph: &ChannelGraph) -> Result<Var> {
    Ok(tape.edge_conv_max(x, v1, v2, &graph.neighbors)?)
}

/// Rebuilds the graph from `x` and applies the full operator.
pub fn ccc_forward(tape: &mut Tape, x: Var, w: &CccWeights<Var>, k: usize) -> Result<Var> {
    let graph = build_knn_graph(tape.value(x), k)?;
    let agg = ccc_aggregate(tape, x, w.v1, w.v2, &graph)?;
    tape.conv2d(agg, w.post.w, Some(w.post.b), (1, 1), (0, 0))
        .map_err(CoreError::from)
}
