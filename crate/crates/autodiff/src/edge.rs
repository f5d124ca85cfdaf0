//! Max-aggregated edge convolution over channels treated as graph vertices.
//!
//! With `f_i` the flattened channel `i`, each edge `i <- j` carries
//! `e[i,j,s] = relu(v1[s]·f_i + v2[s]·(f_j - f_i))`, and vertex `i` keeps the
//! elementwise maximum over its neighbours. Since
//! `v1·f_i + v2·(f_j - f_i) = (v1 - v2)·f_i + v2·f_j`, both halves are
//! computed once per channel with two matrix products.

use crate::error::{shape_err, Result};
use crate::kernels::gemm;
use crate::tape::{GradSlots, Op, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// `neighbors[i]` lists the source channels of vertex `i`. The graph
    /// itself is not differentiated. When two neighbours tie for the
    /// maximum, the one with the lower channel index wins.
    pub fn edge_conv_max(&mut self, x: Var, v1: Var, v2: Var, neighbors: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let xs = xv.shape().to_vec();
        if xs.len() != 3 {
            return Err(shape_err("edge_conv_max", format!("input must be C x H x W, got {xs:?}")));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        for v in [v1, v2] {
            if self.shape(v) != [hw, hw] {
                return Err(shape_err(
                    "edge_conv_max",
                    format!("edge weights must be {hw} x {hw}, got {:?}", self.shape(v)),
                ));
            }
        }
        if neighbors.len() != c || neighbors.iter().any(|n| n.is_empty() || n.iter().any(|&j| j >= c)) {
            return Err(shape_err(
                "edge_conv_max",
                format!("neighbour lists must cover {c} vertices with indices below {c}"),
            ));
        }
        let (a, b) = self.edge_halves(x, v1, v2);
        let mut out = vec![0.0; c * hw];
        let mut winner = vec![None; c * hw];
        let mut sorted = Vec::new();
        for (i, nbrs) in neighbors.iter().enumerate() {
            sorted.clear();
            sorted.extend_from_slice(nbrs);
            sorted.sort_unstable();
            for s in 0..hw {
                let ai = a[i * hw + s];
                let mut best_j = sorted[0];
                let mut best = ai + b[best_j * hw + s];
                for &j in &sorted[1..] {
                    let z = ai + b[j * hw + s];
                    if z > best {
                        best = z;
                        best_j = j;
                    }
                }
                if best > 0.0 {
                    out[i * hw + s] = best;
                    winner[i * hw + s] = Some(best_j as u32);
                }
            }
        }
        let out = Tensor::new(&xs, out)?;
        self.push("edge_conv_max", out, Op::EdgeMax { x, v1, v2, winner }, &[x, v1, v2])
    }

    /// `(X (V1 - V2)^T, X V2^T)`, both `C x HW`.
    fn edge_halves(&self, x: Var, v1: Var, v2: Var) -> (Vec<f64>, Vec<f64>) {
        let xd = self.value(x).data();
        let hw = self.shape(v1)[0];
        let c = xd.len() / hw;
        let m = diff(self.value(v1).data(), self.value(v2).data());
        let mut a = vec![0.0; c * hw];
        gemm(c, hw, hw, xd, false, &m, true, &mut a, 0.0);
        let mut b = vec![0.0; c * hw];
        gemm(c, hw, hw, xd, false, self.value(v2).data(), true, &mut b, 0.0);
        (a, b)
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn edge_max_backward(
    tape: &Tape,
    x: Var,
    v1: Var,
    v2: Var,
    winner: &[Option<u32>],
    g: &[f64],
    slots: &mut GradSlots,
) {
    let xd = tape.value(x).data();
    let hw = tape.shape(v1)[0];
    let c = xd.len() / hw;
    let mut da = vec![0.0; c * hw];
    let mut db = vec![0.0; c * hw];
    for i in 0..c {
        for s in 0..hw {
            if let Some(j) = winner[i * hw + s] {
                let gv = g[i * hw + s];
                da[i * hw + s] += gv;
                db[j as usize * hw + s] += gv;
            }
        }
    }
    let v1d = tape.value(v1).data();
    let v2d = tape.value(v2).data();
    if let Some(gx) = tape.slot(slots, x) {
        let m = diff(v1d, v2d);
        gemm(c, hw, hw, &da, false, &m, false, gx, 1.0);
        gemm(c, hw, hw, &db, false, v2d, false, gx, 1.0);
    }
    if let Some(g1) = tape.slot(slots, v1) {
        gemm(hw, c, hw, &da, true, xd, false, g1, 1.0);
    }
    if let Some(g2) = tape.slot(slots, v2) {
        let d = diff(&db, &da);
        gemm(hw, c, hw, &d, true, xd, false, g2, 1.0);
    }
}
