//! Wengert tape: every primitive application is appended as a node holding
//! its output value, its operands and whatever the backward rule needs.
//!
//! Operands always precede the node that uses them, so a single reverse
//! sweep over the node list visits each entry exactly once.
//!
//! `backward` borrows the tape immutably and returns a fresh
//! [`Gradients`] every call. Running it twice on the same tape yields
//! identical gradients; accumulation across passes is the caller's job
//! (see [`ParamStore::accumulate`](crate::ParamStore::accumulate)).

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::Window;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis along which a per-row or per-column quantity is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Indexed by row `i` (the `H` axis); replicated along `W`.
    Vertical,
    /// Indexed by column `j` (the `W` axis); replicated along `H`.
    Horizontal,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        window: Window,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        window: Window,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BroadcastAdd {
        x: Var,
        emb: Var,
        dir: Direction,
    },
    Circular {
        x: Var,
        u: Var,
        dir: Direction,
    },
    EdgeMax {
        x: Var,
        v1: Var,
        v2: Var,
        /// Winning neighbour channel per output element, `None` where the
        /// rectified maximum is not strictly positive.
        winner: Vec<Option<u32>>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    WeightedL1 {
        pred: Var,
        target: Tensor,
        weight: f64,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl Gradients {
    /// Gradient for `v`, if `v` is a differentiable leaf connected to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, zero-filled when the leaf is disconnected.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let shape = self.shapes[v.0]
                    .as_ref()
                    .expect("gradient requested for a non-leaf variable");
                Tensor::zeros(shape)
            }
        }
    }
}

pub(crate) type GradSlots = Vec<Option<Vec<f64>>>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, parents: &[Var]) -> Result<Var> {
        value.check_finite(op)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, node_op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(op, out, node_op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::new(v.shape(), v.data().iter().map(|x| x * factor).collect())?;
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    /// Rectified linear unit; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&x| x.max(0.0)).collect())?;
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Softmax cross entropy of raw `logits` against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() < 2 {
            return Err(shape_err("cross_entropy", "need at least two classes"));
        }
        if label >= z.len() {
            return Err(crate::error::config_err(
                "cross_entropy",
                format!("label {label} out of range for {} classes", z.len()),
            ));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - z[label];
        let probs = exps.iter().map(|e| e / total).collect();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", p.shape(), target.shape())));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(
            "mse",
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            &[pred],
        )
    }

    /// `weight * sum |pred - target|`; the subgradient of `|.|` at zero is zero.
    pub fn weighted_l1(&mut self, pred: Var, target: &Tensor, weight: f64) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err(
                "weighted_l1",
                format!("{:?} vs {:?}", p.shape(), target.shape()),
            ));
        }
        let loss = weight
            * p.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        self.push(
            "weighted_l1",
            Tensor::scalar(loss),
            Op::WeightedL1 {
                pred,
                target: target.clone(),
                weight,
            },
            &[pred],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut slots: GradSlots = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            slots[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = slots[i].take() else { continue };
            self.backward_node(node, &g, &mut slots);
        }
        let mut grads = Vec::with_capacity(self.nodes.len());
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let is_leaf = matches!(node.op, Op::Leaf);
            shapes.push(is_leaf.then(|| node.value.shape().to_vec()));
            let g = if is_leaf && node.requires_grad {
                slots
                    .get_mut(i)
                    .and_then(|s| s.take())
                    .map(|d| Tensor::new(node.value.shape(), d).expect("gradient shape"))
            } else {
                None
            };
            grads.push(g);
        }
        Ok(Gradients { grads, shapes })
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v`
    /// does not require a gradient.
    pub(crate) fn slot<'s>(&self, slots: &'s mut GradSlots, v: Var) -> Option<&'s mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            slots[v.0]
                .get_or_insert_with(|| vec![0.0; node.value.len()])
                .as_mut_slice(),
        )
    }

    fn backward_node(&self, node: &Node, g: &[f64], slots: &mut GradSlots) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(self.slot(slots, *a), g, 1.0);
                add_into(self.slot(slots, *b), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(slots, *a), g, 1.0);
                add_into(self.slot(slots, *b), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(slots, *a) {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * y;
                    }
                }
                if let Some(s) = self.slot(slots, *b) {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(va) {
                        *s += g * x;
                    }
                }
            }
            Op::Scale(a, f) => add_into(self.slot(slots, *a), g, *f),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(s) = self.slot(slots, *a) {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(x) {
                        if *x > 0.0 {
                            *s += g;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(slots, *a) {
                    s.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Reshape(a) => add_into(self.slot(slots, *a), g, 1.0),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if let Some(s) = self.slot(slots, v) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (d, x) in s[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                if let Some(s) = self.slot(slots, *logits) {
                    for (j, (s, p)) in s.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *label { 1.0 } else { 0.0 };
                        *s += g[0] * (p - onehot);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = 2.0 * g[0] / p.len() as f64;
                if let Some(s) = self.slot(slots, *pred) {
                    for ((s, a), b) in s.iter_mut().zip(p).zip(target.data()) {
                        *s += scale * (a - b);
                    }
                }
            }
            Op::WeightedL1 {
                pred,
                target,
                weight,
            } => {
                let p = self.value(*pred).data();
                if let Some(s) = self.slot(slots, *pred) {
                    for ((s, a), b) in s.iter_mut().zip(p).zip(target.data()) {
                        let d = a - b;
                        if d > 0.0 {
                            *s += g[0] * weight;
                        } else if d < 0.0 {
                            *s -= g[0] * weight;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => crate::nn::linear_backward(self, *x, *w, *b, g, slots),
            Op::Conv { x, w, b, window } => crate::nn::conv_backward(self, *x, *w, *b, window, g, slots),
            Op::ConvTranspose { x, w, b, window } => {
                crate::nn::conv_transpose_backward(self, *x, *w, *b, window, g, slots)
            }
            Op::MaxPool { x, argmax } => {
                if let Some(s) = self.slot(slots, *x) {
                    for (g, &i) in g.iter().zip(argmax) {
                        s[i] += g;
                    }
                }
            }
            Op::BroadcastAdd { x, emb, dir } => {
                crate::circular::broadcast_add_backward(self, *x, *emb, *dir, g, slots)
            }
            Op::Circular { x, u, dir } => crate::circular::circular_backward(self, *x, *u, *dir, g, slots),
            Op::EdgeMax { x, v1, v2, winner } => {
                crate::edge::edge_max_backward(self, *x, *v1, *v2, winner, g, slots)
            }
        }
    }
}

pub(crate) fn add_into(dst: Option<&mut [f64]>, g: &[f64], factor: f64) {
    if let Some(dst) = dst {
        for (d, x) in dst.iter_mut().zip(g) {
            *d += factor * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_fn(&[2, 3, 4], |i| i as f64 - 7.0));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_norm_gives_identity_gradient() {
        let mut t = Tape::new();
        let xv = Tensor::from_fn(&[5], |i| (i as f64).sin());
        let x = t.variable(xv.clone());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        let l = t.scale(s, 0.5).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.wrt(x).max_abs_diff(&xv) < 1e-15);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_fn(&[4], |i| i as f64 - 1.5));
        let r = t.relu(x).unwrap();
        let sq = t.mul(r, x).unwrap();
        let l = t.sum(sq).unwrap();
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        assert_eq!(g1.wrt(x), g2.wrt(x));
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = t.variable(Tensor::from_vec(vec![3.0]));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn concat_channels() {
        let mut t = Tape::new();
        let a = t.variable(Tensor::zeros(&[128, 16, 16]));
        let b = t.variable(Tensor::zeros(&[128, 16, 16]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.shape(c), &[256, 16, 16]);
        assert!(matches!(t.concat(&[a, b], 3), Err(TensorError::Axis { .. })));
        let d = t.variable(Tensor::zeros(&[128, 8, 16]));
        assert!(t.concat(&[a, d], 0).is_err());
    }

    #[test]
    fn concat_middle_axis_layout() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.constant(Tensor::new(&[2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.variable(Tensor::zeros(&[5]));
        let l = t.cross_entropy(z, 2).unwrap();
        assert!((t.value(l).item() - 5f64.ln()).abs() < 1e-12);

        let z = t.variable(Tensor::from_vec(vec![7f64.ln(), 0.0, 0.0, 0.5f64.ln(), 0.5f64.ln()]));
        let l = t.cross_entropy(z, 0).unwrap();
        assert!((t.value(l).item() + 0.7f64.ln()).abs() < 1e-12);

        let z = t.variable(Tensor::from_vec(vec![60.0, 0.0, 0.0]));
        let l = t.cross_entropy(z, 0).unwrap();
        assert!(t.value(l).item() < 1e-20);

        assert!(t.cross_entropy(z, 3).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::from_vec(vec![1e300]));
        assert!(matches!(t.scale(x, 1e300), Err(TensorError::NonFinite { .. })));
    }
}
