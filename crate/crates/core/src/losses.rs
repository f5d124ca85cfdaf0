//! Task losses on the tape and their weighted sum.

use mxj_autodiff::{Tape, Tensor, Var};
use mxj_data::{inter_ocular, ClipSample};

use crate::config::LossWeights;
use crate::error::{config_err, Result};
use crate::model::ClipOutput;

/// Mean over pairs of the per-pair mean squared error.
pub fn flow_loss(tape: &mut Tape, preds: &[Var], gts: &[Tensor]) -> Result<Var> {
    if preds.is_empty() || preds.len() != gts.len() {
        return config_err(format!("{} flow predictions for {} targets", preds.len(), gts.len()));
    }
    let mut total = None;
    for (&p, gt) in preds.iter().zip(gts) {
        let l = tape.mse(p, gt)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(tape.scale(total.expect("non-empty"), 1.0 / preds.len() as f64)?)
}

/// `sum_k sum_s (|dx| + |dy|) / (m (t - 1) d_k)` with `d_k` the target's
/// inter-ocular distance; `preds.len()` plays the role of `t - 1`.
pub fn landmark_loss(tape: &mut Tape, preds: &[Var], gts: &[Vec<f64>], d_o: &[f64]) -> Result<Var> {
    if preds.is_empty() || preds.len() != gts.len() || gts.len() != d_o.len() {
        return config_err(format!(
            "{} landmark predictions, {} targets, {} distances",
            preds.len(),
            gts.len(),
            d_o.len()
        ));
    }
    if let Some(d) = d_o.iter().find(|d| !(**d > 0.0)) {
        return config_err(format!("inter-ocular distance must be positive, got {d}"));
    }
    let m = gts[0].len() / 2;
    let pairs = preds.len() as f64;
    let mut total = None;
    for ((&p, gt), &d) in preds.iter().zip(gts).zip(d_o) {
        let target = Tensor::from_vec(gt.clone());
        let l = tape.weighted_l1(p, &target, 1.0 / (m as f64 * pairs * d))?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `L = L_e + lambda_f L_f + lambda_m L_m` over whichever terms exist.
pub fn full_loss(
    tape: &mut Tape,
    l_e: Option<Var>,
    l_f: Option<Var>,
    l_m: Option<Var>,
    w: LossWeights,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if let Some(v) = l_e {
        terms.push(v);
    }
    if let Some(v) = l_f {
        terms.push(tape.scale(v, w.lambda_f)?);
    }
    if let Some(v) = l_m {
        terms.push(tape.scale(v, w.lambda_m)?);
    }
    let mut it = terms.into_iter();
    let mut total = match it.next() {
        Some(v) => v,
        None => return config_err("no loss terms"),
    };
    for v in it {
        total = tape.add(total, v)?;
    }
    Ok(total)
}

/// Loss terms of one clip.
#[derive(Debug, Clone, Copy)]
pub struct ClipLoss {
    pub l_e: Option<Var>,
    pub l_f: Option<Var>,
    pub l_m: Option<Var>,
    pub total: Var,
}

impl ClipLoss {
    /// `(L_e, L_f, L_m, L)` with absent terms as 0.
    pub fn values(&self, tape: &Tape) -> [f64; 4] {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.value(x).item());
        [v(self.l_e), v(self.l_f), v(self.l_m), tape.value(self.total).item()]
    }
}

pub fn clip_loss(tape: &mut Tape, out: &ClipOutput, clip: &ClipSample, w: LossWeights) -> Result<ClipLoss> {
    let l_e = match out.logits {
        Some(logits) => Some(tape.cross_entropy(logits, clip.label)?),
        None => None,
    };
    let l_f = if out.flows.is_empty() {
        None
    } else {
        Some(flow_loss(tape, &out.flows, &clip.flows)?)
    };
    let l_m = if out.landmarks.is_empty() {
        None
    } else {
        let gts = &clip.landmarks[1..];
        let d_o: Vec<f64> = gts.iter().map(|l| inter_ocular(l)).collect();
        Some(landmark_loss(tape, &out.landmarks, gts, &d_o)?)
    };
    let total = full_loss(tape, l_e, l_f, l_m, w)?;
    Ok(ClipLoss { l_e, l_f, l_m, total })
}
