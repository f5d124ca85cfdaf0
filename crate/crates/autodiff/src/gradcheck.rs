//! Central finite-difference gradient checks.
//!
//! For each probed coordinate the numerical derivative is the central
//! difference at `step`. The same difference at `step / 2` is used to
//! detect a kink (ReLU hinge, max switch, `|.|`) inside the probe interval:
//! on smooth functions the two agree to `O(step^2)`, across a kink they do
//! not. A hinge exactly at the probed point is symmetric and passes that
//! test, so the one-sided slopes are also compared. Such coordinates are
//! reported as skipped instead of compared.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Relative disagreement between the two step sizes above which a
    /// coordinate is treated as straddling a kink.
    pub kink_tol: f64,
    /// Upper bound on probed coordinates per input; larger inputs are
    /// subsampled at evenly spread, seed-shifted positions.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
            kink_tol: 5e-5,
            max_coords: 48,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Minimum slope change, relative to the gradient scale, treated as a hinge.
const HINGE_TOL: f64 = 1e-3;

/// Checks a scalar-valued function of `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let f0 = tape.value(loss).item();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    let h = cfg.step;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for idx in probe_indices(inputs[k].len(), cfg.max_coords, cfg.seed ^ (k as u64)) {
            let orig = inputs[k].data()[idx];
            let mut at = |delta: f64| -> Result<f64> {
                work[k].data_mut()[idx] = orig + delta;
                let v = eval(&work);
                work[k].data_mut()[idx] = orig;
                v
            };
            let (fp, fm) = (at(h)?, at(-h)?);
            let (fp2, fm2) = (at(h / 2.0)?, at(-h / 2.0)?);
            let central = (fp - fm) / (2.0 * h);
            let half = (fp2 - fm2) / h;
            let scale = central.abs().max(half.abs()).max(cfg.floor);
            // slope change across the probe point: O(step) when smooth,
            // constant when a hinge sits exactly at the point
            let jump = (fp + fm - 2.0 * f0) / h;
            let jump2 = (fp2 + fm2 - 2.0 * f0) / (h / 2.0);
            let hinge = jump2.abs() > HINGE_TOL * scale && jump2.abs() > 0.75 * jump.abs();
            if hinge || (central - half).abs() > cfg.kink_tol * scale {
                report.skipped += 1;
                continue;
            }
            let a = analytic.data()[idx];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, idx));
            }
        }
    }
    Ok(report)
}

/// Checks an arbitrary-shaped op by contracting its output with fixed
/// pseudo-random weights, which exercises every output element.
pub fn grad_check_op<F>(op: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check(
        |tape, vars| {
            let out = op(tape, vars)?;
            let shape = tape.shape(out).to_vec();
            let mut state = 0x9e37_79b9_7f4a_7c15u64;
            let weights = Tensor::from_fn(&shape, |_| unit_noise(&mut state));
            let w = tape.constant(weights);
            let prod = tape.mul(out, w)?;
            tape.sum(prod)
        },
        inputs,
        cfg,
    )
}

fn probe_indices(len: usize, max: usize, seed: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut state = seed.wrapping_add(0x5851_f42d_4c95_7f2d);
    let offset = (splitmix(&mut state) % len as u64) as usize;
    let mut idx: Vec<usize> = (0..max).map(|i| (offset + i * len / max) % len).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic value in `[-1, 1)`.
fn unit_noise(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}
