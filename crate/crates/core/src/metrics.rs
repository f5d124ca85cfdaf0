//! Evaluation metrics and the report they are collected into.

use std::fmt::Write as _;

use mxj_autodiff::Tensor;
use mxj_data::inter_ocular;
use serde::{Deserialize, Serialize};

/// Landmark samples with NME above this percentage count as failures.
pub const FAILURE_NME: f64 = 10.0;

/// `matrix[true][predicted]` counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        Self {
            matrix: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.matrix.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.matrix[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.n_classes(), other.n_classes(), "class counts differ");
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    /// Samples whose true class is `j`.
    pub fn support(&self, j: usize) -> u64 {
        self.matrix[j].iter().sum()
    }

    pub fn tp(&self, j: usize) -> u64 {
        self.matrix[j][j]
    }

    pub fn fp(&self, j: usize) -> u64 {
        (0..self.n_classes()).filter(|&i| i != j).map(|i| self.matrix[i][j]).sum()
    }

    pub fn fn_(&self, j: usize) -> u64 {
        self.support(j) - self.tp(j)
    }
}

/// Percentages. Classes without samples get recall 0 (and F1 0 when the
/// F1 denominator vanishes) and are listed in `empty_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub acc: f64,
    pub wf1: f64,
    pub uf1: f64,
    pub uar: f64,
    pub empty_classes: Vec<usize>,
}

pub fn classification_metrics(c: &ConfusionCounts) -> Option<ClassMetrics> {
    let total = c.total();
    if total == 0 {
        return None;
    }
    let n = c.n_classes();
    let big_n = total as f64;
    let (mut tp_sum, mut wf1, mut uf1, mut uar) = (0.0, 0.0, 0.0, 0.0);
    let mut empty_classes = Vec::new();
    for j in 0..n {
        let (tp, fp, fn_) = (c.tp(j) as f64, c.fp(j) as f64, c.fn_(j) as f64);
        let nj = c.support(j) as f64;
        let den = 2.0 * tp + fp + fn_;
        let f1 = if den > 0.0 { 2.0 * tp / den } else { 0.0 };
        tp_sum += tp;
        wf1 += nj * f1;
        uf1 += f1;
        if nj > 0.0 {
            uar += tp / nj;
        } else {
            empty_classes.push(j);
        }
    }
    Some(ClassMetrics {
        acc: 100.0 * tp_sum / big_n,
        wf1: 100.0 * wf1 / big_n,
        uf1: 100.0 * uf1 / n as f64,
        uar: 100.0 * uar / n as f64,
        empty_classes,
    })
}

/// Mean end-point error of two `2 x H x W` fields.
pub fn epe(pred: &Tensor, gt: &Tensor) -> f64 {
    assert_eq!(pred.shape(), gt.shape(), "flow shapes differ");
    let hw = pred.len() / 2;
    let (p, g) = (pred.data(), gt.data());
    let sum: f64 = (0..hw).map(|i| (p[i] - g[i]).hypot(p[hw + i] - g[hw + i])).sum();
    sum / hw as f64
}

/// Mean point-to-point error as a percentage of `d_o`.
pub fn nme_with(pred: &[f64], gt: &[f64], d_o: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "landmark lengths differ");
    let m = gt.len() / 2;
    let sum: f64 = (0..m)
        .map(|s| (pred[2 * s] - gt[2 * s]).hypot(pred[2 * s + 1] - gt[2 * s + 1]))
        .sum();
    100.0 * sum / (m as f64 * d_o)
}

/// [`nme_with`] normalised by the ground truth's inter-ocular distance.
pub fn nme(pred: &[f64], gt: &[f64]) -> f64 {
    nme_with(pred, gt, inter_ocular(gt))
}

/// Running totals for one evaluation. Merging is associative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTotals {
    pub counts: ConfusionCounts,
    /// Per-pair EPE values.
    pub epe: Vec<f64>,
    /// Per-sample NME values.
    pub nme: Vec<f64>,
}

impl EvalTotals {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: ConfusionCounts::new(n_classes),
            epe: Vec::new(),
            nme: Vec::new(),
        }
    }

    pub fn merge(&mut self, other: &EvalTotals) {
        self.counts.merge(&other.counts);
        self.epe.extend_from_slice(&other.epe);
        self.nme.extend_from_slice(&other.nme);
    }

    pub fn report(&self) -> MetricReport {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let class = classification_metrics(&self.counts);
        MetricReport {
            samples: self.counts.total(),
            acc: class.as_ref().map(|c| c.acc),
            wf1: class.as_ref().map(|c| c.wf1),
            uf1: class.as_ref().map(|c| c.uf1),
            uar: class.as_ref().map(|c| c.uar),
            empty_classes: class.map(|c| c.empty_classes).unwrap_or_default(),
            epe: mean(&self.epe),
            nme: mean(&self.nme),
            failure_rate: (!self.nme.is_empty()).then(|| {
                100.0 * self.nme.iter().filter(|&&v| v > FAILURE_NME).count() as f64 / self.nme.len() as f64
            }),
            confusion: self.counts.matrix.clone(),
        }
    }
}

/// One evaluation run. Metrics of disabled heads are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: u64,
    #[serde(rename = "Acc")]
    pub acc: Option<f64>,
    #[serde(rename = "WF1")]
    pub wf1: Option<f64>,
    #[serde(rename = "UF1")]
    pub uf1: Option<f64>,
    #[serde(rename = "UAR")]
    pub uar: Option<f64>,
    pub empty_classes: Vec<usize>,
    #[serde(rename = "EPE")]
    pub epe: Option<f64>,
    #[serde(rename = "NME")]
    pub nme: Option<f64>,
    pub failure_rate: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    /// Pretty JSON with every value rounded to two decimals.
    pub fn to_json(&self) -> String {
        let r2 = |v: Option<f64>| v.map(|x| (x * 100.0).round() / 100.0);
        let rounded = MetricReport {
            acc: r2(self.acc),
            wf1: r2(self.wf1),
            uf1: r2(self.uf1),
            uar: r2(self.uar),
            epe: r2(self.epe),
            nme: r2(self.nme),
            failure_rate: r2(self.failure_rate),
            ..self.clone()
        };
        serde_json::to_string_pretty(&rounded).expect("report serializes")
    }

    /// `key value` lines; missing metrics print as `n/a`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples {}", self.samples);
        for (k, v) in [
            ("Acc", self.acc),
            ("WF1", self.wf1),
            ("UF1", self.uf1),
            ("UAR", self.uar),
            ("EPE", self.epe),
            ("NME", self.nme),
            ("failure_rate", self.failure_rate),
        ] {
            match v {
                Some(x) => writeln!(s, "{k} {x:.2}"),
                None => writeln!(s, "{k} n/a"),
            }
            .expect("string write");
        }
        if !self.empty_classes.is_empty() {
            let list: Vec<String> = self.empty_classes.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "empty_classes {}", list.join(","));
        }
        s
    }
}
