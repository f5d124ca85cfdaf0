//! Leave-one-subject-out evaluation.

use mxj_data::ClipSample;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{config_err, Result};
use crate::metrics::{EvalTotals, MetricReport};
use crate::model::Model;
use crate::trainer::{evaluate, train, Control};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per subject, in sorted subject order.
pub fn loso_split(subjects: &[&str]) -> Result<Vec<Fold>> {
    let mut unique: Vec<&str> = subjects.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() < 2 {
        return config_err(format!("LOSO needs at least two subjects, found {}", unique.len()));
    }
    Ok(unique
        .into_iter()
        .map(|s| {
            let (test, train) = (0..subjects.len()).partition(|&i| subjects[i] == s);
            Fold {
                test_subject: s.to_string(),
                train,
                test,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub test_subject: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldReport>,
    /// Metrics over the pooled counts of all folds.
    pub pooled: MetricReport,
}

/// Trains a fresh model per fold and pools the test counts.
pub fn run_loso(model_cfg: &ModelConfig, train_cfg: &TrainConfig, clips: &[ClipSample]) -> Result<LosoReport> {
    let subjects: Vec<&str> = clips.iter().map(|c| c.subject_id.as_str()).collect();
    let folds = loso_split(&subjects)?;
    let mut pooled = EvalTotals::new(model_cfg.n_classes);
    let mut reports = Vec::with_capacity(folds.len());
    for fold in folds {
        let train_clips: Vec<ClipSample> = fold.train.iter().map(|&i| clips[i].clone()).collect();
        let test_clips: Vec<ClipSample> = fold.test.iter().map(|&i| clips[i].clone()).collect();
        let mut model = Model::new(model_cfg.clone(), train_cfg.seed)?;
        train(&mut model, &train_clips, train_cfg, |_, _| Control::Continue)?;
        let totals = evaluate(&model, &test_clips, train_cfg.crop, train_cfg.workers)?;
        pooled.merge(&totals);
        reports.push(FoldReport {
            test_subject: fold.test_subject,
            report: totals.report(),
        });
    }
    Ok(LosoReport {
        folds: reports,
        pooled: pooled.report(),
    })
}
