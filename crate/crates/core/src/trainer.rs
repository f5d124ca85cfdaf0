//! Joint training of all enabled heads, and read-only evaluation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mxj_autodiff::{GradBuffer, Tensor};
use mxj_data::{augment, center_offset, load_clip, ClipSample, DatasetManifest, Mode};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::Adam;
use crate::config::TrainConfig;
use crate::error::{config_err, CoreError, Result};
use crate::losses::clip_loss;
use crate::metrics::{epe, nme, EvalTotals};
use crate::model::Model;

/// Mean loss terms over one epoch's clips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_e: f64,
    pub l_f: f64,
    pub l_m: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub stopped_early: bool,
}

pub const LOG_HEADER: &str = "epoch,L_e,L_f,L_m,L";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.l_e, self.l_f, self.l_m, self.total)
    }
}

impl TrainReport {
    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}", e.csv_row());
        }
        s
    }
}

/// Append-only epoch log; each row is flushed as soon as it is written.
pub struct EpochLog {
    path: PathBuf,
    file: fs::File,
}

impl EpochLog {
    /// Starts a new log at `path`, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        let io = |source| CoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io)?;
        writeln!(file, "{LOG_HEADER}").map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, stats: &EpochStats) -> Result<()> {
        writeln!(self.file, "{}", stats.csv_row())
            .and_then(|_| self.file.flush())
            .map_err(|source| CoreError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

pub fn load_dataset(manifest: &DatasetManifest, root: &Path) -> Result<Vec<ClipSample>> {
    manifest
        .clips
        .iter()
        .map(|r| load_clip(root, r, manifest.m).map_err(CoreError::from))
        .collect()
}

fn check_compatible(model: &Model, clips: &[ClipSample], crop: usize) -> Result<()> {
    let cfg = &model.cfg;
    if crop != cfg.frame_size {
        return config_err(format!("crop {crop} differs from the model's frame size {}", cfg.frame_size));
    }
    for c in clips {
        if c.t() != cfg.t {
            return config_err(format!("clip {} has {} frames, model expects {}", c.clip_id, c.t(), cfg.t));
        }
        if c.label >= cfg.n_classes {
            return config_err(format!("clip {} label {} with {} classes", c.clip_id, c.label, cfg.n_classes));
        }
        if c.landmarks.iter().any(|l| l.len() != 2 * cfg.m) {
            return config_err(format!("clip {} does not carry {} landmarks", c.clip_id, cfg.m));
        }
    }
    Ok(())
}

/// Mean landmark vector over all clips and frames, in center-crop
/// coordinates.
pub fn mean_landmarks(clips: &[ClipSample], crop: usize) -> Vec<f64> {
    let len = clips[0].landmarks[0].len();
    let mut mean = vec![0.0; len];
    let mut n = 0usize;
    for c in clips {
        let (h, w) = c.size();
        let (ox, oy) = (center_offset(w, crop) as f64, center_offset(h, crop) as f64);
        for l in &c.landmarks {
            for (i, v) in l.iter().enumerate() {
                mean[i] += v - if i % 2 == 0 { ox } else { oy };
            }
            n += 1;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    mean
}

fn augment_rng(seed: u64, epoch: usize, clip: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | clip as u64);
    rng
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | epoch as u64);
    rng
}

/// Loss terms and parameter gradients of one clip.
pub fn clip_gradients(model: &Model, clip: &ClipSample, cfg: &TrainConfig) -> Result<(GradBuffer, [f64; 4])> {
    let mut g = model.graph();
    let out = model.forward(&mut g, &clip.frames)?;
    let loss = clip_loss(&mut g, &out, clip, cfg.weights)?;
    let grads = g.param_grads(loss.total)?;
    Ok((grads, loss.values(&g)))
}

/// Runs `cfg.epochs` epochs of minibatch Adam. `on_epoch` sees the stats
/// and the updated model after each epoch and may stop training.
pub fn train(
    model: &mut Model,
    clips: &[ClipSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model) -> Control,
) -> Result<TrainReport> {
    cfg.validate()?;
    if clips.is_empty() {
        return config_err("no training clips");
    }
    check_compatible(model, clips, cfg.crop)?;
    if cfg.landmark_bias_init && model.cfg.landmark_head {
        model.set_landmark_bias(&mean_landmarks(clips, cfg.crop))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
    let mode = if cfg.augment {
        Mode::Train { flip: cfg.flip }
    } else {
        Mode::Test
    };
    let mut adam = Adam::new(cfg.into(), &model.store);
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng(cfg.seed, epoch));
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            let model_ref: &Model = model;
            let results: Vec<Result<(GradBuffer, [f64; 4])>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = augment_rng(cfg.seed, epoch, i);
                        let clip = augment(&clips[i], mode, cfg.crop, &mut rng)?;
                        clip_gradients(model_ref, &clip, cfg)
                    })
                    .collect()
            });
            let mut total = GradBuffer::empty(model.store.len());
            for r in results {
                let (grads, values) = r?;
                total.merge(&grads);
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
            }
            total.scale(1.0 / batch.len() as f64);
            model.store.zero_grad();
            model.store.accumulate(&total)?;
            adam.step(&mut model.store);
        }
        let n = clips.len() as f64;
        let stats = EpochStats {
            epoch,
            l_e: sums[0] / n,
            l_f: sums[1] / n,
            l_m: sums[2] / n,
            total: sums[3] / n,
        };
        if !stats.total.is_finite() {
            return Err(CoreError::Config(format!("loss diverged at epoch {epoch}")));
        }
        report.epochs.push(stats);
        if on_epoch(&stats, model) == Control::Stop {
            report.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    report.steps = adam.steps();
    Ok(report)
}

/// Outputs of one clip as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Option<Vec<f64>>,
    pub class: Option<usize>,
    pub flows: Vec<Tensor>,
    pub landmarks: Vec<Vec<f64>>,
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Lowest index among maximal entries.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Forward pass on an already cropped clip.
pub fn predict(model: &Model, frames: &[Tensor]) -> Result<Prediction> {
    let mut g = model.graph();
    let out = model.forward(&mut g, frames)?;
    let probs = out.logits.map(|l| softmax(g.value(l).data()));
    Ok(Prediction {
        class: probs.as_deref().map(argmax),
        probs,
        flows: out.flows.iter().map(|&v| g.value(v).clone()).collect(),
        landmarks: out.landmarks.iter().map(|&v| g.value(v).data().to_vec()).collect(),
    })
}

/// Center-crops every clip and scores the enabled heads.
pub fn evaluate(model: &Model, clips: &[ClipSample], crop: usize, workers: usize) -> Result<EvalTotals> {
    check_compatible(model, clips, crop)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
    let per_clip: Vec<Result<EvalTotals>> = pool.install(|| {
        clips
            .par_iter()
            .map(|c| {
                let mut rng = augment_rng(0, 0, 0);
                let clip = augment(c, Mode::Test, crop, &mut rng)?;
                let p = predict(model, &clip.frames)?;
                let mut t = EvalTotals::new(model.cfg.n_classes);
                if let Some(class) = p.class {
                    t.counts.record(clip.label, class);
                }
                for (pred, gt) in p.flows.iter().zip(&clip.flows) {
                    t.epe.push(epe(pred, gt));
                }
                for (pred, gt) in p.landmarks.iter().zip(&clip.landmarks[1..]) {
                    t.nme.push(nme(pred, gt));
                }
                Ok(t)
            })
            .collect()
    });
    let mut totals = EvalTotals::new(model.cfg.n_classes);
    for t in per_clip {
        totals.merge(&t?);
    }
    Ok(totals)
}
