use std::path::Path;

use mxj_autodiff::Tensor;

use crate::error::{DataError, Result};
use crate::face::inter_ocular;
use crate::flo::read_flo;
use crate::image::GrayImage;
use crate::landmarks::read_landmarks;
use crate::manifest::ClipRecord;

/// One training example: `t` frames (`1 x H x W` in `[0, 1]`), `t - 1` flows
/// (`2 x H x W`, flow `k` maps frame `k` into frame `k + 1`), and `t` flat
/// landmark vectors in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub clip_id: String,
    pub subject_id: String,
    pub label: usize,
    pub frames: Vec<Tensor>,
    pub flows: Vec<Tensor>,
    pub landmarks: Vec<Vec<f64>>,
}

impl ClipSample {
    pub fn t(&self) -> usize {
        self.frames.len()
    }

    /// `(height, width)` of the frames.
    pub fn size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(DataError::Config(format!("clip {}: {s}", self.clip_id)));
        let t = self.frames.len();
        if t < 2 {
            return bad(format!("{t} frames"));
        }
        if self.flows.len() != t - 1 || self.landmarks.len() != t {
            return bad(format!(
                "{t} frames, {} flows, {} landmark rows",
                self.flows.len(),
                self.landmarks.len()
            ));
        }
        let (h, w) = self.size();
        if self.frames.iter().any(|f| f.shape() != [1, h, w]) {
            return bad("frames differ in size".into());
        }
        if self.flows.iter().any(|f| f.shape() != [2, h, w]) {
            return bad(format!("flows must be 2 x {h} x {w}"));
        }
        let m2 = self.landmarks[0].len();
        if m2 == 0 || m2 % 2 != 0 || self.landmarks.iter().any(|l| l.len() != m2) {
            return bad("landmark rows differ in length".into());
        }
        Ok(())
    }

    /// Inter-ocular distance of frame `k` (68-point layout).
    pub fn inter_ocular(&self, k: usize) -> f64 {
        inter_ocular(&self.landmarks[k])
    }
}

/// Indices `round(i (len - 1) / (t - 1))` for `i` in `0..t`.
pub fn sample_indices(len: usize, t: usize) -> Result<Vec<usize>> {
    if t < 2 || len < t {
        return Err(DataError::Config(format!("cannot sample {t} frames from {len}")));
    }
    let den = t - 1;
    // integer form of round-half-up
    Ok((0..t).map(|i| (2 * i * (len - 1) + den) / (2 * den)).collect())
}

/// Loads a clip whose files are laid out relative to `root`.
pub fn load_clip(root: &Path, record: &ClipRecord, m: usize) -> Result<ClipSample> {
    let frames = record
        .frame_paths
        .iter()
        .map(|p| GrayImage::read(&root.join(p)).map(|img| img.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    let flows = record
        .flow_paths
        .iter()
        .map(|p| read_flo(&root.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let lm_path = root.join(&record.landmark_path);
    let landmarks = read_landmarks(&lm_path)?;
    if landmarks.iter().any(|l| l.len() != 2 * m) {
        return Err(DataError::format(&lm_path, format!("expected {m} landmarks per row")));
    }
    let clip = ClipSample {
        clip_id: record.clip_id.clone(),
        subject_id: record.subject_id.clone(),
        label: record.class_label,
        frames,
        flows,
        landmarks,
    };
    clip.validate()?;
    Ok(clip)
}
