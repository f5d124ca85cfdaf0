//! Synthetic clip generator with exact flow and landmark ground truth.
//!
//! Ground truth is derived from the warp model in [`crate::face`]: pixel `p`
//! of frame `k` shows template point `phi_k(p)`, so its flow to frame `k+1`
//! is `phi_{k+1}^{-1}(phi_k(p)) - p`, and landmark `L` sits at
//! `phi_k^{-1}(L)`. Inverses are solved by fixed-point iteration on
//! `q = target + a D(q) + s`, a contraction while `a |grad D| < 1`.

use std::path::{Path, PathBuf};

use mxj_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{sample_indices, ClipSample};
use crate::error::{DataError, Result};
use crate::face::{Appearance, Deformation, Face, N_LANDMARKS};
use crate::flo::write_flo;
use crate::image::GrayImage;
use crate::landmarks::write_landmarks;
use crate::manifest::{ClipRecord, DatasetManifest, MANIFEST_VERSION};

const SUBJECT_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub subjects: usize,
    pub clips_per_subject: usize,
    pub n_classes: usize,
    pub t: usize,
    pub frame_size: usize,
    /// Length of the underlying video that `t` frames are sampled from.
    pub video_len: usize,
    /// Peak displacement scale in pixels.
    pub max_amplitude: f64,
    /// Largest rigid drift over a whole clip, in pixels.
    pub max_drift: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            subjects: 4,
            clips_per_subject: 5,
            n_classes: 3,
            t: 8,
            frame_size: 144,
            video_len: 15,
            max_amplitude: 2.5,
            max_drift: 0.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(DataError::Config(s));
        if self.n_classes != 3 && self.n_classes != 5 {
            return bad(format!("n_classes must be 3 or 5, got {}", self.n_classes));
        }
        if self.subjects == 0 || self.clips_per_subject == 0 {
            return bad("need at least one subject and one clip".into());
        }
        if self.t < 2 || self.video_len < self.t {
            return bad(format!("t = {} with video length {}", self.t, self.video_len));
        }
        if self.frame_size < 32 {
            return bad(format!("frame size {} is too small", self.frame_size));
        }
        if !(0.0..=3.0).contains(&self.max_amplitude) || !(0.0..=3.0).contains(&self.max_drift) {
            return bad("amplitude and drift must lie in [0, 3] px".into());
        }
        Ok(())
    }

    pub fn subject_id(&self, s: usize) -> String {
        format!("s{s:02}")
    }

    pub fn clip_id(&self, s: usize, c: usize) -> String {
        format!("s{s:02}_c{c:02}")
    }

    /// Labels rotate with the subject index so classes stay balanced.
    pub fn class_of(&self, s: usize, c: usize) -> usize {
        (s + c) % self.n_classes
    }

    pub fn subject_face(&self, s: usize) -> Face {
        let mut rng = stream_rng(self.seed, SUBJECT_STREAM + s as u64);
        Face::new(Appearance::sample(&mut rng, self.frame_size))
    }

    pub fn clip_motion(&self, face: &Face, s: usize, c: usize) -> Motion {
        let mut rng = stream_rng(self.seed, (s * self.clips_per_subject + c) as u64);
        Motion::expression(&mut rng, face, self.class_of(s, c), self)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-frame amplitude `a_k` and drift `s_k` of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub deformation: Deformation,
    pub amplitude: Vec<f64>,
    pub shift: Vec<[f64; 2]>,
}

impl Motion {
    pub fn still(t: usize) -> Self {
        Self {
            deformation: Deformation::default(),
            amplitude: vec![0.0; t],
            shift: vec![[0.0, 0.0]; t],
        }
    }

    /// Onset, apex and offset of one expression sampled at `t` of
    /// `video_len` instants, plus a slow linear drift.
    pub fn expression(rng: &mut impl Rng, face: &Face, class: usize, cfg: &GenConfig) -> Self {
        let peak = cfg.max_amplitude * rng.gen_range(0.8..=1.0);
        let apex: f64 = rng.gen_range(0.4..0.6);
        let drift = cfg.max_drift * rng.gen_range(0.0..=1.0);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let idx = sample_indices(cfg.video_len, cfg.t).expect("validated lengths");
        let mut amplitude = Vec::with_capacity(cfg.t);
        let mut shift = Vec::with_capacity(cfg.t);
        for i in idx {
            let tau = i as f64 / (cfg.video_len - 1) as f64;
            let phase = if tau <= apex { tau / apex } else { (1.0 - tau) / (1.0 - apex) };
            amplitude.push(peak * (std::f64::consts::FRAC_PI_2 * phase).sin().powi(2));
            shift.push([drift * tau * angle.cos(), drift * tau * angle.sin()]);
        }
        Self {
            deformation: Deformation::expression(class, face),
            amplitude,
            shift,
        }
    }

    pub fn t(&self) -> usize {
        self.amplitude.len()
    }

    /// `phi_k(p)`: the template point shown at frame position `p`.
    pub fn template_point(&self, k: usize, p: [f64; 2]) -> [f64; 2] {
        let d = self.deformation.eval(p[0], p[1]);
        let a = self.amplitude[k];
        [p[0] - a * d[0] - self.shift[k][0], p[1] - a * d[1] - self.shift[k][1]]
    }

    /// `phi_k^{-1}(target)`.
    pub fn frame_point(&self, k: usize, target: [f64; 2]) -> [f64; 2] {
        let (a, s) = (self.amplitude[k], self.shift[k]);
        let step = |q: [f64; 2]| {
            let d = self.deformation.eval(q[0], q[1]);
            [target[0] + a * d[0] + s[0], target[1] + a * d[1] + s[1]]
        };
        let mut q = step(target);
        for _ in 0..200 {
            let next = step(q);
            let delta = (next[0] - q[0]).abs().max((next[1] - q[1]).abs());
            q = next;
            if delta < 1e-13 {
                break;
            }
        }
        q
    }
}

/// Frames, flows (`2 x H x W`, `u` first) and flat landmark vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub frames: Vec<GrayImage>,
    pub flows: Vec<Tensor>,
    pub landmarks: Vec<Vec<f64>>,
}

impl RenderedClip {
    pub fn into_sample(self, clip_id: &str, subject_id: &str, label: usize) -> ClipSample {
        ClipSample {
            clip_id: clip_id.to_owned(),
            subject_id: subject_id.to_owned(),
            label,
            frames: self.frames.iter().map(GrayImage::to_tensor).collect(),
            flows: self.flows,
            landmarks: self.landmarks,
        }
    }
}

pub fn render_clip(face: &Face, motion: &Motion, size: usize) -> RenderedClip {
    let t = motion.t();
    let mut frames = Vec::with_capacity(t);
    let mut values = vec![0.0; size * size];
    for k in 0..t {
        for y in 0..size {
            for x in 0..size {
                let q = motion.template_point(k, [x as f64, y as f64]);
                values[y * size + x] = face.intensity(q[0], q[1]);
            }
        }
        frames.push(GrayImage::from_unit(size, size, &values));
    }
    let mut flows = Vec::with_capacity(t - 1);
    for k in 0..t - 1 {
        let mut f = vec![0.0; 2 * size * size];
        for y in 0..size {
            for x in 0..size {
                let p = [x as f64, y as f64];
                let q = motion.frame_point(k + 1, motion.template_point(k, p));
                f[y * size + x] = q[0] - p[0];
                f[size * size + y * size + x] = q[1] - p[1];
            }
        }
        flows.push(Tensor::new(&[2, size, size], f).expect("positive frame size"));
    }
    let landmarks = (0..t)
        .map(|k| {
            face.landmarks()
                .iter()
                .flat_map(|&l| motion.frame_point(k, l))
                .collect()
        })
        .collect();
    RenderedClip {
        frames,
        flows,
        landmarks,
    }
}

/// Renders one clip of the configured dataset in memory.
pub fn synth_clip(cfg: &GenConfig, s: usize, c: usize) -> ClipSample {
    let face = cfg.subject_face(s);
    let motion = cfg.clip_motion(&face, s, c);
    render_clip(&face, &motion, cfg.frame_size).into_sample(
        &cfg.clip_id(s, c),
        &cfg.subject_id(s),
        cfg.class_of(s, c),
    )
}

/// Writes the dataset under `dir` and returns its manifest (also saved as
/// `dir/manifest.json`).
pub fn generate_synthetic(dir: &Path, cfg: &GenConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut clips = Vec::with_capacity(cfg.subjects * cfg.clips_per_subject);
    for s in 0..cfg.subjects {
        let face = cfg.subject_face(s);
        for c in 0..cfg.clips_per_subject {
            let (subject, clip_id) = (cfg.subject_id(s), cfg.clip_id(s, c));
            let rel = PathBuf::from(&subject).join(&clip_id);
            let abs = dir.join(&rel);
            std::fs::create_dir_all(&abs).map_err(|e| DataError::io(&abs, e))?;
            let clip = render_clip(&face, &cfg.clip_motion(&face, s, c), cfg.frame_size);
            let mut frame_paths = Vec::with_capacity(cfg.t);
            for (k, img) in clip.frames.iter().enumerate() {
                let name = format!("frame_{k:03}.pgm");
                img.write(&abs.join(&name))?;
                frame_paths.push(rel.join(name));
            }
            let mut flow_paths = Vec::with_capacity(cfg.t - 1);
            for (k, flow) in clip.flows.iter().enumerate() {
                let name = format!("flow_{k:03}.flo");
                write_flo(&abs.join(&name), flow)?;
                flow_paths.push(rel.join(name));
            }
            write_landmarks(&abs.join("landmarks.csv"), &clip.landmarks)?;
            clips.push(ClipRecord {
                clip_id,
                subject_id: subject,
                class_label: cfg.class_of(s, c),
                frame_paths,
                landmark_path: rel.join("landmarks.csv"),
                flow_paths,
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        n_classes: cfg.n_classes,
        t: cfg.t,
        m: N_LANDMARKS,
        clips,
    };
    manifest.validate()?;
    manifest.save(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let cfg = GenConfig::default();
        let face = cfg.subject_face(0);
        let motion = cfg.clip_motion(&face, 0, 0);
        for k in 0..motion.t() {
            for &l in face.landmarks() {
                let q = motion.frame_point(k, l);
                let back = motion.template_point(k, q);
                assert!((back[0] - l[0]).abs() < 1e-10 && (back[1] - l[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn amplitude_profile_starts_and_ends_neutral() {
        let cfg = GenConfig::default();
        let face = cfg.subject_face(1);
        let m = cfg.clip_motion(&face, 1, 2);
        assert_eq!(m.amplitude[0], 0.0);
        assert!(m.amplitude[cfg.t - 1].abs() < 1e-12);
        let peak = m.amplitude.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 1.5 && peak <= cfg.max_amplitude);
    }

    #[test]
    fn rejects_bad_class_count() {
        let cfg = GenConfig {
            n_classes: 4,
            ..GenConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
