//! Clip data: synthetic faces with exact motion ground truth, the on-disk
//! formats, and clip sampling/augmentation.

pub mod augment;
pub mod clip;
mod error;
pub mod face;
pub mod flo;
pub mod image;
pub mod landmarks;
pub mod manifest;
pub mod synth;
pub mod warp;

pub use augment::{augment, center_offset, crop, flip, Mode};
pub use clip::{load_clip, sample_indices, ClipSample};
pub use error::{DataError, Result};
pub use face::{inter_ocular, MIRROR, N_LANDMARKS};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use image::{GrayImage, RgbImage};
pub use landmarks::{read_landmarks, write_landmarks};
pub use manifest::{ClipRecord, DatasetManifest};
pub use synth::{generate_synthetic, GenConfig};
pub use warp::{interior_mae, warp_back};
