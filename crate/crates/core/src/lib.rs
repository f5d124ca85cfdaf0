//! The F5C network, its task heads, losses, metrics and the joint trainer.

pub mod adam;
pub mod backbone;
pub mod ccc;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod f5c;
pub mod fcc;
pub mod gradsuite;
pub mod heads;
pub mod layers;
pub mod loso;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use config::{Fusion, LossWeights, ModelConfig, TrainConfig};
pub use error::{CoreError, Result};
pub use metrics::{EvalTotals, MetricReport};
pub use model::{ClipOutput, Model, ShapeReport};
pub use trainer::{evaluate, predict, train, Control, EpochStats, TrainReport};
