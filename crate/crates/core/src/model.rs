//! The assembled network: shared backbone and F5C stack per frame, then the
//! MER, flow and landmark heads.

use mxj_autodiff::{Graph, ParamId, ParamStore, Tape, Tensor, Var};

use crate::backbone::{rich_feature, BackboneWeights};
use crate::config::{Fusion, ModelConfig};
use crate::error::{config_err, Result};
use crate::f5c::{f5c_forward, F5cWeights};
use crate::heads::{
    flow_head, landmark_head, mer_head, FlowWeights, LandmarkWeights, MerGeometry, MerWeights,
};
use crate::layers::Init;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelWeights<T> {
    pub backbone: BackboneWeights<T>,
    pub f5c: Vec<F5cWeights<T>>,
    pub mer: MerWeights<T>,
    pub flow: FlowWeights<T>,
    pub landmark: LandmarkWeights<T>,
}

/// Variables produced for one clip. Disabled heads leave their entries
/// empty.
#[derive(Debug, Clone)]
pub struct ClipOutput {
    /// F5C output per frame.
    pub features: Vec<Var>,
    pub mer_input: Vec<Var>,
    pub logits: Option<Var>,
    /// Flow from frame `k` to `k + 1`, `2 x S x S`.
    pub flows: Vec<Var>,
    /// Landmarks of frames `1..t`.
    pub landmarks: Vec<Var>,
}

/// Shapes of every stage, computed from the configuration alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub backbone: Vec<[usize; 3]>,
    pub feature: [usize; 3],
    pub mer_input: [usize; 4],
    pub logits: usize,
    pub flows: Vec<[usize; 3]>,
    pub landmarks: Vec<usize>,
}

impl ModelConfig {
    pub fn mer_geometry(&self) -> Result<MerGeometry> {
        let [c, h, w] = self.feature_shape()?;
        let (channels, steps) = self.fusion.layout(c, self.t);
        Ok(MerGeometry {
            channels,
            steps,
            h,
            w,
            conv_channels: self.mer_channels,
            kernel: self.mer_kernel,
            pool: self.mer_pool,
            hidden: self.mer_hidden,
            classes: self.n_classes,
        })
    }

    pub fn infer_shapes(&self) -> Result<ShapeReport> {
        self.validate()?;
        let backbone = self.backbone_shapes()?;
        let feature = *backbone.last().expect("four layers");
        let g = self.mer_geometry()?;
        let s = self.frame_size;
        Ok(ShapeReport {
            backbone,
            feature,
            mer_input: [g.channels, g.steps, g.h, g.w],
            logits: if self.mer_head { self.n_classes } else { 0 },
            flows: if self.flow_head { vec![[2, s, s]; self.t - 1] } else { Vec::new() },
            landmarks: if self.landmark_head { vec![2 * self.m; self.t - 1] } else { Vec::new() },
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub weights: ModelWeights<ParamId>,
}

impl Model {
    /// Every head is created even when disabled, so checkpoints of ablation
    /// variants share one layout; FCC/CCC exist only when enabled.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let feature = cfg.feature_shape()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        let backbone = BackboneWeights::init(&mut init, cfg.in_channels, cfg.backbone_channels);
        let f5c = (0..cfg.f5c_blocks)
            .map(|i| F5cWeights::init(&mut init, &format!("f5c{i}"), feature, cfg.use_fcc, cfg.use_ccc))
            .collect();
        let mer = MerWeights::init(&mut init, &cfg.mer_geometry()?);
        let flow = FlowWeights::init(&mut init, cfg.in_channels, feature[0], cfg.flow_channels);
        let landmark = LandmarkWeights::init(&mut init, feature, cfg.landmark_channels, cfg.landmark_hidden, cfg.m);
        Ok(Self {
            cfg,
            store,
            weights: ModelWeights {
                backbone,
                f5c,
                mer,
                flow,
                landmark,
            },
        })
    }

    /// Parameter ids used only by heads the configuration disables.
    pub fn disabled_head_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        let mut push = |id| ids.push(id);
        if !self.cfg.mer_head {
            self.weights.mer.map(&mut push);
        }
        if !self.cfg.flow_head {
            self.weights.flow.map(&mut push);
        }
        if !self.cfg.landmark_head {
            self.weights.landmark.map(&mut push);
        }
        ids
    }

    /// Sets the landmark regressor's output bias.
    pub fn set_landmark_bias(&mut self, mean: &[f64]) -> Result<()> {
        let b = self.weights.landmark.fc2.b;
        let value = self.store.value_mut(b);
        if value.len() != mean.len() {
            return config_err(format!("{} landmark coordinates for a {}-wide bias", mean.len(), value.len()));
        }
        value.data_mut().copy_from_slice(mean);
        Ok(())
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.store)
    }

    pub fn forward(&self, g: &mut Graph, frames: &[Tensor]) -> Result<ClipOutput> {
        forward(&self.cfg, &self.weights, g, frames)
    }
}

pub fn forward(
    cfg: &ModelConfig,
    weights: &ModelWeights<ParamId>,
    g: &mut Graph,
    frames: &[Tensor],
) -> Result<ClipOutput> {
    let s = cfg.frame_size;
    if frames.len() != cfg.t {
        return config_err(format!("{} frames for t = {}", frames.len(), cfg.t));
    }
    if let Some(f) = frames.iter().find(|f| f.shape() != [cfg.in_channels, s, s]) {
        return config_err(format!(
            "frame shape {:?}, expected [{}, {s}, {s}]",
            f.shape(),
            cfg.in_channels
        ));
    }
    let inputs: Vec<Var> = frames.iter().map(|f| g.input(f.clone())).collect();
    forward_vars(cfg, weights, g, &inputs)
}

/// [`forward`] on frames already placed on the tape.
pub fn forward_vars(
    cfg: &ModelConfig,
    weights: &ModelWeights<ParamId>,
    g: &mut Graph,
    inputs: &[Var],
) -> Result<ClipOutput> {
    if inputs.len() != cfg.t {
        return config_err(format!("{} frames for t = {}", inputs.len(), cfg.t));
    }
    let backbone = weights.backbone.bind(g);
    let blocks: Vec<_> = weights.f5c.iter().map(|w| w.bind(g)).collect();
    let mut features = Vec::with_capacity(cfg.t);
    for &x in inputs {
        let mut y = rich_feature(g, x, &backbone)?;
        for b in &blocks {
            y = f5c_forward(g, y, b, cfg.k)?;
        }
        features.push(y);
    }

    let mut out = ClipOutput {
        features: features.clone(),
        mer_input: Vec::new(),
        logits: None,
        flows: Vec::new(),
        landmarks: Vec::new(),
    };
    if cfg.mer_head {
        let seq = fuse(g, &features, cfg.fusion)?;
        let w = weights.mer.bind(g);
        out.logits = Some(mer_head(g, &seq, &w, cfg.mer_kernel, cfg.mer_pool)?);
        out.mer_input = seq;
    }
    if cfg.flow_head {
        let w = weights.flow.bind(g);
        for k in 0..cfg.t - 1 {
            let f = flow_head(g, [inputs[k], inputs[k + 1]], [features[k], features[k + 1]], &w)?;
            out.flows.push(f);
        }
    }
    if cfg.landmark_head {
        let w = weights.landmark.bind(g);
        for &f in &features[1..] {
            out.landmarks.push(landmark_head(g, f, &w)?);
        }
    }
    Ok(out)
}

/// Arranges frame features into the MER input sequence.
pub fn fuse(tape: &mut Tape, features: &[Var], fusion: Fusion) -> Result<Vec<Var>> {
    let t = features.len();
    let pairs = (0..t.saturating_sub(1)).map(|k| (features[k], features[k + 1]));
    let seq = match fusion {
        Fusion::Concat => pairs.map(|(a, b)| tape.concat(&[a, b], 0)).collect::<std::result::Result<_, _>>()?,
        Fusion::Add => pairs.map(|(a, b)| tape.add(a, b)).collect::<std::result::Result<_, _>>()?,
        Fusion::Subtract => pairs.map(|(a, b)| tape.sub(b, a)).collect::<std::result::Result<_, _>>()?,
        Fusion::FirstFrames => features[..t - 1].to_vec(),
        Fusion::LastFrames => features[1..].to_vec(),
        Fusion::AllFrames => features.to_vec(),
    };
    Ok(seq)
}
