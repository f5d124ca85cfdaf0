//! Finite-difference checks of every differentiable stage, including the
//! full model on reduced geometry.

use std::time::{Duration, Instant};

use mxj_autodiff::{
    grad_check, grad_check_op, GradCheckConfig, GradCheckReport, Graph, ParamStore, Tensor,
    TensorError, Var,
};
use mxj_data::ClipSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{rich_feature, BackboneWeights};
use crate::ccc::{build_knn_graph, ccc_aggregate, ccc_forward, CccWeights};
use crate::config::{LossWeights, ModelConfig};
use crate::error::{CoreError, Result};
use crate::f5c::{f5c_forward, F5cWeights};
use crate::fcc::{fcc_block, fcc_h, fcc_v, FccSlot, FccWeights};
use crate::layers::Init;
use crate::losses::{clip_loss, flow_loss, landmark_loss};
use crate::model::Model;

/// Relative error every entry must stay under.
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed(SUITE_TOL)
    }
}

fn to_tensor_err(e: CoreError) -> TensorError {
    match e {
        CoreError::Tensor(t) => t,
        other => TensorError::Config {
            op: "gradsuite",
            detail: other.to_string(),
        },
    }
}

/// Checks `f` with respect to `inputs` and every parameter of `store`.
/// `f` sees a graph whose parameters are the perturbed values.
pub fn check_with_params<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let n = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(store.iter().map(|(_, p)| p.value.clone()));
    let report = grad_check(
        |tape, vars| {
            let mut g = Graph::with_bindings(std::mem::take(tape), store, &vars[n..]);
            let out = f(&mut g, &vars[..n]);
            *tape = g.into_tape();
            out.map_err(to_tensor_err)
        },
        &all,
        cfg,
    )?;
    Ok(report)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// A clip of random frames, flows and landmarks sized for `cfg`.
pub fn random_clip(cfg: &ModelConfig, seed: u64) -> ClipSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.frame_size;
    ClipSample {
        clip_id: "grad".into(),
        subject_id: "grad".into(),
        label: 1 % cfg.n_classes,
        frames: (0..cfg.t)
            .map(|_| Tensor::from_fn(&[cfg.in_channels, s, s], |_| rng.gen_range(0.0..1.0)))
            .collect(),
        flows: (0..cfg.t - 1).map(|_| random(&mut rng, &[2, s, s])).collect(),
        landmarks: (0..cfg.t)
            .map(|_| (0..2 * cfg.m).map(|_| rng.gen_range(0.0..s as f64)).collect())
            .collect(),
    }
}

struct Suite {
    cfg: GradCheckConfig,
    rng: ChaCha8Rng,
    entries: Vec<SuiteEntry>,
}

impl Suite {
    fn run(&mut self, name: &str, check: impl FnOnce(&GradCheckConfig) -> Result<GradCheckReport>) -> Result<()> {
        let start = Instant::now();
        let report = check(&self.cfg)?;
        self.entries.push(SuiteEntry {
            name: name.to_string(),
            report,
            elapsed: start.elapsed(),
        });
        Ok(())
    }

    fn random(&mut self, shape: &[usize]) -> Tensor {
        random(&mut self.rng, shape)
    }
}

fn op(
    f: impl Fn(&mut mxj_autodiff::Tape, &[Var]) -> mxj_autodiff::Result<Var>,
    inputs: Vec<Tensor>,
) -> impl FnOnce(&GradCheckConfig) -> Result<GradCheckReport> {
    move |cfg| Ok(grad_check_op(f, &inputs, cfg)?)
}

/// Runs every check. Fails only on evaluation errors; tolerance is judged
/// per entry by [`SuiteEntry::passed`].
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        cfg: GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        },
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: Vec::new(),
    };

    let (x, w, b) = (s.random(&[2, 9, 8]), s.random(&[3, 2, 4, 3]), s.random(&[3]));
    s.run("conv2d", op(|t, v| t.conv2d(v[0], v[1], Some(v[2]), (2, 2), (1, 0)), vec![x, w, b]))?;
    let (x, w, b) = (s.random(&[2, 4, 5, 5]), s.random(&[3, 2, 3, 3, 3]), s.random(&[3]));
    s.run("conv3d", op(|t, v| t.conv3d(v[0], v[1], Some(v[2]), [1, 1, 1], [1, 1, 1]), vec![x, w, b]))?;
    let (x, w, b) = (s.random(&[3, 3, 3]), s.random(&[3, 2, 4, 4]), s.random(&[2]));
    s.run("conv_transpose2d", op(|t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1), vec![x, w, b]))?;
    let x = s.random(&[2, 3, 4, 5]);
    s.run("maxpool3d", op(|t, v| t.maxpool3d(v[0], [2, 2, 2], [2, 2, 2]), vec![x]))?;

    let (c, h, w) = (3, 4, 5);
    let (x, p, u) = (s.random(&[c, h, w]), s.random(&[c, h]), s.random(&[c, h]));
    s.run("fcc_v", op(|t, v| Ok(fcc_v(t, v[0], FccSlot { p: v[1], u: v[2] }).map_err(to_tensor_err)?), vec![x, p, u]))?;
    let (x, p, u) = (s.random(&[c, h, w]), s.random(&[c, w]), s.random(&[c, w]));
    s.run("fcc_h", op(|t, v| Ok(fcc_h(t, v[0], FccSlot { p: v[1], u: v[2] }).map_err(to_tensor_err)?), vec![x, p, u]))?;

    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    let fcc = FccWeights::init(&mut init, "fcc", c, h, w);
    randomize(&mut store, &mut s.rng);
    let x = s.random(&[c, h, w]);
    s.run("fcc_block", |cfg| {
        check_with_params(&store, &[x], |g, v| {
            let wv = fcc.bind(g);
            let y = fcc_block(g, v[0], &wv)?;
            contract(g, y)
        }, cfg)
    })?;

    let (c, h, w) = (5, 2, 3);
    let x = s.random(&[c, h, w]);
    let (v1, v2) = (s.random(&[h * w, h * w]), s.random(&[h * w, h * w]));
    let graph = build_knn_graph(&x, 2)?;
    s.run("edge_feature", op(move |t, v| Ok(ccc_aggregate(t, v[0], v[1], v[2], &graph).map_err(to_tensor_err)?), vec![x, v1, v2]))?;

    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    let ccc = CccWeights::init(&mut init, "ccc", c, h, w);
    randomize(&mut store, &mut s.rng);
    let x = s.random(&[c, h, w]);
    s.run("ccc_forward", |cfg| {
        check_with_params(&store, &[x], |g, v| {
            let wv = ccc.bind(g);
            let y = ccc_forward(g, v[0], &wv, 2)?;
            contract(g, y)
        }, cfg)
    })?;

    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    let f5c = F5cWeights::init(&mut init, "f5c", [c, h, w], true, true);
    randomize(&mut store, &mut s.rng);
    let x = s.random(&[c, h, w]);
    s.run("f5c_forward", |cfg| {
        check_with_params(&store, &[x], |g, v| {
            let wv = f5c.bind(g);
            let y = f5c_forward(g, v[0], &wv, 2)?;
            contract(g, y)
        }, cfg)
    })?;

    let mcfg = ModelConfig::reduced();
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    let backbone = BackboneWeights::init(&mut init, mcfg.in_channels, mcfg.backbone_channels);
    let frame = s.random(&[mcfg.in_channels, mcfg.frame_size, mcfg.frame_size]);
    s.run("backbone", |cfg| {
        check_with_params(&store, &[frame], |g, v| {
            let wv = backbone.bind(g);
            let y = rich_feature(g, v[0], &wv)?;
            contract(g, y)
        }, cfg)
    })?;

    let clip = random_clip(&mcfg, seed);
    let pred = s.random(&[2, 5, 5]);
    let gt = s.random(&[2, 5, 5]);
    let logits = s.random(&[5]);
    s.run("cross_entropy", op(|t, v| t.cross_entropy(v[0], 2), vec![logits]))?;
    s.run("flow_loss", |cfg| {
        Ok(grad_check(|t, v| flow_loss(t, &[v[0]], &[gt.clone()]).map_err(to_tensor_err), &[pred], cfg)?)
    })?;
    let lm_pred = Tensor::from_vec(clip.landmarks[0].iter().map(|v| v + 0.7).collect());
    let lm_gt = clip.landmarks[1].clone();
    s.run("landmark_loss", |cfg| {
        Ok(grad_check(
            |t, v| landmark_loss(t, &[v[0]], &[lm_gt.clone()], &[3.5]).map_err(to_tensor_err),
            &[lm_pred],
            cfg,
        )?)
    })?;

    let mut model = Model::new(mcfg.clone(), seed)?;
    jitter(&mut model.store, &mut s.rng, 0.1);
    let heads: [(&str, fn(&crate::losses::ClipLoss) -> Option<Var>); 4] = [
        ("mer_head", |l| l.l_e),
        ("flow_head", |l| l.l_f),
        ("landmark_head", |l| l.l_m),
        ("joint_loss", |l| Some(l.total)),
    ];
    for (name, pick) in heads {
        let clip = &clip;
        let model = &model;
        s.run(name, |cfg| {
            check_with_params(&model.store, &clip.frames, |g, v| {
                let out = crate::model::forward_vars(&model.cfg, &model.weights, g, v)?;
                let loss = clip_loss(g, &out, clip, LossWeights::default())?;
                Ok(pick(&loss).expect("head enabled"))
            }, cfg)
        })?;
    }
    Ok(s.entries)
}

/// Replaces every parameter with uniform noise so that zero-initialised
/// embeddings are exercised away from zero.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
}

/// Adds uniform noise in `[-scale, scale)`. Zero biases over a dead ReLU
/// layer put the next pre-activation exactly on the hinge, where a central
/// difference cannot see the kink.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

/// Fixed pseudo-random weighting of every output element.
fn contract(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let weights = Tensor::from_fn(&shape, |_| {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    });
    let wv = g.input(weights);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p)?)
}
