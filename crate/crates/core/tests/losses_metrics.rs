mod common;

use common::{counts, metric_oracle, HAND_PAIRS};
use mxj_autodiff::{Tape, Tensor};
use mxj_core::config::{LossWeights, ModelConfig};
use mxj_core::gradsuite::random_clip;
use mxj_core::losses::{clip_loss, flow_loss, full_loss, landmark_loss};
use mxj_core::metrics::{classification_metrics, epe, nme, nme_with, ConfusionCounts, EvalTotals};
use mxj_core::model::Model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ce(logits: Vec<f64>, label: usize) -> f64 {
    let mut t = Tape::new();
    let l = t.constant(Tensor::from_vec(logits));
    let v = t.cross_entropy(l, label).unwrap();
    t.value(v).item()
}

#[test]
fn cross_entropy_examples() {
    assert!((ce(vec![0.3; 5], 2) - 5f64.ln()).abs() < 1e-12);
    let logits = vec![7f64.ln(), 0.0, 0.0, 0.5f64.ln(), 0.5f64.ln()];
    assert!((ce(logits, 0) + 0.7f64.ln()).abs() < 1e-12);
    assert!(ce(vec![60.0, 0.0, 0.0], 0) < 1e-20);
    let mut t = Tape::new();
    let l = t.constant(Tensor::from_vec(vec![0.0, 1.0]));
    assert!(t.cross_entropy(l, 2).is_err());
}

proptest! {
    #[test]
    fn cross_entropy_ignores_logit_shifts(seed in 0u64..1000, shift in -50.0f64..50.0, label in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        prop_assert!((ce(logits, label) - ce(shifted, label)).abs() < 1e-12);
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
}

#[test]
fn flow_loss_examples_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gts: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[2, 4, 5])).collect();
    let eval = |preds: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<_> = preds.iter().map(|p| t.constant(p.clone())).collect();
        let l = flow_loss(&mut t, &vs, &gts).unwrap();
        t.value(l).item()
    };
    assert_eq!(eval(&gts), 0.0);
    let plus: Vec<Tensor> = gts.iter().map(|g| Tensor::from_fn(g.shape(), |i| g.data()[i] + 1.0)).collect();
    assert!((eval(&plus) - 1.0).abs() < 1e-12);
    let preds: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[2, 4, 5])).collect();
    let mut oracle = 0.0;
    for (p, g) in preds.iter().zip(&gts) {
        let se: f64 = p.data().iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        oracle += se / 40.0;
    }
    oracle /= 3.0;
    assert!((eval(&preds) - oracle).abs() < 1e-12);
}

#[test]
fn landmark_loss_examples_and_oracle() {
    let eval = |preds: &[Vec<f64>], gts: &[Vec<f64>], d: &[f64]| {
        let mut t = Tape::new();
        let vs: Vec<_> = preds.iter().map(|p| t.constant(Tensor::from_vec(p.clone()))).collect();
        let l = landmark_loss(&mut t, &vs, gts, d).unwrap();
        t.value(l).item()
    };
    assert!((eval(&[vec![3.0, 4.0]], &[vec![0.0, 0.0]], &[5.0]) - 1.4).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, pairs) = (5, 3);
    let gts: Vec<Vec<f64>> = (0..pairs).map(|_| (0..2 * m).map(|_| rng.gen_range(0.0..50.0)).collect()).collect();
    let preds: Vec<Vec<f64>> = (0..pairs).map(|_| (0..2 * m).map(|_| rng.gen_range(0.0..50.0)).collect()).collect();
    let d: Vec<f64> = (0..pairs).map(|_| rng.gen_range(5.0..20.0)).collect();
    assert_eq!(eval(&gts, &gts, &d), 0.0);
    let mut oracle = 0.0;
    for k in 0..pairs {
        for s in 0..m {
            let dx = (preds[k][2 * s] - gts[k][2 * s]).abs();
            let dy = (preds[k][2 * s + 1] - gts[k][2 * s + 1]).abs();
            oracle += (dx + dy) / d[k];
        }
    }
    oracle /= (m * pairs) as f64;
    assert!((eval(&preds, &gts, &d) - oracle).abs() < 1e-12);

    let mut t = Tape::new();
    let v = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
    assert!(landmark_loss(&mut t, &[v], &[vec![0.0, 0.0]], &[0.0]).is_err());
}

#[test]
fn full_loss_weights() {
    let mut t = Tape::new();
    let one = || Tensor::scalar(1.0);
    let (a, b, c) = (t.constant(one()), t.constant(one()), t.constant(one()));
    let l = full_loss(&mut t, Some(a), Some(b), Some(c), LossWeights::default()).unwrap();
    assert!((t.value(l).item() - 69.1).abs() < 1e-12);
    let w = LossWeights {
        lambda_f: 0.0,
        lambda_m: 0.0,
    };
    let l = full_loss(&mut t, Some(a), Some(b), Some(c), w).unwrap();
    assert_eq!(t.value(l).item(), 1.0);
}

#[test]
fn joint_gradient_is_the_weighted_sum_of_task_gradients() {
    let cfg = ModelConfig::reduced();
    let model = Model::new(cfg.clone(), 1).unwrap();
    let clip = random_clip(&cfg, 1);
    let w = LossWeights::default();
    let grads = |pick: &dyn Fn(&mxj_core::losses::ClipLoss) -> mxj_autodiff::Var| {
        let mut g = model.graph();
        let out = model.forward(&mut g, &clip.frames).unwrap();
        let l = clip_loss(&mut g, &out, &clip, w).unwrap();
        g.param_grads(pick(&l)).unwrap()
    };
    let total = grads(&|l| l.total);
    let parts = [
        (grads(&|l| l.l_e.unwrap()), 1.0),
        (grads(&|l| l.l_f.unwrap()), w.lambda_f),
        (grads(&|l| l.l_m.unwrap()), w.lambda_m),
    ];
    let shared = model.weights.backbone.layers[0].w;
    let mut expect = vec![0.0; model.store.value(shared).len()];
    for (g, s) in &parts {
        for (e, v) in expect.iter_mut().zip(g.get(shared).unwrap().data()) {
            *e += s * v;
        }
    }
    for (a, b) in total.get(shared).unwrap().data().iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
    }
    // zero flow weight: no gradient reaches flow-only parameters
    let mut g = model.graph();
    let out = model.forward(&mut g, &clip.frames).unwrap();
    let nw = LossWeights { lambda_f: 0.0, ..w };
    let l = clip_loss(&mut g, &out, &clip, nw).unwrap();
    let buf = g.param_grads(l.total).unwrap();
    let flow_only = model.weights.flow.out.w;
    assert!(buf.get(flow_only).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn classification_metrics_match_oracle() {
    let m = classification_metrics(&counts(&HAND_PAIRS, 5)).unwrap();
    let o = metric_oracle(&HAND_PAIRS, 5);
    for (a, b) in [m.acc, m.wf1, m.uf1, m.uar].iter().zip(o) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn metric_examples() {
    let perfect = [(0, 0), (1, 1), (2, 2), (1, 1)];
    let m = classification_metrics(&counts(&perfect, 3)).unwrap();
    assert_eq!([m.acc, m.wf1, m.uf1, m.uar], [100.0; 4]);

    let all_zero = [(0, 0), (0, 0), (1, 0), (1, 0)];
    let m = classification_metrics(&counts(&all_zero, 2)).unwrap();
    assert_eq!(m.acc, 50.0);
    assert_eq!(m.uar, 50.0);
    assert!((m.uf1 - 100.0 / 3.0).abs() < 1e-10);

    let single = classification_metrics(&counts(&[(1, 1)], 3)).unwrap();
    assert_eq!(single.acc, 100.0);
    assert_eq!(single.empty_classes, vec![0, 2]);

    assert!(classification_metrics(&ConfusionCounts::new(3)).is_none());
}

proptest! {
    #[test]
    fn balanced_classes_make_wf1_equal_uf1(preds in proptest::collection::vec(0usize..3, 9)) {
        let pairs: Vec<(usize, usize)> = preds.iter().enumerate().map(|(i, &p)| (i % 3, p)).collect();
        let m = classification_metrics(&counts(&pairs, 3)).unwrap();
        prop_assert!((m.wf1 - m.uf1).abs() < 1e-10);
        let o = metric_oracle(&pairs, 3);
        prop_assert!((m.acc - o[0]).abs() < 1e-10 && (m.uar - o[3]).abs() < 1e-10);
    }

    #[test]
    fn perfect_predictions_score_exactly_100(labels in proptest::collection::vec(0usize..5, 1..40)) {
        let pairs: Vec<(usize, usize)> = (0..5).chain(labels).map(|l| (l, l)).collect();
        let m = classification_metrics(&counts(&pairs, 5)).unwrap();
        prop_assert_eq!([m.acc, m.wf1, m.uf1, m.uar], [100.0; 4]);
    }

    #[test]
    fn merging_counts_is_order_free(a in proptest::collection::vec((0usize..3, 0usize..3), 0..20),
                                    b in proptest::collection::vec((0usize..3, 0usize..3), 0..20)) {
        let mut x = counts(&a, 3);
        x.merge(&counts(&b, 3));
        let mut y = counts(&b, 3);
        y.merge(&counts(&a, 3));
        prop_assert_eq!(&x, &y);
        let all: Vec<_> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(x, counts(&all, 3));
    }
}

#[test]
fn flow_and_landmark_metrics() {
    let gt = Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1);
    assert_eq!(epe(&gt, &gt), 0.0);
    let off = Tensor::from_fn(&[2, 3, 4], |i| gt.data()[i] + if i < 12 { 3.0 } else { 4.0 });
    assert!((epe(&off, &gt) - 5.0).abs() < 1e-12);

    let gt = [0.0, 0.0, 10.0, 0.0];
    let pred = [3.0, 4.0, 10.0, 1.0];
    // errors 5 and 1 over two points, normalised by 10
    assert!((nme_with(&pred, &gt, 10.0) - 30.0).abs() < 1e-12);

    let face: Vec<f64> = (0..136).map(|i| (i * 7 % 31) as f64).collect();
    assert_eq!(nme(&face, &face), 0.0);
    let mut totals = EvalTotals::new(3);
    totals.nme.extend([0.0, 12.0, 9.0, 10.5]);
    let r = totals.report();
    assert_eq!(r.failure_rate, Some(50.0));
    assert!(r.acc.is_none());
}

#[test]
fn report_formats() {
    let mut totals = EvalTotals::new(2);
    totals.counts.record(0, 0);
    totals.counts.record(1, 0);
    totals.counts.record(1, 1);
    totals.epe.push(1.23456);
    let r = totals.report();
    let text = r.to_text();
    assert!(text.contains("Acc 66.67\n"));
    assert!(text.contains("EPE 1.23\n"));
    assert!(text.contains("NME n/a\n"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["Acc"], 66.67);
    assert_eq!(json["EPE"], 1.23);
    assert!(json["NME"].is_null());
    assert_eq!(json["samples"], 3);
}
