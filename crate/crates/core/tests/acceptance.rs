//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Criteria 5 and 6 train real models and dominate the run time.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use mxj_autodiff::Tensor;
use mxj_core::checkpoint::{decode, encode, load_model, save_model};
use mxj_core::gradsuite::{run_suite, SUITE_TOL};
use mxj_core::loso::run_loso;
use mxj_core::metrics::{classification_metrics, epe};
use mxj_core::trainer::load_dataset;
use mxj_core::{evaluate, train, Control, Fusion, Model, ModelConfig, TrainConfig};
use mxj_data::{
    center_offset, crop, decode_flo, encode_flo, generate_synthetic, interior_mae, read_flo, read_landmarks,
    warp_back, write_flo, write_landmarks, ClipSample, DatasetManifest, GenConfig, GrayImage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The shared synthetic set: seed 7, 3 subjects x 4 clips, 3 classes,
/// written to disk and loaded back.
fn dataset(dir: &Path) -> Vec<ClipSample> {
    let gen = GenConfig {
        seed: 7,
        subjects: 3,
        clips_per_subject: 4,
        n_classes: 3,
        ..GenConfig::default()
    };
    let manifest = generate_synthetic(dir, &gen).unwrap();
    load_dataset(&manifest, dir).unwrap()
}

fn compact3() -> ModelConfig {
    ModelConfig {
        n_classes: 3,
        ..ModelConfig::compact()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let entries = run_suite(0).unwrap();
    let elapsed = start.elapsed();
    let worst = entries.iter().max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error)).unwrap();
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "gradient suite: {} stages, worst {} at {:.2e} (tol {SUITE_TOL:e}), failed {failed:?}, {:.1}s",
            entries.len(),
            worst.name,
            worst.report.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let n = INSTANCES;
    let v = fcc_v_max_diff(101, n);
    let h = fcc_h_max_diff(102, n);
    let (c, graphs) = ccc_max_diff(103, n);
    let e = edge_feature_max_diff(104, n);
    let worst = v.max(h).max(c).max(e);
    outcome(
        worst <= ORACLE_TOL && graphs && n >= 100,
        format!("oracles on {n} instances each: fcc_v {v:.1e}, fcc_h {h:.1e}, ccc {c:.1e}, edge {e:.1e}, kNN graphs agree {graphs}"),
    )
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Tensor> = (0..8).map(|_| Tensor::from_fn(&[1, 128, 128], |_| rng.gen())).collect();
    for n in [3, 5] {
        let cfg = ModelConfig {
            n_classes: n,
            ..ModelConfig::default()
        };
        let chain: Vec<usize> = cfg.backbone_shapes().unwrap()[1..].iter().map(|s| s[1]).collect();
        ok &= chain == [63, 31, 16, 16];
        let model = Model::new(cfg, 0).unwrap();
        let mut g = model.graph();
        let out = model.forward(&mut g, &frames).unwrap();
        let logits = out.logits.map(|l| g.value(l).shape().to_vec());
        let flows_ok = out.flows.len() == 7 && out.flows.iter().all(|&f| g.value(f).shape() == [2, 128, 128]);
        let lm_ok = out.landmarks.len() == 7 && out.landmarks.iter().all(|&l| g.value(l).shape() == [136]);
        let feat_ok = out.features.iter().all(|&f| g.value(f).shape() == [128, 16, 16]);
        ok &= logits == Some(vec![n]) && flows_ok && lm_ok && feat_ok;
        detail.push(format!(
            "n={n}: chain {chain:?}, logits {logits:?}, {} flows ok {flows_ok}, {} landmark rows ok {lm_ok}",
            out.flows.len(),
            out.landmarks.len()
        ));
    }
    outcome(ok, format!("shapes: {}", detail.join("; ")))
}

fn criterion_4() -> Outcome {
    let m = classification_metrics(&counts(&HAND_PAIRS, 5)).unwrap();
    let o = metric_oracle(&HAND_PAIRS, 5);
    let worst = [m.acc, m.wf1, m.uf1, m.uar].iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let perfect = classification_metrics(&counts(&[(0, 0), (1, 1), (2, 2), (2, 2), (4, 4), (3, 3)], 5)).unwrap();
    let perfect_ok = [perfect.acc, perfect.wf1, perfect.uf1, perfect.uar] == [100.0; 4];
    let gt = Tensor::from_fn(&[2, 4, 5], |i| (i as f64).sin());
    let mut pred = gt.clone();
    let hw = 20;
    for (i, v) in pred.data_mut().iter_mut().enumerate() {
        *v += if i < hw { 3.0 } else { 4.0 };
    }
    let e = epe(&pred, &gt);
    outcome(
        worst <= 1e-10 && perfect_ok && e == 5.0,
        format!(
            "metrics: oracle diff {worst:.1e}, perfect predictions give {:?}, EPE of (3,4) field {e}",
            [perfect.acc, perfect.wf1, perfect.uf1, perfect.uar]
        ),
    )
}

fn center(clips: &[ClipSample], size: usize) -> Vec<ClipSample> {
    clips
        .iter()
        .map(|c| {
            let (h, w) = c.size();
            crop(c, [center_offset(w, size), center_offset(h, size)], size).unwrap()
        })
        .collect()
}

fn criterion_5(clips: &[ClipSample]) -> Outcome {
    let zero_epe = {
        let cropped = center(clips, 128);
        let all: Vec<f64> = cropped.iter().flat_map(|c| c.flows.iter().map(|f| epe(&Tensor::zeros(f.shape()), f))).collect();
        all.iter().sum::<f64>() / all.len() as f64
    };
    let cfg = TrainConfig {
        epochs: 300,
        lr: 1e-3,
        batch_size: 4,
        augment: false,
        ..TrainConfig::default()
    };
    let mut model = Model::new(compact3(), 0).unwrap();
    let start = Instant::now();
    let mut reached = None;
    let mut last = None;
    train(&mut model, clips, &cfg, |st, m| {
        let r = evaluate(m, clips, 128, 1).unwrap().report();
        let done = r.acc == Some(100.0) && r.epe.unwrap() < 0.5 && r.nme.unwrap() < 3.0;
        last = Some((st.epoch, r));
        if done {
            reached = Some(st.epoch + 1);
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .unwrap();
    let elapsed = start.elapsed();
    let (epoch, r) = last.unwrap();
    outcome(
        reached.is_some() && elapsed < Duration::from_secs(900),
        format!(
            "overfit: after {} epochs Acc {:.2}, EPE {:.3} px (zero-flow {zero_epe:.3}), NME {:.3}, {:.0}s",
            epoch + 1,
            r.acc.unwrap(),
            r.epe.unwrap(),
            r.nme.unwrap(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(clips: &[ClipSample]) -> Outcome {
    let model = ModelConfig {
        fusion: Fusion::Subtract,
        ..compact3()
    };
    let cfg = TrainConfig {
        epochs: 60,
        lr: 1e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_loso(&model, &cfg, clips).unwrap();
    let folds: Vec<String> =
        report.folds.iter().map(|f| format!("{} {:.2}", f.test_subject, f.report.acc.unwrap())).collect();
    let acc = report.pooled.acc.unwrap();
    outcome(
        report.folds.len() == 3 && report.pooled.samples == clips.len() as u64 && acc > 100.0 / 3.0,
        format!(
            "LOSO: pooled Acc {acc:.2} over {} clips (folds {}), UF1 {:.2}, UAR {:.2}, {:.0}s",
            report.pooled.samples,
            folds.join(", "),
            report.pooled.uf1.unwrap(),
            report.pooled.uar.unwrap(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7(clips: &[ClipSample]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for c in clips {
        for k in 0..c.t() - 1 {
            let warped = warp_back(&c.frames[k + 1], &c.flows[k]).unwrap();
            worst = worst.max(interior_mae(&warped, &c.frames[k], 2));
            pairs += 1;
        }
    }
    outcome(
        worst < 2.0 / 255.0,
        format!("warp identity: worst interior MAE {:.3}/255 over {pairs} pairs", worst * 255.0),
    )
}

fn criterion_8(clips: &[ClipSample]) -> Outcome {
    let base = compact3();
    let variants: Vec<(&str, ModelConfig)> = vec![
        ("w/o OFE", ModelConfig { flow_head: false, ..base.clone() }),
        ("w/o FLD", ModelConfig { landmark_head: false, ..base.clone() }),
        ("w/o OFE&FLD", ModelConfig { flow_head: false, landmark_head: false, ..base.clone() }),
        ("w/o FCC", ModelConfig { use_fcc: false, ..base.clone() }),
        ("w/o CCC", ModelConfig { use_ccc: false, ..base.clone() }),
        ("w/o F5C", ModelConfig { f5c_blocks: 0, ..base.clone() }),
        ("concat", ModelConfig { fusion: Fusion::Concat, ..base.clone() }),
        ("add", ModelConfig { fusion: Fusion::Add, ..base.clone() }),
        ("subtract", ModelConfig { fusion: Fusion::Subtract, ..base.clone() }),
        ("first frames", ModelConfig { fusion: Fusion::FirstFrames, ..base.clone() }),
        ("last frames", ModelConfig { fusion: Fusion::LastFrames, ..base.clone() }),
        ("all frames", ModelConfig { fusion: Fusion::AllFrames, ..base.clone() }),
    ];
    let cfg = TrainConfig {
        epochs: 1,
        lr: 1e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut failures = Vec::new();
    let mut frozen_total = 0;
    for (name, mc) in variants {
        let steps = mc.infer_shapes().unwrap().mer_input[1];
        let want_steps = if mc.fusion == Fusion::AllFrames { mc.t } else { mc.t - 1 };
        let mut model = Model::new(mc, 0).unwrap();
        let before = model.store.clone();
        let frozen = model.disabled_head_params();
        match train(&mut model, clips, &cfg, |_, _| Control::Continue) {
            Err(e) => failures.push(format!("{name}: {e}")),
            Ok(_) => {
                let moved = frozen.iter().filter(|&&id| {
                    let (a, b) = (model.store.value(id).data(), before.value(id).data());
                    a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits())
                });
                if moved.count() > 0 {
                    failures.push(format!("{name}: disabled head changed"));
                }
                if steps != want_steps {
                    failures.push(format!("{name}: {steps} MER steps"));
                }
            }
        }
        frozen_total += frozen.len();
    }
    outcome(
        failures.is_empty(),
        format!("ablations: 12 variants trained 1 epoch, {frozen_total} disabled-head tensors bit-identical, failures {failures:?}"),
    )
}

fn criterion_9(dir: &Path, clips: &[ClipSample]) -> Outcome {
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    #[rustfmt::skip]
    let golden: [u8; 28] = [
        0x50, 0x49, 0x45, 0x48, 2, 0, 0, 0, 1, 0, 0, 0,
        0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0,
        0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x00,
    ];
    let small = Tensor::new(&[2, 1, 2], vec![1.0, 0.5, -2.0, 0.0]).unwrap();
    if encode_flo(&small).unwrap() != golden || decode_flo(&golden).unwrap() != small {
        bad.push("flo golden bytes");
    }
    let flow = &clips[0].flows[2];
    let path = dir.join("f.flo");
    write_flo(&path, flow).unwrap();
    let back = read_flo(&path).unwrap();
    // generated flows are f32-representable, so the trip is exact
    if &back != flow {
        bad.push("flo");
    }

    let img = GrayImage::new(37, 23, (0..37 * 23).map(|_| rng.gen()).collect());
    let path = dir.join("i.pgm");
    img.write(&path).unwrap();
    if GrayImage::read(&path).unwrap() != img {
        bad.push("pgm");
    }

    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..136).map(|_| rng.gen_range(-500.0..500.0)).collect()).collect();
    let path = dir.join("l.csv");
    write_landmarks(&path, &rows).unwrap();
    if read_landmarks(&path).unwrap() != rows {
        bad.push("landmarks csv");
    }

    let (manifest, _) = DatasetManifest::load(&dir.join("data")).unwrap();
    let mdir = dir.join("m");
    std::fs::create_dir_all(&mdir).unwrap();
    manifest.save(&mdir).unwrap();
    if DatasetManifest::load(&mdir).unwrap().0 != manifest {
        bad.push("manifest");
    }

    let mut model = Model::new(ModelConfig { fusion: Fusion::Add, ..ModelConfig::reduced() }, 4).unwrap();
    for p in model.store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
    }
    let cdir = dir.join("ckpt");
    std::fs::create_dir_all(&cdir).unwrap();
    save_model(&model, &cdir).unwrap();
    let loaded = load_model(&cdir).unwrap();
    if loaded.cfg != model.cfg || loaded.store != model.store || decode(&encode(&model.store)).unwrap().len() != model.store.len() {
        bad.push("checkpoint");
    }
    outcome(bad.is_empty(), format!("formats: flo (golden + file), pgm, landmark csv, manifest, checkpoint; failed {bad:?}"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    let clips = dataset(&data_dir);
    let total = Instant::now();

    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5(&clips));
    report(6, criterion_6(&clips));
    report(7, criterion_7(&clips));
    report(8, criterion_8(&clips));
    report(9, criterion_9(tmp.path(), &clips));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
