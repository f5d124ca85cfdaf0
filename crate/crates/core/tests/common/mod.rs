//! Loop and counting oracles shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use mxj_autodiff::{Tape, Tensor};
use mxj_core::ccc::{build_knn_graph, ccc_forward, edge_feature, CccWeights};
use mxj_core::fcc::{fcc_h, fcc_v, FccSlot};
use mxj_core::layers::Affine;
use mxj_core::metrics::ConfusionCounts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_TOL: f64 = 1e-12;
pub const INSTANCES: usize = 120;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6))
}

pub fn fcc_v_oracle(x: &Tensor, p: &Tensor, u: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for s in 0..h {
                    let r = (i + s) % h;
                    acc += u.at(&[ch, s]) * (x.at(&[ch, r, j]) + p.at(&[ch, r]));
                }
                y.set(&[ch, i, j], acc);
            }
        }
    }
    y
}

pub fn fcc_h_oracle(x: &Tensor, p: &Tensor, u: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for s in 0..w {
                    let q = (j + s) % w;
                    acc += u.at(&[ch, s]) * (x.at(&[ch, i, q]) + p.at(&[ch, q]));
                }
                y.set(&[ch, i, j], acc);
            }
        }
    }
    y
}

/// k-NN by scoring every candidate and picking the best remaining one k
/// times, lowest index on equal scores.
pub fn knn_oracle(x: &Tensor, k: usize) -> Vec<Vec<usize>> {
    let c = x.shape()[0];
    let hw = x.len() / c;
    let row = |i: usize| &x.data()[i * hw..(i + 1) * hw];
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    (0..c)
        .map(|i| {
            let mut taken = vec![false; c];
            taken[i] = true;
            let mut out = Vec::new();
            for _ in 0..k {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..c {
                    if taken[j] {
                        continue;
                    }
                    let sj = cos(row(i), row(j));
                    if best.map_or(true, |(_, sb)| sj > sb) {
                        best = Some((j, sj));
                    }
                }
                let (j, _) = best.unwrap();
                taken[j] = true;
                out.push(j);
            }
            out
        })
        .collect()
}

pub fn ccc_oracle(x: &Tensor, v1: &Tensor, v2: &Tensor, post_w: &Tensor, post_b: &Tensor, k: usize) -> Tensor {
    let c = x.shape()[0];
    let hw = x.len() / c;
    let nbrs = knn_oracle(x, k);
    let f = |i: usize| &x.data()[i * hw..(i + 1) * hw];
    let mut agg = vec![vec![f64::NEG_INFINITY; hw]; c];
    for i in 0..c {
        for &j in &nbrs[i] {
            for s in 0..hw {
                let mut z = 0.0;
                for r in 0..hw {
                    z += v1.at(&[s, r]) * f(i)[r] + v2.at(&[s, r]) * (f(j)[r] - f(i)[r]);
                }
                agg[i][s] = agg[i][s].max(z.max(0.0));
            }
        }
    }
    let mut y = Tensor::zeros(x.shape());
    for o in 0..c {
        for s in 0..hw {
            let mut acc = post_b.data()[o];
            for i in 0..c {
                acc += post_w.data()[o * c + i] * agg[i][s];
            }
            y.data_mut()[o * hw + s] = acc;
        }
    }
    y
}

/// Count-and-formula oracle over raw `(truth, prediction)` pairs.
pub fn metric_oracle(pairs: &[(usize, usize)], n: usize) -> [f64; 4] {
    let total = pairs.len() as f64;
    let count = |f: &dyn Fn(&(usize, usize)) -> bool| pairs.iter().filter(|p| f(p)).count() as f64;
    let (mut acc, mut wf1, mut uf1, mut uar) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..n {
        let tp = count(&|&(t, p)| t == j && p == j);
        let fp = count(&|&(t, p)| t != j && p == j);
        let fn_ = count(&|&(t, p)| t == j && p != j);
        let nj = count(&|&(t, _)| t == j);
        let f1 = if 2.0 * tp + fp + fn_ > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        acc += tp;
        wf1 += nj / total * f1;
        uf1 += f1 / n as f64;
        uar += if nj > 0.0 { tp / nj / n as f64 } else { 0.0 };
    }
    [100.0 * acc / total, 100.0 * wf1, 100.0 * uf1, 100.0 * uar]
}

pub fn counts(pairs: &[(usize, usize)], n: usize) -> ConfusionCounts {
    let mut c = ConfusionCounts::new(n);
    for &(t, p) in pairs {
        c.record(t, p);
    }
    c
}


/// Largest `|fcc_v - loops|` over `instances` random `C, H, W <= 6` cases.
pub fn fcc_v_max_diff(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (c, h, w) = dims(&mut rng);
        let (x, p, u) = (random(&mut rng, &[c, h, w]), random(&mut rng, &[c, h]), random(&mut rng, &[c, h]));
        let mut t = Tape::new();
        let (xv, pv, uv) = (t.constant(x.clone()), t.constant(p.clone()), t.constant(u.clone()));
        let y = fcc_v(&mut t, xv, FccSlot { p: pv, u: uv }).unwrap();
        worst = worst.max(t.value(y).max_abs_diff(&fcc_v_oracle(&x, &p, &u)));
    }
    worst
}

pub fn fcc_h_max_diff(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (c, h, w) = dims(&mut rng);
        let (x, p, u) = (random(&mut rng, &[c, h, w]), random(&mut rng, &[c, w]), random(&mut rng, &[c, w]));
        let mut t = Tape::new();
        let (xv, pv, uv) = (t.constant(x.clone()), t.constant(p.clone()), t.constant(u.clone()));
        let y = fcc_h(&mut t, xv, FccSlot { p: pv, u: uv }).unwrap();
        worst = worst.max(t.value(y).max_abs_diff(&fcc_h_oracle(&x, &p, &u)));
    }
    worst
}

/// Largest `|ccc_forward - brute force|`, and whether every kNN graph
/// matched the oracle's. Every tenth case duplicates a channel to hit the
/// tie rule.
pub fn ccc_max_diff(seed: u64, instances: usize) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut graphs_agree = true;
    for n in 0..instances {
        let (c, h, w) = dims(&mut rng);
        let c = c.max(2);
        let k = rng.gen_range(1..c);
        let hw = h * w;
        let mut x = random(&mut rng, &[c, h, w]);
        if n % 10 == 0 {
            let first: Vec<f64> = x.data()[..hw].to_vec();
            x.data_mut()[hw..2 * hw].copy_from_slice(&first);
        }
        let (v1, v2) = (random(&mut rng, &[hw, hw]), random(&mut rng, &[hw, hw]));
        let (pw, pb) = (random(&mut rng, &[c, c, 1, 1]), random(&mut rng, &[c]));
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let weights = CccWeights {
            v1: t.constant(v1.clone()),
            v2: t.constant(v2.clone()),
            post: Affine {
                w: t.constant(pw.clone()),
                b: t.constant(pb.clone()),
            },
        };
        let y = ccc_forward(&mut t, xv, &weights, k).unwrap();
        worst = worst.max(t.value(y).max_abs_diff(&ccc_oracle(&x, &v1, &v2, &pw, &pb, k)));
        graphs_agree &= build_knn_graph(&x, k).unwrap().neighbors == knn_oracle(&x, k);
    }
    (worst, graphs_agree)
}

pub fn edge_feature_max_diff(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=9);
        let fi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fj: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (v1, v2) = (random(&mut rng, &[n, n]), random(&mut rng, &[n, n]));
        let e = edge_feature(&fi, &fj, &v1, &v2);
        for s in 0..n {
            let a: f64 = (0..n).map(|r| v1.at(&[s, r]) * fi[r]).sum();
            let b: f64 = (0..n).map(|r| v2.at(&[s, r]) * (fj[r] - fi[r])).sum();
            worst = worst.max((e[s] - (a + b).max(0.0)).abs());
        }
    }
    worst
}

/// The 16-sample, 5-class confusion used by the metric checks.
pub const HAND_PAIRS: [(usize, usize); 16] = [
    (0, 0), (0, 0), (0, 1), (0, 2), (1, 1), (1, 1), (1, 1), (1, 0),
    (2, 2), (2, 0), (2, 1), (3, 3), (3, 3), (3, 2), (4, 0), (4, 4),
];
