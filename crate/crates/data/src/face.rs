//! A schematic 68-point face drawn as smooth strokes through its landmarks,
//! and the smooth displacement fields that animate it.
//!
//! Frame `k` shows `T(phi_k(p))` where `T` is the face template and
//! `phi_k(p) = p - a_k D(p) - s_k`, with `D` a sum of Gaussian bumps and
//! `s_k` a rigid drift. Every quantity below is in pixel units of the
//! uncropped frame.

use rand::Rng;

pub const N_LANDMARKS: usize = 68;

/// Left/right correspondence of the 68-point layout under a horizontal flip.
#[rustfmt::skip]
pub const MIRROR: [usize; N_LANDMARKS] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0,
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,
    27, 28, 29, 30,
    35, 34, 33, 32, 31,
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40,
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55,
    64, 63, 62, 61, 60, 67, 66, 65,
];

const LEFT_EYE: std::ops::Range<usize> = 36..42;
const RIGHT_EYE: std::ops::Range<usize> = 42..48;

/// (first, last, closed) landmark runs joined into strokes.
const STROKES: [(usize, usize, bool); 9] = [
    (0, 16, false),
    (17, 21, false),
    (22, 26, false),
    (27, 30, false),
    (31, 35, false),
    (36, 41, true),
    (42, 47, true),
    (48, 59, true),
    (60, 67, true),
];

const STROKE_SIGMA: f64 = 1.4;
const STROKE_DARKNESS: f64 = 0.45;
const PUPIL_DARKNESS: f64 = 0.35;

/// Distance between the left and right eye centroids of a flat
/// `x0, y0, x1, y1, ...` landmark vector.
pub fn inter_ocular(lm: &[f64]) -> f64 {
    assert_eq!(lm.len(), 2 * N_LANDMARKS, "expected {N_LANDMARKS} landmarks");
    let centroid = |r: std::ops::Range<usize>| {
        let n = r.len() as f64;
        let (sx, sy) = r.fold((0.0, 0.0), |(sx, sy), i| (sx + lm[2 * i], sy + lm[2 * i + 1]));
        (sx / n, sy / n)
    };
    let (l, r) = (centroid(LEFT_EYE), centroid(RIGHT_EYE));
    ((l.0 - r.0).powi(2) + (l.1 - r.1).powi(2)).sqrt()
}

/// Landmarks in face units: origin at the face center, x right, y down,
/// face half-width 1.
fn layout() -> Vec<[f64; 2]> {
    let mut p = Vec::with_capacity(N_LANDMARKS);
    for i in 0..17 {
        let a = std::f64::consts::PI * i as f64 / 16.0;
        p.push([-0.92 * a.cos(), -0.05 + 0.95 * a.sin()]);
    }
    for x0 in [-0.75, 0.18] {
        for j in 0..5 {
            let arch = 0.08 * (std::f64::consts::PI * j as f64 / 4.0).sin();
            p.push([x0 + j as f64 * 0.57 / 4.0, -0.45 - arch]);
        }
    }
    for j in 0..4 {
        p.push([0.0, -0.3 + j as f64 * 0.14]);
    }
    for (x, y) in [(-0.18, 0.17), (-0.09, 0.2), (0.0, 0.22), (0.09, 0.2), (0.18, 0.17)] {
        p.push([x, y]);
    }
    let (w, h, cy) = (0.15, 0.06, -0.25);
    for cx in [-0.42, 0.42] {
        // corner, two upper lid points, corner, two lower lid points
        for (dx, dy) in [(-w, 0.0), (-w / 3.0, -h), (w / 3.0, -h), (w, 0.0), (w / 3.0, h), (-w / 3.0, h)] {
            p.push([cx + dx, cy + dy]);
        }
    }
    for (x, y) in [
        (-0.3, 0.5), (-0.2, 0.44), (-0.08, 0.41), (0.0, 0.43), (0.08, 0.41), (0.2, 0.44),
        (0.3, 0.5), (0.2, 0.57), (0.08, 0.6), (0.0, 0.61), (-0.08, 0.6), (-0.2, 0.57),
        (-0.24, 0.5), (-0.08, 0.47), (0.0, 0.475), (0.08, 0.47), (0.24, 0.5), (0.08, 0.53),
        (0.0, 0.535), (-0.08, 0.53),
    ] {
        p.push([x, y]);
    }
    debug_assert_eq!(p.len(), N_LANDMARKS);
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

/// Per-subject placement and look.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub center: [f64; 2],
    /// Face half-width in pixels.
    pub radius: f64,
    pub skin: f64,
    pub background: f64,
    texture: Vec<Wave>,
}

impl Appearance {
    pub fn sample(rng: &mut impl Rng, size: usize) -> Self {
        let unit = size as f64 / 144.0;
        let center = [
            size as f64 / 2.0 + rng.gen_range(-4.0..4.0) * unit,
            size as f64 * 0.52 + rng.gen_range(-4.0..4.0) * unit,
        ];
        let texture = (0..4)
            .map(|_| {
                let wavelength = rng.gen_range(8.0..24.0) * unit;
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: rng.gen_range(0.015..0.035),
                }
            })
            .collect();
        Self {
            center,
            radius: 0.3 * size as f64 * rng.gen_range(0.92..1.08),
            skin: rng.gen_range(0.62..0.78),
            background: rng.gen_range(0.15..0.3),
            texture,
        }
    }

    /// A centered face without texture.
    pub fn plain(size: usize) -> Self {
        Self {
            center: [size as f64 / 2.0, size as f64 * 0.52],
            radius: 0.3 * size as f64,
            skin: 0.7,
            background: 0.2,
            texture: Vec::new(),
        }
    }
}

/// The face template `T` for one subject.
#[derive(Debug, Clone)]
pub struct Face {
    pub appearance: Appearance,
    landmarks: Vec<[f64; 2]>,
    strokes: Vec<Vec<([f64; 2], [f64; 2])>>,
    pupils: [[f64; 2]; 2],
}

impl Face {
    pub fn new(appearance: Appearance) -> Self {
        let (c, r) = (appearance.center, appearance.radius);
        let landmarks: Vec<[f64; 2]> = layout()
            .into_iter()
            .map(|[x, y]| [c[0] + r * x, c[1] + r * y])
            .collect();
        let strokes = STROKES
            .iter()
            .map(|&(a, b, closed)| {
                let mut segs: Vec<_> = (a..b).map(|i| (landmarks[i], landmarks[i + 1])).collect();
                if closed {
                    segs.push((landmarks[b], landmarks[a]));
                }
                segs
            })
            .collect();
        let centroid = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let s = r.fold([0.0, 0.0], |s, i| [s[0] + landmarks[i][0], s[1] + landmarks[i][1]]);
            [s[0] / n, s[1] / n]
        };
        let pupils = [centroid(LEFT_EYE), centroid(RIGHT_EYE)];
        Self {
            appearance,
            landmarks,
            strokes,
            pupils,
        }
    }

    /// Template landmark positions.
    pub fn landmarks(&self) -> &[[f64; 2]] {
        &self.landmarks
    }

    /// Template intensity in `[0, 1]` at a continuous position.
    pub fn intensity(&self, x: f64, y: f64) -> f64 {
        let a = &self.appearance;
        let r = a.radius;
        let ex = (x - a.center[0]) / r;
        let ey = (y - a.center[1] + 0.1 * r) / (1.3 * r);
        let rho = (ex * ex + ey * ey).sqrt();
        let mask = 1.0 / (1.0 + (-(1.0 - rho) * r / 1.5).exp());
        let texture: f64 = a
            .texture
            .iter()
            .map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin())
            .sum();
        let base = a.background + (a.skin - a.background) * mask + texture;

        let reach = (4.0 * STROKE_SIGMA).powi(2);
        let mut dark = 0.0;
        for stroke in &self.strokes {
            let d2 = stroke
                .iter()
                .map(|&(p, q)| segment_dist2([x, y], p, q))
                .fold(f64::INFINITY, f64::min);
            if d2 < reach {
                dark += STROKE_DARKNESS * (-d2 / (2.0 * STROKE_SIGMA * STROKE_SIGMA)).exp();
            }
        }
        let ps = 0.05 * r;
        for p in &self.pupils {
            let d2 = (x - p[0]).powi(2) + (y - p[1]).powi(2);
            dark += PUPIL_DARKNESS * (-d2 / (2.0 * ps * ps)).exp();
        }
        base * (-dark).exp()
    }
}

fn segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    cx * cx + cy * cy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub sigma: f64,
    /// Displacement at the bump center for unit amplitude.
    pub dir: [f64; 2],
}

/// The unit-amplitude displacement field `D`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Deformation {
    pub bumps: Vec<Bump>,
}

impl Deformation {
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        let mut d = [0.0, 0.0];
        for b in &self.bumps {
            let r2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
            let g = (-r2 / (2.0 * b.sigma * b.sigma)).exp();
            d[0] += g * b.dir[0];
            d[1] += g * b.dir[1];
        }
        d
    }

    /// Class-specific action pattern on `face`.
    ///
    /// 0: mouth corners up and out; 1: brows lowered and drawn together
    /// with narrowing upper lids; 2: brows raised and jaw dropped;
    /// 3: nose and upper lip raised; 4: mouth corners down.
    pub fn expression(class: usize, face: &Face) -> Self {
        let lm = face.landmarks();
        let s = 0.18 * face.appearance.radius;
        let mid = |i: usize, j: usize| [(lm[i][0] + lm[j][0]) / 2.0, (lm[i][1] + lm[j][1]) / 2.0];
        let bump = |center: [f64; 2], dir: [f64; 2], sigma: f64| Bump { center, sigma, dir };
        let bumps = match class {
            0 => vec![bump(lm[48], [-0.45, -0.9], s), bump(lm[54], [0.45, -0.9], s)],
            1 => vec![
                bump(lm[21], [0.5, 0.85], s),
                bump(lm[22], [-0.5, 0.85], s),
                bump(mid(37, 38), [0.0, 0.6], 0.6 * s),
                bump(mid(43, 44), [0.0, 0.6], 0.6 * s),
            ],
            2 => vec![
                bump(lm[19], [0.0, -1.0], s),
                bump(lm[24], [0.0, -1.0], s),
                bump(lm[57], [0.0, 1.0], s),
            ],
            3 => vec![bump(lm[33], [0.0, -1.0], s), bump(lm[51], [0.0, -0.7], s)],
            4 => vec![bump(lm[48], [-0.2, 1.0], s), bump(lm[54], [0.2, 1.0], s)],
            _ => panic!("no expression pattern for class {class}"),
        };
        // overlapping bumps add up; keep the peak displacement at unit scale
        let mut d = Self { bumps };
        let peak = d
            .bumps
            .iter()
            .map(|b| {
                let v = d.eval(b.center[0], b.center[1]);
                v[0].hypot(v[1])
            })
            .fold(0.0, f64::max);
        if peak > 1.0 {
            for b in &mut d.bumps {
                b.dir = [b.dir[0] / peak, b.dir[1] / peak];
            }
        }
        d
    }
}
