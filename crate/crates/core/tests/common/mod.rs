//! Loop-based reference implementations and helpers shared by the
//! integration tests. Everything here is written independently of the
//! library's fast paths.

#![allow(dead_code)]

use std::collections::BTreeMap;

use lidar_mos::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

/// `|a − b| <= tol · max(|b|, 1)` elementwise; returns the worst ratio.
pub fn worst_rel(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense `C × H × W` array in f64.
#[derive(Debug, Clone)]
pub struct Dense {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Dense {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, v: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        Self {
            c: s[0],
            h: s[1],
            w: s[2],
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, val: f64) {
        self.v[(c * self.h + y) * self.w + x] = val;
    }
}

/// Zero-padded "same" cross-correlation, one output element at a time.
pub fn conv2d_ref(x: &Dense, kernel: &Tensor, bias: &Tensor) -> Dense {
    let s = kernel.shape();
    let (co, ci, k) = (s[0], s[1], s[2]);
    assert_eq!(ci, x.c);
    let r = (k / 2) as isize;
    let kd = kernel.data();
    let mut out = Dense::zeros(co, x.h, x.w);
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = bias.data()[o] as f64;
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - r;
                            let sx = xx as isize + kx as isize - r;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += kd[((o * ci + i) * k + ky) * k + kx] as f64 * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

pub fn maxpool_ref(x: &Dense) -> Dense {
    let mut out = Dense::zeros(x.c, x.h / 2, x.w / 2);
    for c in 0..x.c {
        for y in 0..x.h / 2 {
            for xx in 0..x.w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(c, 2 * y + dy, 2 * xx + dx));
                    }
                }
                out.set(c, y, xx, m);
            }
        }
    }
    out
}

/// Bilinear sample at normalized `(gx, gy)` with corner-aligned mapping and
/// zero padding.
pub fn bilinear_ref(src: &Dense, c: usize, gx: f64, gy: f64) -> f64 {
    let px = (gx + 1.0) / 2.0 * (src.w as f64 - 1.0);
    let py = (gy + 1.0) / 2.0 * (src.h as f64 - 1.0);
    let (x0, y0) = (px.floor(), py.floor());
    let mut acc = 0.0;
    for (xi, wx) in [(x0, 1.0 - (px - x0)), (x0 + 1.0, px - x0)] {
        for (yi, wy) in [(y0, 1.0 - (py - y0)), (y0 + 1.0, py - y0)] {
            if xi >= 0.0 && yi >= 0.0 && xi < src.w as f64 && yi < src.h as f64 {
                acc += wx * wy * src.at(c, yi as usize, xi as usize);
            }
        }
    }
    acc
}

fn get<'a>(w: &'a lidar_mos::weights::WeightSet, name: &str) -> &'a Tensor {
    w.get(name).unwrap()
}

pub fn attention_fuse_ref(m_r: &Dense, m_b: &Dense, w: &lidar_mos::weights::WeightSet, gate_sigmoid: bool) -> Dense {
    let mut cat = Dense::zeros(m_r.c + m_b.c, m_r.h, m_r.w);
    for c in 0..m_r.c + m_b.c {
        for y in 0..m_r.h {
            for x in 0..m_r.w {
                let v = if c < m_r.c { m_r.at(c, y, x) } else { m_b.at(c - m_r.c, y, x) };
                cat.set(c, y, x, v);
            }
        }
    }
    let f = conv2d_ref(&cat, get(w, "attn.reduce.weight"), get(w, "attn.reduce.bias"));
    let f = round_f32(&f);
    let f = round_f32(&conv2d_ref(&f, get(w, "attn.conv.weight"), get(w, "attn.conv.bias")));
    let g = round_f32(&conv2d_ref(&f, get(w, "attn.gate.weight"), get(w, "attn.gate.bias")));
    let mut out = f.clone();
    for i in 0..out.v.len() {
        let gate = if gate_sigmoid { sigmoid(g.v[i]) } else { g.v[i] };
        out.v[i] = f.v[i] * gate + m_r.v[i];
    }
    out
}

/// Rounds every element to f32, mirroring the storage precision between
/// stages.
pub fn round_f32(d: &Dense) -> Dense {
    Dense {
        v: d.v.iter().map(|&x| x as f32 as f64).collect(),
        ..*d
    }
}

pub fn motion_semantic_fuse_ref(
    sem: &Dense,
    motion: &Dense,
    res: &Dense,
    w: &lidar_mos::weights::WeightSet,
) -> Dense {
    let a = round_f32(&conv2d_ref(sem, get(w, "motion.sem.weight"), get(w, "motion.sem.bias")));
    let c = motion.c;
    let n = (motion.h * motion.w) as f64;
    let mut fs = motion.clone();
    for i in 0..fs.v.len() {
        fs.v[i] = (sigmoid(a.v[i]) as f32 as f64 * motion.v[i]) as f32 as f64;
    }
    let mut gap = Dense::zeros(c, 1, 1);
    for ch in 0..c {
        let mut s = 0.0;
        for y in 0..motion.h {
            for x in 0..motion.w {
                s += fs.at(ch, y, x);
            }
        }
        gap.v[ch] = (s / n) as f32 as f64;
    }
    let logits = conv2d_ref(&gap, get(w, "motion.channel.weight"), get(w, "motion.channel.bias"));
    let logits: Vec<f64> = logits.v.iter().map(|&x| x as f32 as f64).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let scale: Vec<f64> = logits.iter().map(|l| ((l - m).exp() / z) as f32 as f64 * c as f64).collect();
    let mut out = fs.clone();
    for ch in 0..c {
        for y in 0..motion.h {
            for x in 0..motion.w {
                let v = (fs.at(ch, y, x) * (scale[ch] as f32 as f64)) as f32 as f64 + res.at(ch, y, x);
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

pub fn bev_encode_ref(x: &Dense, w: &lidar_mos::weights::WeightSet) -> Dense {
    let p = maxpool_ref(x);
    let a = round_f32(&conv2d_ref(&p, get(w, "bev.conv1.weight"), get(w, "bev.conv1.bias")));
    conv2d_ref(&a, get(w, "bev.conv2.weight"), get(w, "bev.conv2.bias"))
}

/// Dense 3D cross-correlation evaluated only at occupied voxels, with
/// unoccupied neighbours reading zero.
pub fn sparse_conv_dense_ref(
    voxels: &BTreeMap<[i32; 3], Vec<f64>>,
    kernel: &Tensor,
    bias: &Tensor,
) -> BTreeMap<[i32; 3], Vec<f64>> {
    let s = kernel.shape();
    let (co, ci, k) = (s[0], s[1], s[2]);
    let r = (k / 2) as i32;
    let (mut lo, mut hi) = ([i32::MAX; 3], [i32::MIN; 3]);
    for key in voxels.keys() {
        for a in 0..3 {
            lo[a] = lo[a].min(key[a] - r);
            hi[a] = hi[a].max(key[a] + r);
        }
    }
    let dims: Vec<usize> = (0..3).map(|a| (hi[a] - lo[a] + 1) as usize).collect();
    let mut dense = vec![0f64; ci * dims[0] * dims[1] * dims[2]];
    let at = |c: usize, p: [i32; 3]| {
        (((c * dims[0] + (p[0] - lo[0]) as usize) * dims[1] + (p[1] - lo[1]) as usize) * dims[2])
            + (p[2] - lo[2]) as usize
    };
    for (key, f) in voxels {
        for c in 0..ci {
            dense[at(c, *key)] = f[c];
        }
    }
    let kd = kernel.data();
    voxels
        .keys()
        .map(|key| {
            let out = (0..co)
                .map(|o| {
                    let mut acc = bias.data()[o] as f64;
                    for c in 0..ci {
                        for a in 0..k as i32 {
                            for b in 0..k as i32 {
                                for d in 0..k as i32 {
                                    let p = [key[0] + a - r, key[1] + b - r, key[2] + d - r];
                                    let tap = ((a as usize * k) + b as usize) * k + d as usize;
                                    acc += kd[(o * ci + c) * k * k * k + tap] as f64 * dense[at(c, p)];
                                }
                            }
                        }
                    }
                    acc
                })
                .collect();
            (*key, out)
        })
        .collect()
}

/// Jaccard loss of the error set `m` for foreground set `fg`.
fn jaccard_loss(m: &[bool], fg: &[bool]) -> f64 {
    let inter_m = m.iter().filter(|&&x| x).count() as f64;
    let union = m.iter().zip(fg).filter(|(a, b)| **a || **b).count() as f64;
    if union == 0.0 {
        0.0
    } else {
        inter_m / union
    }
}

/// Lovász extension of the Jaccard loss evaluated by its integral form
/// `∫₀¹ Δ({i : m_i ≥ t}) dt` on errors that are multiples of `step`.
pub fn lovasz_extension_on_grid(errors: &[f64], fg: &[bool], step: f64) -> f64 {
    let levels = (1.0 / step).round() as usize;
    (1..=levels)
        .map(|k| {
            let t = k as f64 * step;
            let m: Vec<bool> = errors.iter().map(|&e| e >= t - 1e-12).collect();
            step * jaccard_loss(&m, fg)
        })
        .sum()
}

/// Multi-class Lovász-softmax by brute force over the grid integral,
/// averaged over classes in the ground truth or the argmax (first maximum).
pub fn lovasz_softmax_bruteforce(probs: &[Vec<f64>], gt: &[usize], step: f64) -> f64 {
    let k = probs.first().map_or(0, |r| r.len());
    let mut present = vec![false; k];
    for (i, row) in probs.iter().enumerate() {
        present[gt[i]] = true;
        let mut best = 0;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        present[best] = true;
    }
    let classes: Vec<usize> = (0..k).filter(|&c| present[c]).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let fg: Vec<bool> = gt.iter().map(|&g| g == c).collect();
            let err: Vec<f64> = probs
                .iter()
                .zip(&fg)
                .map(|(row, &f)| ((if f { 1.0 } else { 0.0 }) - row[c]).abs())
                .collect();
            lovasz_extension_on_grid(&err, &fg, step)
        })
        .sum();
    total / classes.len() as f64
}

/// Calls `f` on every multiset of size `n` drawn from `0..types`, as a
/// non-decreasing sequence.
pub fn for_each_multiset(types: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(types: usize, n: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == n {
            f(cur);
            return;
        }
        for t in start..types {
            cur.push(t);
            rec(types, n, t, cur, f);
            cur.pop();
        }
    }
    rec(types, n, 0, &mut Vec::with_capacity(n), f);
}

/// Runs the built CLI binary.
pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_lidar-mos"))
        .args(args)
        .env_remove("LIDAR_MOS_CONFIG")
        .output()
        .expect("spawn CLI")
}

/// Relative path → bytes of every file under `dir`.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A small pipeline config for fast end-to-end runs.
pub const SMALL_CONFIG: &str = r#"
rv_past_frames = 2
stride_options = [1, 2]
seed = 11

[rv]
h = 32
w = 512

[bev]
h = 90
w = 100
window_len = 4
"#;
