//! Cross-view alignment: the range-pixel → BEV-cell map `T(B→R)` and the
//! feature blocks that consume it.
//!
//! `T(B→R)` is composed from `T(R→P)` (range pixel → point index) and
//! `T(P→B)` (point → BEV cell). BEV features are then resampled at each
//! range pixel's cell and fused with the range-view features.

use crate::bev_view::{BevConfig, BevIndexMap, NO_CELL};
use crate::error::{shape_err, Error, Result};
use crate::range_view::RangeIndexMap;
use crate::tensor::{self, conv2d, normalize_coord, Activation, Pool, Tensor};
use crate::weights::WeightSet;

/// Sentinel coordinate pair for range pixels without a BEV cell.
pub const NO_COORD: [f32; 2] = [-1.0, -1.0];

/// `T(B→R)`: for every range pixel, the `(x, y)` BEV cell of the point it
/// shows, or [`NO_COORD`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewMap {
    pub h: usize,
    pub w: usize,
    /// BEV grid the coordinates refer to: `bev_w` radial × `bev_h` angular.
    pub bev_h: usize,
    pub bev_w: usize,
    pub coords: Vec<[f32; 2]>,
}

impl CrossViewMap {
    #[inline]
    pub fn get(&self, v: usize, u: usize) -> [f32; 2] {
        self.coords[v * self.w + u]
    }

    pub fn is_valid_coord(c: [f32; 2]) -> bool {
        c != NO_COORD
    }

    pub fn valid_count(&self) -> usize {
        self.coords.iter().filter(|c| Self::is_valid_coord(**c)).count()
    }

    /// Channel-major `2 × h × w` layout (x plane, then y plane).
    pub fn to_planes(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(2 * self.coords.len());
        out.extend(self.coords.iter().map(|c| c[0]));
        out.extend(self.coords.iter().map(|c| c[1]));
        out
    }
}

/// Looks up every range pixel's point in `T(P→B)`.
pub fn compose_b2r(
    t_r2p: &RangeIndexMap,
    t_p2b: &BevIndexMap,
    bev: &BevConfig,
) -> Result<CrossViewMap> {
    let mut coords = Vec::with_capacity(t_r2p.idx.len());
    for &i in &t_r2p.idx {
        if i < 0 {
            coords.push(NO_COORD);
            continue;
        }
        let cell = t_p2b.coords.get(i as usize).ok_or_else(|| {
            Error::Index(format!(
                "range pixel references point {i} but only {} points are mapped",
                t_p2b.len()
            ))
        })?;
        coords.push(if *cell == NO_CELL {
            NO_COORD
        } else {
            [cell[0] as f32, cell[1] as f32]
        });
    }
    Ok(CrossViewMap {
        h: t_r2p.h,
        w: t_r2p.w,
        bev_h: bev.h,
        bev_w: bev.w,
        coords,
    })
}

/// Bilinear resize of the coordinate map (half-pixel centres). Sentinel
/// neighbours are dropped and the remaining weights renormalized; a target
/// pixel with no valid neighbour stays a sentinel.
pub fn resize_map(map: &CrossViewMap, th: usize, tw: usize) -> Result<CrossViewMap> {
    if th == 0 || tw == 0 {
        return Err(shape_err!("cannot resize coordinate map to {th}x{tw}"));
    }
    if (th, tw) == (map.h, map.w) {
        return Ok(map.clone());
    }
    if map.h == 0 || map.w == 0 {
        return Err(shape_err!("cannot resize an empty coordinate map"));
    }
    let sy = map.h as f64 / th as f64;
    let sx = map.w as f64 / tw as f64;
    let mut coords = Vec::with_capacity(th * tw);
    for v in 0..th {
        let fy = ((v as f64 + 0.5) * sy - 0.5).clamp(0.0, (map.h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(map.h - 1);
        let ay = fy - y0 as f64;
        for u in 0..tw {
            let fx = ((u as f64 + 0.5) * sx - 0.5).clamp(0.0, (map.w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(map.w - 1);
            let ax = fx - x0 as f64;
            let taps = [
                (y0, x0, (1.0 - ay) * (1.0 - ax)),
                (y0, x1, (1.0 - ay) * ax),
                (y1, x0, ay * (1.0 - ax)),
                (y1, x1, ay * ax),
            ];
            let (mut wsum, mut cx, mut cy) = (0.0, 0.0, 0.0);
            for (y, x, wt) in taps {
                let c = map.get(y, x);
                if wt > 0.0 && CrossViewMap::is_valid_coord(c) {
                    wsum += wt;
                    cx += wt * c[0] as f64;
                    cy += wt * c[1] as f64;
                }
            }
            coords.push(if wsum > 0.0 {
                [(cx / wsum) as f32, (cy / wsum) as f32]
            } else {
                NO_COORD
            });
        }
    }
    Ok(CrossViewMap {
        h: th,
        w: tw,
        bev_h: map.bev_h,
        bev_w: map.bev_w,
        coords,
    })
}

/// Normalized sampling grid (`2 × h × w`) for a coordinate map. Sentinels
/// are pushed far outside `[-1, 1]` so that they sample zeros.
pub fn sampling_grid(map: &CrossViewMap) -> Tensor {
    let n = map.coords.len();
    let mut data = vec![0f32; 2 * n];
    for (k, c) in map.coords.iter().enumerate() {
        if CrossViewMap::is_valid_coord(*c) {
            data[k] = normalize_coord(c[0] as f64, map.bev_w) as f32;
            data[n + k] = normalize_coord(c[1] as f64, map.bev_h) as f32;
        } else {
            data[k] = -4.0;
            data[n + k] = -4.0;
        }
    }
    Tensor::new(vec![2, map.h, map.w], data).expect("grid shape is consistent")
}

/// Resamples BEV features `m_b` (`C × H_b' × W_b'`) onto a
/// `target_h × target_w` range grid through `map`.
pub fn geometric_align(
    m_b: &Tensor,
    map: &CrossViewMap,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor> {
    m_b.chw()?;
    if map.coords.len() != map.h * map.w {
        return Err(shape_err!(
            "coordinate map has {} entries for {}x{}",
            map.coords.len(),
            map.h,
            map.w
        ));
    }
    let resized = resize_map(map, target_h, target_w)?;
    tensor::bilinear_sample(m_b, &sampling_grid(&resized))
}

pub const ATTN_REDUCE: &str = "attn.reduce";
pub const ATTN_CONV: &str = "attn.conv";
pub const ATTN_GATE: &str = "attn.gate";
pub const MOTION_SEM: &str = "motion.sem";
pub const MOTION_CHANNEL: &str = "motion.channel";
pub const BEV_CONV1: &str = "bev.conv1";
pub const BEV_CONV2: &str = "bev.conv2";

/// Kernel/bias tensors for the fusion and encoder blocks, keyed
/// `"<block>.weight"` / `"<block>.bias"`.
#[derive(Debug, Clone, Default)]
pub struct FusionWeights {
    pub set: WeightSet,
    /// Applies a sigmoid to the attention gate; off reproduces the plain
    /// `Conv1×1` gate.
    pub gate_sigmoid: bool,
}

impl FusionWeights {
    pub fn new(set: WeightSet) -> Self {
        Self {
            set,
            gate_sigmoid: false,
        }
    }

    fn conv(&self, block: &str, c_out: usize, c_in: usize, k: usize) -> Result<(&Tensor, &Tensor)> {
        Ok((
            self.set.expect(&format!("{block}.weight"), &[c_out, c_in, k, k])?,
            self.set.expect(&format!("{block}.bias"), &[c_out])?,
        ))
    }

    fn conv_out_channels(&self, block: &str) -> Result<usize> {
        self.set
            .get(&format!("{block}.weight"))?
            .shape()
            .first()
            .copied()
            .ok_or_else(|| shape_err!("{block}.weight is a scalar"))
    }
}

fn conv_spec(block: &str, c_out: usize, c_in: usize, k: usize) -> [(String, Vec<usize>); 2] {
    [
        (format!("{block}.weight"), vec![c_out, c_in, k, k]),
        (format!("{block}.bias"), vec![c_out]),
    ]
}

/// Tensor names and shapes used by [`attention_fuse`].
pub fn attention_fuse_specs(c_r: usize, c_b: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    v.extend(conv_spec(ATTN_REDUCE, c_r, c_r + c_b, 1));
    v.extend(conv_spec(ATTN_CONV, c_r, c_r, 3));
    v.extend(conv_spec(ATTN_GATE, c_r, c_r, 1));
    v
}

/// Tensor names and shapes used by [`motion_semantic_fuse`].
pub fn motion_semantic_specs(c_sem: usize, c_motion: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    v.extend(conv_spec(MOTION_SEM, c_motion, c_sem, 1));
    v.extend(conv_spec(MOTION_CHANNEL, c_motion, c_motion, 1));
    v
}

/// Tensor names and shapes used by [`bev_encode`].
pub fn bev_encode_specs(c_in: usize, c_out: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    v.extend(conv_spec(BEV_CONV1, c_out, c_in, 3));
    v.extend(conv_spec(BEV_CONV2, c_out, c_out, 3));
    v
}

/// Attention fusion of range features with aligned BEV features:
///
/// ```text
/// f   = Conv3×3(Conv1×1(concat(m_r, m_b2r)))
/// out = f ⊙ Conv1×1(f) + m_r
/// ```
pub fn attention_fuse(m_r: &Tensor, m_b2r: &Tensor, w: &FusionWeights) -> Result<Tensor> {
    let (c_r, h, wd) = m_r.chw()?;
    let (c_b, hb, wb) = m_b2r.chw()?;
    if (h, wd) != (hb, wb) {
        return Err(shape_err!("range features {h}x{wd} vs aligned BEV {hb}x{wb}"));
    }
    let (rw, rb) = w.conv(ATTN_REDUCE, c_r, c_r + c_b, 1)?;
    let (cw, cb) = w.conv(ATTN_CONV, c_r, c_r, 3)?;
    let (gw, gb) = w.conv(ATTN_GATE, c_r, c_r, 1)?;

    let f = Tensor::concat_channels(&[m_r, m_b2r])?;
    let f = conv2d(&conv2d(&f, rw, rb)?, cw, cb)?;
    let mut gate = conv2d(&f, gw, gb)?;
    if w.gate_sigmoid {
        gate = tensor::activate(&gate, Activation::Sigmoid)?;
    }
    f.mul(&gate)?.add(m_r)
}

/// Motion/semantic fusion of the range branch:
///
/// ```text
/// F_s  = sigmoid(Conv1×1(f_sem)) ⊙ f_motion
/// F_f  = softmax_c(Conv1×1(GAP(F_s))) · C
/// F_rv = F_s ⊙ F_f + f_res
/// ```
pub fn motion_semantic_fuse(
    f_sem: &Tensor,
    f_motion: &Tensor,
    f_res: &Tensor,
    w: &FusionWeights,
) -> Result<Tensor> {
    let (c_sem, h, wd) = f_sem.chw()?;
    let (c, hm, wm) = f_motion.chw()?;
    if (h, wd) != (hm, wm) || f_res.shape() != f_motion.shape() {
        return Err(shape_err!(
            "fusion inputs disagree: sem {:?}, motion {:?}, residual {:?}",
            f_sem.shape(),
            f_motion.shape(),
            f_res.shape()
        ));
    }
    let (sw, sb) = w.conv(MOTION_SEM, c, c_sem, 1)?;
    let (chw_, chb) = w.conv(MOTION_CHANNEL, c, c, 1)?;

    let attn = tensor::activate(&conv2d(f_sem, sw, sb)?, Activation::Sigmoid)?;
    let f_s = attn.mul(f_motion)?;
    let pooled = tensor::pool(&f_s, Pool::GlobalAvg)?;
    let logits = conv2d(&pooled, chw_, chb)?;
    let f_f = tensor::activate(&logits, Activation::ChannelSoftmax)?.scale(c as f32);
    let f_c = f_s.scale_channels(f_f.data())?;
    f_c.add(f_res)
}

/// BEV motion encoder: `Conv3×3(Conv3×3(MaxPool2×2(x)))`.
pub fn bev_encode(f_bev_motion: &Tensor, w: &FusionWeights) -> Result<Tensor> {
    let (c_in, h, wd) = f_bev_motion.chw()?;
    if h < 2 || wd < 2 {
        return Err(shape_err!("BEV encoder needs at least 2x2 input, got {h}x{wd}"));
    }
    let c_out = w.conv_out_channels(BEV_CONV1)?;
    let (w1, b1) = w.conv(BEV_CONV1, c_out, c_in, 3)?;
    let (w2, b2) = w.conv(BEV_CONV2, c_out, c_out, 3)?;
    let pooled = tensor::pool(f_bev_motion, Pool::Max2x2)?;
    conv2d(&conv2d(&pooled, w1, b1)?, w2, b2)
}
