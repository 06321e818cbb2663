//! Spherical (range-view) projection.
//!
//! A point `(x, y, z)` with range `r` lands at
//!
//! ```text
//! u = ½ · (1 − atan2(y, x) / π) · w
//! v = (1 − (asin(z / r) + f_down) / f) · h,     f = f_up + f_down
//! ```
//!
//! floored to integers. Row 0 is the top of the vertical field of view and
//! the forward axis (+x) maps to the centre column.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{approx_atan2, ATAN2_TOLERANCE};
use crate::error::{Error, Result};
use crate::scan_io::{relative_pose, Point, PointCloud, Pose, ScanFrame};

/// Value stored in every channel of a pixel that received no point.
pub const EMPTY_PIXEL: f32 = -1.0;

/// Number of channels in a range image: `x, y, z, r, e`.
pub const RV_CHANNELS: usize = 5;
pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_Z: usize = 2;
pub const CH_RANGE: usize = 3;
pub const CH_INTENSITY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RvConfig {
    pub h: usize,
    pub w: usize,
    /// Upper field-of-view bound above the horizon, radians.
    pub f_up: f64,
    /// Lower field-of-view bound below the horizon (positive), radians.
    pub f_down: f64,
}

impl Default for RvConfig {
    /// HDL-64E geometry: 64 × 2048, +3° / −25°.
    fn default() -> Self {
        Self {
            h: 64,
            w: 2048,
            f_up: 3.0f64.to_radians(),
            f_down: 25.0f64.to_radians(),
        }
    }
}

impl RvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::Config(format!(
                "range image size must be positive, got {}x{}",
                self.h, self.w
            )));
        }
        let fov = self.f_up + self.f_down;
        if !(fov > 0.0) || !fov.is_finite() {
            return Err(Error::Config(format!("vertical field of view must be positive, got {fov}")));
        }
        Ok(())
    }

    pub fn fov(&self) -> f64 {
        self.f_up + self.f_down
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
}

/// Pixel coordinates in a range image: `u` is the column, `v` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub u: usize,
    pub v: usize,
}

/// Continuous image coordinates before quantization.
#[inline]
pub fn continuous_uv(p: &Point, r: f64, cfg: &RvConfig) -> (f64, f64) {
    let yaw = p.y.atan2(p.x);
    let pitch = (p.z / r).clamp(-1.0, 1.0).asin();
    let u = 0.5 * (1.0 - yaw / std::f64::consts::PI) * cfg.w as f64;
    let v = (1.0 - (pitch + cfg.f_down) / cfg.fov()) * cfg.h as f64;
    (u, v)
}

#[inline]
fn quantize(u: f64, v: f64, cfg: &RvConfig) -> Option<Pixel> {
    let v = v.floor();
    if !(v >= 0.0 && v < cfg.h as f64) {
        return None;
    }
    let u = u.floor();
    if !(u >= 0.0) {
        return None;
    }
    // the azimuth seam at −π produces u == w exactly
    let u = (u as usize).min(cfg.w - 1);
    Some(Pixel { u, v: v as usize })
}

/// Sines of the row-edge pitches `f_up − j·fov/h`, `j = 0..=h`; decreasing.
struct RowEdges {
    sin: Vec<f64>,
}

/// Slack in `sin(pitch)` around a row edge inside which the exact formula
/// decides.
const ROW_MARGIN: f64 = 1e-9;

impl RowEdges {
    fn new(cfg: &RvConfig) -> Self {
        let step = cfg.fov() / cfg.h as f64;
        Self {
            sin: (0..=cfg.h).map(|j| (cfg.f_up - j as f64 * step).sin()).collect(),
        }
    }

    /// `Some(Some(row))`, `Some(None)` outside the field of view, or
    /// `None` when `s` is too close to an edge to decide.
    #[inline]
    fn row(&self, s: f64) -> Option<Option<usize>> {
        let c = self.sin.partition_point(|&e| e >= s);
        let above = c.checked_sub(1).map(|v| self.sin[v]);
        let below = self.sin.get(c).copied();
        if above.is_some_and(|e| e - s <= ROW_MARGIN) || below.is_some_and(|e| s - e <= ROW_MARGIN) {
            return None;
        }
        Some(match c {
            0 => None,
            c if c > self.sin.len() - 1 => None,
            c => Some(c - 1),
        })
    }
}

/// [`quantize`] of [`continuous_uv`], taking the row from a sine table and
/// the column from the polynomial `atan2` whenever they are unambiguous.
#[inline]
fn fast_pixel(p: &Point, r: f64, cfg: &RvConfig, rows: &RowEdges) -> Option<Pixel> {
    let v = match rows.row((p.z / r).clamp(-1.0, 1.0)) {
        Some(v) => v?,
        None => {
            let (u, v) = continuous_uv(p, r, cfg);
            return quantize(u, v, cfg);
        }
    };
    let w = cfg.w as f64;
    let t = 0.5 * (1.0 - approx_atan2(p.y, p.x) / std::f64::consts::PI) * w;
    let f = t.floor();
    let margin = ATAN2_TOLERANCE * w / std::f64::consts::PI;
    if f >= 0.0 && f < w && t - f > margin && f + 1.0 - t > margin {
        return Some(Pixel { u: f as usize, v });
    }
    let (u, v) = continuous_uv(p, r, cfg);
    quantize(u, v, cfg)
}

/// Projects a point to its range-image pixel; `None` when it falls outside
/// the vertical field of view.
pub fn project_to_uv(p: &Point, cfg: &RvConfig) -> Result<Option<Pixel>> {
    let r = p.range();
    if !(r > 0.0) {
        return Err(Error::Degenerate("cannot project a point at the sensor origin".into()));
    }
    let (u, v) = continuous_uv(p, r, cfg);
    Ok(quantize(u, v, cfg))
}

/// `h × w × 5` image of `(x, y, z, r, e)`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl RangeImage {
    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![EMPTY_PIXEL; RV_CHANNELS * h * w],
        }
    }

    #[inline]
    pub fn get(&self, channel: usize, v: usize, u: usize) -> f32 {
        self.data[(channel * self.h + v) * self.w + u]
    }

    /// The range channel as a flat `h × w` slice.
    pub fn range_channel(&self) -> &[f32] {
        let n = self.h * self.w;
        &self.data[CH_RANGE * n..(CH_RANGE + 1) * n]
    }

    pub fn is_valid(&self, v: usize, u: usize) -> bool {
        self.get(CH_RANGE, v, u) > 0.0
    }
}

/// `T(R→P)`: per-pixel index of the winning point, `-1` for empty pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeIndexMap {
    pub h: usize,
    pub w: usize,
    pub idx: Vec<i64>,
}

impl RangeIndexMap {
    #[inline]
    pub fn get(&self, v: usize, u: usize) -> i64 {
        self.idx[v * self.w + u]
    }

    pub fn valid_count(&self) -> usize {
        self.idx.iter().filter(|&&i| i >= 0).count()
    }
}

/// Per-scan projection bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProjectionStats {
    pub points: usize,
    pub zero_range: usize,
    pub out_of_fov: usize,
    pub occluded: usize,
}

/// Projects `cloud` into a range image, keeping the nearest point per pixel
/// (ties go to the lower point index).
pub fn build_range_image(
    cloud: &PointCloud,
    cfg: &RvConfig,
) -> Result<(RangeImage, RangeIndexMap, ProjectionStats)> {
    cfg.validate()?;
    let rows = RowEdges::new(cfg);
    let npix = cfg.pixels();
    let mut best_r = vec![f64::INFINITY; npix];
    let mut idx = vec![-1i64; npix];
    let mut stats = ProjectionStats {
        points: cloud.len(),
        ..Default::default()
    };

    for (i, p) in cloud.points.iter().enumerate() {
        let r = p.range();
        if !(r > 0.0) {
            stats.zero_range += 1;
            continue;
        }
        let Some(px) = fast_pixel(p, r, cfg, &rows) else {
            stats.out_of_fov += 1;
            continue;
        };
        let k = px.v * cfg.w + px.u;
        if r < best_r[k] {
            if idx[k] >= 0 {
                stats.occluded += 1;
            }
            best_r[k] = r;
            idx[k] = i as i64;
        } else {
            stats.occluded += 1;
        }
    }

    let mut img = RangeImage::empty(cfg.h, cfg.w);
    for (k, &i) in idx.iter().enumerate() {
        if i < 0 {
            continue;
        }
        let p = &cloud.points[i as usize];
        let vals = [p.x, p.y, p.z, best_r[k], p.e];
        for (c, val) in vals.into_iter().enumerate() {
            img.data[c * npix + k] = val as f32;
        }
    }
    Ok((
        img,
        RangeIndexMap {
            h: cfg.h,
            w: cfg.w,
            idx,
        },
        stats,
    ))
}

/// `h × w × k` normalized range differences against `k` past frames,
/// stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RvResidualMap {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub values: Vec<f32>,
    /// Pixels holding a return in both the current and the past image,
    /// same layout as `values`.
    pub doubly_valid: Vec<bool>,
}

impl RvResidualMap {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.values[c * n..(c + 1) * n]
    }

    /// `(doubly valid pixels, those with residual < threshold)` over all
    /// channels.
    pub fn count_below(&self, threshold: f32) -> (usize, usize) {
        let mut valid = 0;
        let mut below = 0;
        for (&v, &ok) in self.values.iter().zip(&self.doubly_valid) {
            if ok {
                valid += 1;
                if v < threshold {
                    below += 1;
                }
            }
        }
        (valid, below)
    }
}

/// One residual channel: `|r_k − r_0| / r_0` where both pixels hold a
/// return, else 0. Also returns the doubly-valid mask.
pub fn residual_channel(current: &RangeImage, past: &RangeImage) -> (Vec<f32>, Vec<bool>) {
    residual_values(current.range_channel(), past.range_channel())
}

/// Range channel of `frame` re-expressed at `pose_dst`; equal to the range
/// channel of [`build_range_image`] on the [`compensate`](crate::scan_io::compensate)d cloud.
pub fn compensated_range_channel(frame: &ScanFrame, pose_dst: &Pose, cfg: &RvConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let rows = RowEdges::new(cfg);
    let rel = if frame.pose == *pose_dst {
        None
    } else {
        Some(relative_pose(&frame.pose, pose_dst)?)
    };
    let mut best = vec![f64::INFINITY; cfg.pixels()];
    for src in &frame.cloud.points {
        let p = match &rel {
            Some(m) => {
                let (x, y, z) = m.transform_xyz(src.x, src.y, src.z);
                Point::new(x, y, z, src.e)
            }
            None => *src,
        };
        let r = p.range();
        if !(r > 0.0) {
            continue;
        }
        if let Some(px) = fast_pixel(&p, r, cfg, &rows) {
            let k = px.v * cfg.w + px.u;
            if r < best[k] {
                best[k] = r;
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|r| if r.is_finite() { r as f32 } else { EMPTY_PIXEL })
        .collect())
}

fn residual_values(current: &[f32], past: &[f32]) -> (Vec<f32>, Vec<bool>) {
    current
        .iter()
        .zip(past)
        .map(|(&r0, &rk)| {
            if r0 > 0.0 && rk > 0.0 {
                (((rk as f64 - r0 as f64).abs() / r0 as f64) as f32, true)
            } else {
                (0.0, false)
            }
        })
        .unzip()
}

/// Residual map of `current` against already-projected range image of the
/// current frame; avoids re-projecting the current scan.
pub fn build_rv_residual_from_image(
    current: &ScanFrame,
    current_image: &RangeImage,
    past: &[&ScanFrame],
    cfg: &RvConfig,
) -> Result<RvResidualMap> {
    if past.is_empty() {
        return Err(Error::Config("RV residual needs at least one past frame".into()));
    }
    let mut values = Vec::with_capacity(past.len() * cfg.pixels());
    let mut doubly_valid = Vec::with_capacity(past.len() * cfg.pixels());
    for frame in past {
        let past_range = compensated_range_channel(frame, &current.pose, cfg)?;
        let (v, m) = residual_values(current_image.range_channel(), &past_range);
        values.extend(v);
        doubly_valid.extend(m);
    }
    Ok(RvResidualMap {
        h: cfg.h,
        w: cfg.w,
        k: past.len(),
        values,
        doubly_valid,
    })
}

/// Motion signal of `current` against each frame in `past`, in order.
pub fn build_rv_residual(
    current: &ScanFrame,
    past: &[&ScanFrame],
    cfg: &RvConfig,
) -> Result<RvResidualMap> {
    if past.is_empty() {
        return Err(Error::Config("RV residual needs at least one past frame".into()));
    }
    let (img, _, _) = build_range_image(&current.cloud, cfg)?;
    build_rv_residual_from_image(current, &img, past, cfg)
}

/// Draws the frame stride for one training iteration.
pub fn sample_delta_t<R: Rng + ?Sized>(rng: &mut R, stride_options: &[usize]) -> Result<usize> {
    if stride_options.iter().any(|&s| s == 0) {
        return Err(Error::Config("frame strides must be positive".into()));
    }
    stride_options
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::Config("stride options must not be empty".into()))
}

/// Frame indices `current − stride·j` for `j = 1..=k`, skipping those
/// before the start of the sequence.
pub fn strided_past_indices(current: usize, stride: usize, k: usize) -> Vec<usize> {
    (1..=k)
        .filter_map(|j| current.checked_sub(stride * j))
        .collect()
}
