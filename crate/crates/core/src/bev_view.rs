//! Polar bird's-eye-view projection and temporal-window BEV residuals.
//!
//! Grid cell `(x, y)` is radial bin `x ∈ [0, w)` and angular bin
//! `y ∈ [0, h)`; bins are half-open on the upper edge. Images are stored
//! row-major with the angular bin as the row.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::angle::{approx_atan2, ATAN2_TOLERANCE};
use crate::error::{Error, Result};
use crate::scan_io::{relative_pose, Point, PointCloud, Pose, ScanFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BevConfig {
    /// Angular bins.
    pub h: usize,
    /// Radial bins.
    pub w: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Total temporal window length `N` (two halves of `N / 2`).
    pub window_len: usize,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            h: 360,
            w: 480,
            rho_min: 0.0,
            rho_max: 50.0,
            theta_min: -std::f64::consts::PI,
            theta_max: std::f64::consts::PI,
            z_min: -4.0,
            z_max: 2.0,
            window_len: 8,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.h == 0 || self.w == 0 {
            return bad(format!("BEV grid must be non-empty, got {}x{}", self.h, self.w));
        }
        if !(self.rho_min >= 0.0 && self.rho_max > self.rho_min) {
            return bad(format!("invalid radial range [{}, {})", self.rho_min, self.rho_max));
        }
        if !(self.theta_max > self.theta_min) {
            return bad(format!("invalid angular range [{}, {})", self.theta_min, self.theta_max));
        }
        if !(self.z_max > self.z_min) {
            return bad(format!("invalid height range ({}, {})", self.z_min, self.z_max));
        }
        if self.window_len < 2 || self.window_len % 2 != 0 {
            return bad(format!("window length must be even and >= 2, got {}", self.window_len));
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.window_len / 2
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Lower edge of radial bin `i` (`i == w` gives `rho_max`).
    pub fn rho_edge(&self, i: usize) -> f64 {
        self.rho_min + (self.rho_max - self.rho_min) * i as f64 / self.w as f64
    }

    /// Lower edge of angular bin `j` (`j == h` gives `theta_max`).
    pub fn theta_edge(&self, j: usize) -> f64 {
        self.theta_min + (self.theta_max - self.theta_min) * j as f64 / self.h as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    pub rho: f64,
    pub theta: f64,
    pub z: f64,
}

/// `(rho, theta, z)`; the origin maps to `theta = 0` (atan2 convention).
#[inline]
pub fn to_polar(p: &Point) -> PolarPoint {
    PolarPoint {
        rho: (p.x * p.x + p.y * p.y).sqrt(),
        theta: p.y.atan2(p.x),
        z: p.z,
    }
}

/// BEV cell of a grid: `x` radial bin, `y` angular bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

/// Bin of `value` among the half-open intervals `[edges[i], edges[i + 1])`.
/// The scaled floor estimate is corrected against the exact edges.
#[inline]
fn bin_of(value: f64, bins: usize, scale: f64, edge: impl Fn(usize) -> f64) -> Option<usize> {
    let lo = edge(0);
    if !(value >= lo && value < edge(bins)) {
        return None;
    }
    let est = ((value - lo) * scale).floor();
    let mut i = (est.max(0.0) as usize).min(bins - 1);
    while i > 0 && value < edge(i) {
        i -= 1;
    }
    while i + 1 < bins && value >= edge(i + 1) {
        i += 1;
    }
    Some(i)
}

/// Precomputed bin edges of a grid for repeated lookups.
#[derive(Debug, Clone)]
pub struct GridIndexer {
    rho_edges: Vec<f64>,
    theta_edges: Vec<f64>,
    rho_scale: f64,
    theta_scale: f64,
    rho_min_sq: f64,
    rho_max_sq: f64,
    z_min: f64,
    z_max: f64,
    w: usize,
}

impl GridIndexer {
    pub fn new(cfg: &BevConfig) -> Self {
        Self {
            rho_edges: (0..=cfg.w).map(|i| cfg.rho_edge(i)).collect(),
            theta_edges: (0..=cfg.h).map(|j| cfg.theta_edge(j)).collect(),
            rho_scale: cfg.w as f64 / (cfg.rho_max - cfg.rho_min),
            theta_scale: cfg.h as f64 / (cfg.theta_max - cfg.theta_min),
            rho_min_sq: cfg.rho_min * cfg.rho_min,
            rho_max_sq: cfg.rho_max * cfg.rho_max,
            z_min: cfg.z_min,
            z_max: cfg.z_max,
            w: cfg.w,
        }
    }

    /// Same result as [`assign_grid`] on [`to_polar`] of the point.
    #[inline]
    pub fn cell(&self, x: f64, y: f64) -> Option<Cell> {
        let rr = x * x + y * y;
        self.cell_from_parts(x, y, rr, rr.sqrt(), approx_atan2(y, x))
    }

    /// [`cell`](Self::cell) with `x² + y²`, its square root and the
    /// polynomial angle already evaluated.
    #[inline]
    fn cell_from_parts(&self, x: f64, y: f64, rr: f64, rho: f64, approx_angle: f64) -> Option<Cell> {
        // coarse reject with slack; the exact test happens in bin_of
        if rr < self.rho_min_sq * 0.999_999 || rr > self.rho_max_sq * 1.000_001 {
            return None;
        }
        let cx = bin_of(rho, self.rho_edges.len() - 1, self.rho_scale, |i| self.rho_edges[i])?;
        let cy = match self.fast_angular_bin(approx_angle) {
            Some(j) => j,
            None => bin_of(y.atan2(x), self.theta_edges.len() - 1, self.theta_scale, |j| {
                self.theta_edges[j]
            })?,
        };
        Some(Cell { x: cx, y: cy })
    }

    /// Angular bin from a polynomial `atan2`, accepted only when the
    /// approximate angle is farther than its error bound from every edge.
    #[inline]
    fn fast_angular_bin(&self, a: f64) -> Option<usize> {
        let bins = self.theta_edges.len() - 1;
        let t = (a - self.theta_edges[0]) * self.theta_scale;
        let margin = ATAN2_TOLERANCE * self.theta_scale;
        let f = t.floor();
        if !(f >= 0.0 && f < bins as f64) || t - f <= margin || f + 1.0 - t <= margin {
            return None;
        }
        Some(f as usize)
    }

    /// Flat cell index of a point whose height lies in `(z_min, z_max)`.
    #[inline]
    pub fn height_cell(&self, x: f64, y: f64, z: f64) -> Option<usize> {
        if !(z > self.z_min && z < self.z_max) {
            return None;
        }
        self.cell(x, y).map(|c| c.y * self.w + c.x)
    }
}

/// Grid cell of a polar point, or `None` outside the configured ranges.
pub fn assign_grid(p: &PolarPoint, cfg: &BevConfig) -> Option<Cell> {
    let x = bin_of(p.rho, cfg.w, cfg.w as f64 / (cfg.rho_max - cfg.rho_min), |i| cfg.rho_edge(i))?;
    let y = bin_of(p.theta, cfg.h, cfg.h as f64 / (cfg.theta_max - cfg.theta_min), |j| cfg.theta_edge(j))?;
    Some(Cell { x, y })
}

/// Height-span image: `max z − min z` of in-range points per cell, 0 for
/// empty cells and singletons.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub h: usize,
    pub w: usize,
    pub span: Vec<f32>,
}

impl BevImage {
    #[inline]
    pub fn get(&self, cell: Cell) -> f32 {
        self.span[cell.y * self.w + cell.x]
    }
}

#[inline]
fn span_of([lo, hi]: [f64; 2]) -> f32 {
    if hi >= lo {
        (hi - lo) as f32
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
struct SpanAccumulator {
    /// `(min z, max z)` per cell.
    bounds: Vec<[f64; 2]>,
    grid: GridIndexer,
}

impl SpanAccumulator {
    fn new(cfg: &BevConfig) -> Self {
        Self {
            bounds: vec![[f64::INFINITY, f64::NEG_INFINITY]; cfg.cells()],
            grid: GridIndexer::new(cfg),
        }
    }

    fn clear(&mut self) {
        self.bounds.fill([f64::INFINITY, f64::NEG_INFINITY]);
    }

    /// Pools `frames` seen from `target_pose`; errors on an empty window.
    fn add_frames<'a>(&mut self, frames: impl IntoIterator<Item = &'a ScanFrame>, target_pose: &Pose) -> Result<()> {
        let mut any = false;
        for f in frames {
            any = true;
            self.add_compensated(&f.cloud, &f.pose, target_pose)?;
        }
        if !any {
            return Err(Error::Config("BEV image needs at least one frame".into()));
        }
        Ok(())
    }

    fn add_cloud(&mut self, cloud: &PointCloud) {
        self.add_points(cloud, None);
    }

    /// Adds `cloud` captured at `pose_src` as seen from `pose_dst`; same
    /// coordinates as [`compensate`](crate::scan_io::compensate).
    fn add_compensated(&mut self, cloud: &PointCloud, pose_src: &Pose, pose_dst: &Pose) -> Result<()> {
        if pose_src == pose_dst {
            self.add_cloud(cloud);
            return Ok(());
        }
        let rel = relative_pose(pose_src, pose_dst)?;
        self.add_points(cloud, Some(&rel));
        Ok(())
    }

    /// Branch-free geometry per block, then the binning pass.
    fn add_points(&mut self, cloud: &PointCloud, rel: Option<&Pose>) {
        const BLOCK: usize = 256;
        let mut xyz = [[0.0f64; 3]; BLOCK];
        let mut rr = [0.0f64; BLOCK];
        let mut rho = [0.0f64; BLOCK];
        let mut ang = [0.0f64; BLOCK];
        for chunk in cloud.points.chunks(BLOCK) {
            let n = chunk.len();
            for (q, p) in xyz.iter_mut().zip(chunk) {
                *q = match rel {
                    Some(m) => m.transform_xyz(p.x, p.y, p.z).into(),
                    None => [p.x, p.y, p.z],
                };
            }
            for i in 0..n {
                let [x, y, _] = xyz[i];
                rr[i] = x * x + y * y;
                rho[i] = rr[i].sqrt();
                ang[i] = approx_atan2(y, x);
            }
            for i in 0..n {
                let [x, y, z] = xyz[i];
                if !(z > self.grid.z_min && z < self.grid.z_max) {
                    continue;
                }
                if let Some(c) = self.grid.cell_from_parts(x, y, rr[i], rho[i], ang[i]) {
                    let b = &mut self.bounds[c.y * self.grid.w + c.x];
                    b[0] = b[0].min(z);
                    b[1] = b[1].max(z);
                }
            }
        }
    }

    fn finish(self, cfg: &BevConfig) -> BevImage {
        let span = self.bounds.iter().map(|&b| span_of(b)).collect();
        BevImage {
            h: cfg.h,
            w: cfg.w,
            span,
        }
    }
}

/// Height-span image of a single cloud already in the target frame.
pub fn bev_image_of_cloud(cloud: &PointCloud, cfg: &BevConfig) -> Result<BevImage> {
    cfg.validate()?;
    let mut acc = SpanAccumulator::new(cfg);
    acc.add_cloud(cloud);
    Ok(acc.finish(cfg))
}

/// Pools `frames` in the sensor frame at `target_pose` and builds the
/// height-span image.
pub fn build_bev_image<'a, I>(frames: I, target_pose: &Pose, cfg: &BevConfig) -> Result<BevImage>
where
    I: IntoIterator<Item = &'a ScanFrame>,
{
    cfg.validate()?;
    let mut acc = SpanAccumulator::new(cfg);
    acc.add_frames(frames, target_pose)?;
    Ok(acc.finish(cfg))
}

/// Sentinel row of a [`BevIndexMap`].
pub const NO_CELL: [i32; 2] = [-1, -1];

/// `T(P→B)`: per-point `(x, y)` BEV cell, or `(-1, -1)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BevIndexMap {
    pub coords: Vec<[i32; 2]>,
}

impl BevIndexMap {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn build_t_p2b(cloud: &PointCloud, cfg: &BevConfig) -> BevIndexMap {
    let grid = GridIndexer::new(cfg);
    BevIndexMap {
        coords: cloud
            .points
            .iter()
            .map(|p| match grid.cell(p.x, p.y) {
                Some(c) => [c.x as i32, c.y as i32],
                None => NO_CELL,
            })
            .collect(),
    }
}

/// `N` channels of signed window differences, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevResidualMap {
    pub h: usize,
    pub w: usize,
    pub n: usize,
    pub channels: Vec<f32>,
}

impl BevResidualMap {
    pub fn zeros(cfg: &BevConfig) -> Self {
        Self {
            h: cfg.h,
            w: cfg.w,
            n: cfg.window_len,
            channels: vec![0.0; cfg.window_len * cfg.cells()],
        }
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.channels[k * n..(k + 1) * n]
    }

    fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.channels[k * n..(k + 1) * n]
    }
}

/// `I₁ − I₂` for one window pair seen from `current_pose`; all zeros while
/// the older window is still empty.
fn window_difference<'a>(
    q1: impl IntoIterator<Item = &'a ScanFrame>,
    q2: impl IntoIterator<Item = &'a ScanFrame>,
    current_pose: &Pose,
    scratch: &mut [SpanAccumulator; 2],
    out: &mut [f32],
) -> Result<()> {
    let mut q2 = q2.into_iter().peekable();
    if q2.peek().is_none() {
        out.fill(0.0);
        return Ok(());
    }
    let [a1, a2] = scratch;
    a1.clear();
    a2.clear();
    a1.add_frames(q1, current_pose)?;
    a2.add_frames(q2, current_pose)?;
    for ((d, &b1), &b2) in out.iter_mut().zip(&a1.bounds).zip(&a2.bounds) {
        *d = span_of(b1) - span_of(b2);
    }
    Ok(())
}

/// `a · b` with zero results normalized to `+0.0`.
#[inline]
fn signed(a: f32, b: f32) -> f32 {
    a * b + 0.0
}

#[inline]
fn channel_sign(k: usize, cfg: &BevConfig) -> f32 {
    if k < cfg.half_window() {
        1.0
    } else {
        -1.0
    }
}

/// Two adjacent temporal windows (`q1` newer, `q2` older) of `N / 2` frames
/// each, plus the `N`-channel residual shift register.
///
/// Channel `k` holds the window difference computed `k` pushes ago; the
/// first half carries `I₁ − I₂`, the second half `I₂ − I₁`, so every
/// difference stays in the map for `N` pushes.
#[derive(Debug, Clone)]
pub struct TemporalWindowPair {
    cfg: BevConfig,
    q1: VecDeque<ScanFrame>,
    q2: VecDeque<ScanFrame>,
    residual: BevResidualMap,
    last_index: Option<usize>,
    scratch: [SpanAccumulator; 2],
    diff: Vec<f32>,
}

impl TemporalWindowPair {
    pub fn new(cfg: BevConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            q1: VecDeque::with_capacity(cfg.half_window()),
            q2: VecDeque::with_capacity(cfg.half_window()),
            residual: BevResidualMap::zeros(&cfg),
            last_index: None,
            scratch: [SpanAccumulator::new(&cfg), SpanAccumulator::new(&cfg)],
            diff: vec![0.0; cfg.cells()],
            cfg,
        })
    }

    pub fn config(&self) -> &BevConfig {
        &self.cfg
    }

    pub fn newer(&self) -> impl Iterator<Item = &ScanFrame> {
        self.q1.iter()
    }

    pub fn older(&self) -> impl Iterator<Item = &ScanFrame> {
        self.q2.iter()
    }

    pub fn residual(&self) -> &BevResidualMap {
        &self.residual
    }

    /// Slides both windows by one frame and returns the updated residual.
    pub fn push_frame_and_residual(&mut self, frame: ScanFrame) -> Result<&BevResidualMap> {
        if let Some(last) = self.last_index {
            if frame.index <= last {
                return Err(Error::Order(format!(
                    "frame {} is not newer than buffered frame {last}",
                    frame.index
                )));
            }
        }
        let half = self.cfg.half_window();
        self.last_index = Some(frame.index);
        if self.q1.len() == half {
            let demoted = self.q1.pop_front().expect("q1 is full");
            if self.q2.len() == half {
                self.q2.pop_front();
            }
            self.q2.push_back(demoted);
        }
        self.q1.push_back(frame);

        let current_pose = self.q1.back().expect("just pushed").pose;
        window_difference(&self.q1, &self.q2, &current_pose, &mut self.scratch, &mut self.diff)?;

        let n = self.cfg.window_len;
        for k in (1..n).rev() {
            let flip = channel_sign(k, &self.cfg) * channel_sign(k - 1, &self.cfg);
            let (head, tail) = self.residual.channels.split_at_mut(k * self.cfg.cells());
            let src = &head[(k - 1) * self.cfg.cells()..];
            for (dst, &s) in tail[..self.cfg.cells()].iter_mut().zip(src) {
                *dst = signed(flip, s);
            }
        }
        self.residual.channel_mut(0).copy_from_slice(&self.diff);
        Ok(&self.residual)
    }
}

/// Recomputes the residual map for the last frame of `history` from scratch.
/// Matches [`TemporalWindowPair`] fed with the same frames, bit for bit.
pub fn stateless_bev_residual(history: &[ScanFrame], cfg: &BevConfig) -> Result<BevResidualMap> {
    cfg.validate()?;
    let mut out = BevResidualMap::zeros(cfg);
    let Some(last) = history.len().checked_sub(1) else {
        return Ok(out);
    };
    let half = cfg.half_window();
    let mut scratch = [SpanAccumulator::new(cfg), SpanAccumulator::new(cfg)];
    let mut d = vec![0.0; cfg.cells()];
    for k in 0..cfg.window_len {
        let Some(t) = last.checked_sub(k) else { break };
        let q1_start = (t + 1).saturating_sub(half);
        let q2_start = (t + 1).saturating_sub(2 * half);
        let q1 = &history[q1_start..=t];
        let q2 = &history[q2_start..q1_start];
        window_difference(q1, q2, &history[t].pose, &mut scratch, &mut d)?;
        let s = channel_sign(k, cfg);
        for (dst, &v) in out.channel_mut(k).iter_mut().zip(&d) {
            *dst = signed(s, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn indexer_matches_assign_grid_on_edges() {
        let cfg = BevConfig::default();
        let grid = GridIndexer::new(&cfg);
        for j in 0..=cfg.h {
            for d in [-1e-12, 0.0, 1e-12, 1e-6] {
                let th = cfg.theta_edge(j) + d;
                for rho in [0.0, 1e-9, 7.3, cfg.rho_edge(100), 50.0 - 1e-12, 50.0] {
                    let p = Point::new(rho * th.cos(), rho * th.sin(), 0.0, 0.0);
                    assert_eq!(grid.cell(p.x, p.y), assign_grid(&to_polar(&p), &cfg), "{p:?}");
                }
            }
        }
    }

    fn frame(i: usize, pts: Vec<Point>) -> ScanFrame {
        ScanFrame::new(i, PointCloud::new(pts), Pose::identity())
    }

    #[test]
    fn polar_axis_cases() {
        assert_eq!(
            to_polar(&Point::new(1.0, 0.0, 0.5, 0.0)),
            PolarPoint { rho: 1.0, theta: 0.0, z: 0.5 }
        );
        let p = to_polar(&Point::new(0.0, 2.0, -1.0, 0.0));
        assert_eq!((p.rho, p.theta, p.z), (2.0, FRAC_PI_2, -1.0));
        assert_eq!(to_polar(&Point::default()).theta, 0.0);
    }

    #[test]
    fn grid_edges() {
        let cfg = BevConfig::default();
        let lower = PolarPoint { rho: cfg.rho_min, theta: cfg.theta_min, z: 0.0 };
        assert_eq!(assign_grid(&lower, &cfg), Some(Cell { x: 0, y: 0 }));
        let upper = PolarPoint { rho: cfg.rho_max, theta: 0.0, z: 0.0 };
        assert_eq!(assign_grid(&upper, &cfg), None);
        let seam = PolarPoint { rho: 1.0, theta: PI, z: 0.0 };
        assert_eq!(assign_grid(&seam, &cfg), None);
        let inner = PolarPoint { rho: cfg.rho_max - 1e-9, theta: cfg.theta_max - 1e-12, z: 0.0 };
        assert_eq!(assign_grid(&inner, &cfg), Some(Cell { x: cfg.w - 1, y: cfg.h - 1 }));
    }

    #[test]
    fn span_cases() {
        let cfg = BevConfig::default();
        let f = frame(0, vec![Point::new(10.0, 0.0, -1.0, 0.0)]);
        let img = build_bev_image([&f], &Pose::identity(), &cfg).unwrap();
        assert!(img.span.iter().all(|&v| v == 0.0));

        let f = frame(0, vec![Point::new(10.0, 0.0, -1.0, 0.0), Point::new(10.0, 0.0, 1.0, 0.0)]);
        let img = build_bev_image([&f], &Pose::identity(), &cfg).unwrap();
        let c = assign_grid(&to_polar(&f.cloud.points[0]), &cfg).unwrap();
        assert_eq!(img.get(c), 2.0);

        // z = 3 lies outside (-4, 2)
        let f = frame(0, vec![Point::new(10.0, 0.0, -1.0, 0.0), Point::new(10.0, 0.0, 3.0, 0.0)]);
        let img = build_bev_image([&f], &Pose::identity(), &cfg).unwrap();
        assert_eq!(img.get(c), 0.0);
        let f = frame(0, vec![Point::new(10.0, 0.0, -4.0, 0.0), Point::new(10.0, 0.0, 1.5, 0.0)]);
        assert_eq!(build_bev_image([&f], &Pose::identity(), &cfg).unwrap().get(c), 0.0);

        let empty: [&ScanFrame; 0] = [];
        assert!(matches!(
            build_bev_image(empty, &Pose::identity(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn t_p2b_sentinels() {
        let cfg = BevConfig::default();
        assert!(build_t_p2b(&PointCloud::default(), &cfg).is_empty());
        let m = build_t_p2b(&PointCloud::new(vec![Point::new(60.0, 0.0, 0.0, 0.0)]), &cfg);
        assert_eq!(m.coords, vec![NO_CELL]);
    }

    #[test]
    fn config_validation() {
        let bad = BevConfig { window_len: 7, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BevConfig { rho_max: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identical_windows_give_zero_channel() {
        let cfg = BevConfig { window_len: 4, ..Default::default() };
        let pts = vec![Point::new(10.0, 1.0, -1.0, 0.0), Point::new(10.0, 1.0, 0.5, 0.0)];
        let mut tw = TemporalWindowPair::new(cfg).unwrap();
        for i in 0..6 {
            let r = tw.push_frame_and_residual(frame(i, pts.clone())).unwrap();
            assert!(r.channel(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn warm_up_leaves_trailing_channels_zero() {
        let cfg = BevConfig { window_len: 4, ..Default::default() };
        let mut tw = TemporalWindowPair::new(cfg).unwrap();
        for i in 0..3 {
            // a mover stepping outward so every difference is non-zero
            let x = 10.0 + i as f64;
            let f = frame(i, vec![Point::new(x, 0.0, -1.0, 0.0), Point::new(x, 0.0, 1.0, 0.0)]);
            let r = tw.push_frame_and_residual(f).unwrap();
            for k in (i + 1)..4 {
                assert!(r.channel(k).iter().all(|&v| v == 0.0), "push {i} channel {k}");
            }
        }
    }

    #[test]
    fn out_of_order_rejected() {
        let mut tw = TemporalWindowPair::new(BevConfig::default()).unwrap();
        tw.push_frame_and_residual(frame(3, vec![])).unwrap();
        assert!(matches!(
            tw.push_frame_and_residual(frame(3, vec![])),
            Err(Error::Order(_))
        ));
    }

    #[test]
    fn windows_hold_half_each() {
        let cfg = BevConfig { window_len: 4, ..Default::default() };
        let mut tw = TemporalWindowPair::new(cfg).unwrap();
        for i in 0..7 {
            tw.push_frame_and_residual(frame(i, vec![])).unwrap();
        }
        let q1: Vec<_> = tw.newer().map(|f| f.index).collect();
        let q2: Vec<_> = tw.older().map(|f| f.index).collect();
        assert_eq!(q1, vec![5, 6]);
        assert_eq!(q2, vec![3, 4]);
    }
}
