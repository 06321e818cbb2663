//! Streaming per-frame pipeline: range image, `T(R→P)`, RV residual, BEV
//! residual, `T(P→B)` and `T(B→R)`.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev_view::{build_t_p2b, BevConfig, BevIndexMap, BevResidualMap, TemporalWindowPair};
use crate::cross_view::{compose_b2r, CrossViewMap};
use crate::error::{Error, Result};
use crate::range_view::{
    build_range_image, build_rv_residual_from_image, sample_delta_t, strided_past_indices,
    ProjectionStats, RangeImage, RangeIndexMap, RvConfig, RvResidualMap,
};
use crate::bev_view::NO_CELL;
use crate::range_view::project_to_uv;
use crate::scam::{
    devoxelize, point_mlp, point_mlp_specs, refine_head, refine_head_specs, scam_forward, scam_specs,
    voxelize, HeadFusion, PointFeatures, VoxelConfig,
};
use crate::tensor::Tensor;
use crate::weights::WeightSet;
use crate::scan_io::{MovingClassSet, ScanFrame, DEFAULT_MOVING_CLASSES};

/// Residual below which an RV pixel counts as "no motion" in the stats.
pub const NEAR_ZERO: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub rv: RvConfig,
    pub bev: BevConfig,
    pub voxel: VoxelConfig,
    pub moving_classes: Vec<u16>,
    /// Candidate frame strides; one is drawn per frame.
    pub stride_options: Vec<usize>,
    /// Number of past frames `k` in the RV residual.
    pub rv_past_frames: usize,
    pub seed: u64,
    /// Worker threads for frame-parallel stages; 0 uses all cores.
    pub workers: usize,
    /// Weight manifest for `refine`; random weights from `seed` when absent.
    pub weights: Option<PathBuf>,
    pub gate_sigmoid: bool,
    pub head_fusion: HeadFusion,
    /// Hidden width of the per-point MLP path.
    pub mlp_hidden: usize,
    /// Output width of the per-point MLP path.
    pub mlp_out: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rv: RvConfig::default(),
            bev: BevConfig::default(),
            voxel: VoxelConfig::default(),
            moving_classes: DEFAULT_MOVING_CLASSES.to_vec(),
            stride_options: vec![1],
            rv_past_frames: 1,
            seed: 0,
            workers: 1,
            weights: None,
            gate_sigmoid: false,
            head_fusion: HeadFusion::Concat,
            mlp_hidden: 16,
            mlp_out: 8,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.rv.validate()?;
        self.bev.validate()?;
        self.voxel.validate()?;
        if self.rv_past_frames == 0 {
            return Err(Error::Config("rv_past_frames must be at least 1".into()));
        }
        if self.stride_options.is_empty() || self.stride_options.contains(&0) {
            return Err(Error::Config("stride_options must be non-empty and positive".into()));
        }
        if self.mlp_hidden == 0 || self.mlp_out == 0 {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        if self.head_fusion == HeadFusion::Add && self.mlp_out != refine_channels(self) {
            return Err(Error::Config(format!(
                "additive head fusion needs mlp_out = {}",
                refine_channels(self)
            )));
        }
        if let Some(w) = &self.weights {
            if !w.exists() {
                return Err(Error::Config(format!("weights manifest {} does not exist", w.display())));
            }
        }
        Ok(())
    }

    pub fn moving_set(&self) -> MovingClassSet {
        MovingClassSet::new(self.moving_classes.iter().copied())
    }

    pub fn max_stride(&self) -> usize {
        self.stride_options.iter().copied().max().unwrap_or(1)
    }

    /// Per-frame random source, independent of processing order.
    pub fn frame_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Stride drawn for frame `index`.
    pub fn stride_for(&self, index: usize) -> Result<usize> {
        sample_delta_t(&mut self.frame_rng(index), &self.stride_options)
    }
}

/// Range image, `T(R→P)` and projection counters for one frame.
#[derive(Debug, Clone)]
pub struct RvProjection {
    pub image: RangeImage,
    pub t_r2p: RangeIndexMap,
    pub stats: ProjectionStats,
}

pub fn project_rv(frame: &ScanFrame, cfg: &RvConfig) -> Result<RvProjection> {
    let (image, t_r2p, stats) = build_range_image(&frame.cloud, cfg)?;
    Ok(RvProjection { image, t_r2p, stats })
}

/// `k`-channel RV residual of `current`. Channels whose past frame does not
/// exist yet (start of the sequence) are zero and not doubly valid.
pub fn rv_residual_padded(
    current: &ScanFrame,
    image: &RangeImage,
    past: &[&ScanFrame],
    k: usize,
    cfg: &RvConfig,
) -> Result<RvResidualMap> {
    let npix = cfg.pixels();
    let mut out = if past.is_empty() {
        RvResidualMap {
            h: cfg.h,
            w: cfg.w,
            k: 0,
            values: Vec::new(),
            doubly_valid: Vec::new(),
        }
    } else {
        build_rv_residual_from_image(current, image, past, cfg)?
    };
    out.values.resize(k * npix, 0.0);
    out.doubly_valid.resize(k * npix, false);
    out.k = k;
    Ok(out)
}

/// Per-frame counters, free of timings so reruns compare byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub points: usize,
    pub valid_pixels: usize,
    pub occluded: usize,
    pub out_of_fov: usize,
    pub zero_range: usize,
    pub stride: usize,
    pub past_frames: usize,
    pub doubly_valid: usize,
    pub near_zero: usize,
    pub near_zero_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bev_nonzero_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bev_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_view_pixels: Option<usize>,
}

impl FrameStats {
    pub fn record_rv(&mut self, proj: &RvProjection) {
        self.points = proj.stats.points;
        self.valid_pixels = proj.t_r2p.valid_count();
        self.occluded = proj.stats.occluded;
        self.out_of_fov = proj.stats.out_of_fov;
        self.zero_range = proj.stats.zero_range;
    }

    pub fn record_residual(&mut self, res: &RvResidualMap) {
        let (valid, below) = res.count_below(NEAR_ZERO);
        self.doubly_valid = valid;
        self.near_zero = below;
        self.near_zero_fraction = (valid > 0).then(|| below as f64 / valid as f64);
    }

    pub fn record_bev(&mut self, res: &BevResidualMap) {
        self.bev_nonzero_cells = Some(res.channel(0).iter().filter(|v| **v != 0.0).count());
    }
}

/// Everything the pipeline produces for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub index: usize,
    pub rv: RvProjection,
    pub rv_residual: RvResidualMap,
    pub bev_residual: BevResidualMap,
    pub t_p2b: BevIndexMap,
    pub t_b2r: CrossViewMap,
    pub stats: FrameStats,
}

/// Feeds frames in order and keeps the history both residuals need.
#[derive(Debug, Clone)]
pub struct FramePipeline {
    cfg: PipelineConfig,
    history: VecDeque<ScanFrame>,
    windows: TemporalWindowPair,
}

impl FramePipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            windows: TemporalWindowPair::new(cfg.bev)?,
            history: VecDeque::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn process(&mut self, frame: ScanFrame) -> Result<FrameOutput> {
        let cfg = &self.cfg;
        let index = frame.index;
        let rv = project_rv(&frame, &cfg.rv)?;

        let stride = cfg.stride_for(index)?;
        let wanted = strided_past_indices(index, stride, cfg.rv_past_frames);
        let past: Vec<&ScanFrame> = wanted
            .iter()
            .filter_map(|i| self.history.iter().find(|f| f.index == *i))
            .collect();
        let rv_residual = rv_residual_padded(&frame, &rv.image, &past, cfg.rv_past_frames, &cfg.rv)?;

        let t_p2b = build_t_p2b(&frame.cloud, &cfg.bev);
        let t_b2r = compose_b2r(&rv.t_r2p, &t_p2b, &cfg.bev)?;

        let mut stats = FrameStats {
            frame: index,
            stride,
            past_frames: past.len(),
            bev_points: Some(t_p2b.coords.iter().filter(|c| c[0] >= 0).count()),
            cross_view_pixels: Some(t_b2r.valid_count()),
            ..Default::default()
        };
        stats.record_rv(&rv);
        stats.record_residual(&rv_residual);

        let keep = cfg.max_stride() * cfg.rv_past_frames;
        self.history.push_back(frame.clone());
        while self.history.len() > keep {
            self.history.pop_front();
        }

        let bev_residual = self.windows.push_frame_and_residual(frame)?.clone();
        stats.record_bev(&bev_residual);

        Ok(FrameOutput {
            index,
            rv,
            rv_residual,
            bev_residual,
            t_p2b,
            t_b2r,
            stats,
        })
    }
}

/// Semantic class written for points predicted as moving.
pub const PRED_MOVING: u16 = 251;
/// Semantic class written for points predicted as static.
pub const PRED_STATIC: u16 = 9;

/// Width of the per-point feature vector fed to the refinement stage:
/// `x, y, z, r, e`, the RV residual channels at the point's pixel and the
/// BEV residual channels at its cell.
pub fn refine_channels(cfg: &PipelineConfig) -> usize {
    5 + cfg.rv_past_frames + cfg.bev.window_len
}

/// Per-point features gathered from the frame's residual maps.
pub fn point_features(frame: &ScanFrame, out: &FrameOutput, cfg: &PipelineConfig) -> Result<PointFeatures> {
    let c = refine_channels(cfg);
    let npix = cfg.rv.pixels();
    let cells = cfg.bev.cells();
    let mut data = Vec::with_capacity(frame.cloud.len() * c);
    for (i, p) in frame.cloud.points.iter().enumerate() {
        data.extend([p.x as f32, p.y as f32, p.z as f32, p.range() as f32, p.e as f32]);
        let px = if p.range() > 0.0 { project_to_uv(p, &cfg.rv)? } else { None };
        for k in 0..out.rv_residual.k {
            data.push(px.map_or(0.0, |px| out.rv_residual.values[k * npix + px.v * cfg.rv.w + px.u]));
        }
        let cell = out.t_p2b.coords[i];
        for k in 0..out.bev_residual.n {
            data.push(if cell == NO_CELL {
                0.0
            } else {
                out.bev_residual.channels[k * cells + cell[1] as usize * cfg.bev.w + cell[0] as usize]
            });
        }
    }
    PointFeatures::new(frame.cloud.len(), c, data)
}

/// Tensor names and shapes of the refinement stage for `cfg`.
pub fn refine_specs(cfg: &PipelineConfig) -> Vec<(String, Vec<usize>)> {
    let c = refine_channels(cfg);
    let mut specs = scam_specs(c);
    specs.extend(point_mlp_specs(c, cfg.mlp_hidden, cfg.mlp_out));
    specs.extend(refine_head_specs(c, cfg.mlp_out, 2, cfg.head_fusion));
    specs
}

/// Voxel attention plus MLP path and a two-class head; returns per-point
/// scores `N × 2` (static, moving).
pub fn refine_frame(
    frame: &ScanFrame,
    out: &FrameOutput,
    weights: &WeightSet,
    cfg: &PipelineConfig,
) -> Result<Tensor> {
    let feats = point_features(frame, out, cfg)?;
    let grid = voxelize(&frame.cloud, &feats, &cfg.voxel)?;
    let refined = devoxelize(&scam_forward(&grid, weights)?, &frame.cloud)?;
    let mlp = point_mlp(&feats, weights)?;
    refine_head(&refined, &mlp, weights, cfg.head_fusion)
}

/// Raw label records for predicted classes (0 static, 1 moving).
pub fn prediction_labels(classes: &[usize]) -> Vec<u32> {
    classes
        .iter()
        .map(|&c| if c == 1 { PRED_MOVING as u32 } else { PRED_STATIC as u32 })
        .collect()
}

/// Moving flag of a prediction record: the prediction class or any
/// configured moving class.
pub fn prediction_is_moving(raw: u32, moving: &MovingClassSet) -> bool {
    let class = (raw & 0xFFFF) as u16;
    class == PRED_MOVING || moving.contains(class)
}
