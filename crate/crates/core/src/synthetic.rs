//! Deterministic synthetic LiDAR sequences with exact moving labels.
//!
//! Surfaces (ground plane, static boxes, mover boxes) are sampled once per
//! sequence from the seed; movers translate rigidly every frame and every
//! world point is re-expressed in the ego sensor frame. Occlusion is left to
//! the range projection's nearest-wins rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan_io::{LabelSet, MovingClassSet, Point, PointCloud, Pose, ScanFrame};

/// Semantic class written for ground points.
pub const CLASS_GROUND: u16 = 40;
/// Semantic class written for static box points.
pub const CLASS_STATIC: u16 = 50;
/// Default semantic class for mover points (moving car).
pub const CLASS_MOVING_CAR: u16 = 252;

/// Sensor mounting height above the ground plane, meters.
pub const SENSOR_HEIGHT: f64 = 1.73;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl BoxSpec {
    /// A box of `size` resting on the ground with its footprint centred at
    /// `(x, y)`.
    pub fn on_ground(x: f64, y: f64, size: [f64; 3]) -> Self {
        Self {
            center: [x, y, -SENSOR_HEIGHT + size[2] / 2.0],
            size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoverSpec {
    #[serde(flatten)]
    pub body: BoxSpec,
    /// World-frame displacement per frame, meters.
    pub velocity: [f64; 3],
    #[serde(default = "default_mover_class")]
    pub class_id: u16,
}

fn default_mover_class() -> u16 {
    CLASS_MOVING_CAR
}

/// Constant-velocity ego motion: frame `t` sits at `t · velocity` with yaw
/// `t · yaw_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoMotion {
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw_rate: f64,
}

impl EgoMotion {
    pub fn pose_at(&self, t: usize) -> Pose {
        let t = t as f64;
        Pose::from_yaw_translation(
            t * self.yaw_rate,
            t * self.velocity[0],
            t * self.velocity[1],
            t * self.velocity[2],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Ground covers `[-extent, extent]²` around the world origin.
    pub ground_extent: f64,
    /// Ground samples per square meter.
    pub ground_density: f64,
    /// Box-surface samples per square meter.
    pub surface_density: f64,
    /// Mover-surface samples per square meter; `surface_density` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mover_density: Option<f64>,
    #[serde(default)]
    pub static_boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub movers: Vec<MoverSpec>,
    #[serde(default)]
    pub ego: EgoMotion,
    /// Explicit per-frame poses; overrides `ego` when present.
    #[serde(skip)]
    pub ego_poses: Option<Vec<Pose>>,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::default_mover(0)
    }
}

impl SceneSpec {
    /// Ground plus a handful of static boxes; the ego drives forward at
    /// 0.5 m/frame.
    pub fn static_world(seed: u64) -> Self {
        Self {
            ground_extent: 40.0,
            ground_density: 8.0,
            surface_density: 60.0,
            mover_density: None,
            static_boxes: vec![
                BoxSpec::on_ground(15.0, 8.0, [6.0, 3.0, 3.0]),
                BoxSpec::on_ground(25.0, -10.0, [4.0, 8.0, 5.0]),
                BoxSpec::on_ground(-12.0, 6.0, [3.0, 3.0, 2.0]),
                BoxSpec::on_ground(5.0, -14.0, [10.0, 2.0, 4.0]),
            ],
            movers: Vec::new(),
            ego: EgoMotion {
                velocity: [0.5, 0.0, 0.0],
                yaw_rate: 0.0,
            },
            ego_poses: None,
            frames: 10,
            seed,
        }
    }

    /// A 4 × 2 × 1.5 m car at 10 m ahead of a static ego, driving away at
    /// 1 m/frame, over a static backdrop.
    pub fn default_mover(seed: u64) -> Self {
        let mut s = Self::static_world(seed);
        s.ego = EgoMotion::default();
        s.mover_density = Some(1500.0);
        s.movers = vec![MoverSpec {
            body: BoxSpec::on_ground(10.0, 0.0, [4.0, 2.0, 1.5]),
            velocity: [1.0, 0.0, 0.0],
            class_id: CLASS_MOVING_CAR,
        }];
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("a sequence needs >= 2 frames, got {}", self.frames)));
        }
        if !(self.ground_extent > 0.0) {
            return Err(Error::Config("ground extent must be positive".into()));
        }
        if !(self.ground_density > 0.0 && self.surface_density > 0.0 && self.mover_density() > 0.0) {
            return Err(Error::Config("sampling densities must be positive".into()));
        }
        let boxes = self.static_boxes.iter().chain(self.movers.iter().map(|m| &m.body));
        for b in boxes {
            if b.size.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config(format!("box size must be positive: {:?}", b.size)));
            }
        }
        if let Some(p) = &self.ego_poses {
            if p.len() != self.frames {
                return Err(Error::Config(format!(
                    "{} explicit ego poses for {} frames",
                    p.len(),
                    self.frames
                )));
            }
        }
        Ok(())
    }

    pub fn mover_density(&self) -> f64 {
        self.mover_density.unwrap_or(self.surface_density)
    }

    pub fn pose_at(&self, t: usize) -> Pose {
        match &self.ego_poses {
            Some(p) => p[t],
            None => self.ego.pose_at(t),
        }
    }
}

/// Frames of a synthetic sequence, with poses and exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<ScanFrame>,
}

struct Sample {
    xyz: [f64; 3],
    e: f64,
}

fn sample_count(area: f64, density: f64) -> usize {
    (area * density).round() as usize
}

/// Uniform samples on the five exposed faces of a box (the bottom face
/// rests on the ground and is skipped).
fn sample_box_surface(b: &BoxSpec, density: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Sample>) {
    let [cx, cy, cz] = b.center;
    let [sx, sy, sz] = b.size;
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    // (fixed axis, fixed value, free extents)
    let faces: [(usize, f64, f64, f64); 5] = [
        (0, cx - hx, sy, sz),
        (0, cx + hx, sy, sz),
        (1, cy - hy, sx, sz),
        (1, cy + hy, sx, sz),
        (2, cz + hz, sx, sy),
    ];
    for (axis, fixed, a, bb) in faces {
        for _ in 0..sample_count(a * bb, density) {
            let s: f64 = rng.gen_range(-0.5..0.5);
            let t: f64 = rng.gen_range(-0.5..0.5);
            let xyz = match axis {
                0 => [fixed, cy + s * sy, cz + t * sz],
                1 => [cx + s * sx, fixed, cz + t * sz],
                _ => [cx + s * sx, cy + t * sy, fixed],
            };
            out.push(Sample {
                xyz,
                e: rng.gen_range(0.0..1.0),
            });
        }
    }
}

/// Builds every frame of the sequence described by `spec`.
pub fn generate_sequence(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut fixed = Vec::new();
    let ext = spec.ground_extent;
    for _ in 0..sample_count(4.0 * ext * ext, spec.ground_density) {
        fixed.push(Sample {
            xyz: [rng.gen_range(-ext..ext), rng.gen_range(-ext..ext), -SENSOR_HEIGHT],
            e: rng.gen_range(0.0..1.0),
        });
    }
    let n_ground = fixed.len();
    for b in &spec.static_boxes {
        sample_box_surface(b, spec.surface_density, &mut rng, &mut fixed);
    }
    let mut fixed_classes = vec![CLASS_GROUND; n_ground];
    fixed_classes.resize(fixed.len(), CLASS_STATIC);

    let movers: Vec<(Vec<Sample>, &MoverSpec)> = spec
        .movers
        .iter()
        .map(|m| {
            let mut pts = Vec::new();
            sample_box_surface(&m.body, spec.mover_density(), &mut rng, &mut pts);
            (pts, m)
        })
        .collect();

    let moving = MovingClassSet::new(spec.movers.iter().map(|m| m.class_id));
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let to_sensor = spec.pose_at(t).inverse();
        let mut points = Vec::with_capacity(fixed.len());
        let mut raw = Vec::with_capacity(fixed.len());
        for (s, &c) in fixed.iter().zip(&fixed_classes) {
            let (x, y, z) = to_sensor.transform_xyz(s.xyz[0], s.xyz[1], s.xyz[2]);
            points.push(Point::new(x, y, z, s.e));
            raw.push(c as u32);
        }
        for (inst, (pts, m)) in movers.iter().enumerate() {
            let shift = m.velocity.map(|v| v * t as f64);
            for s in pts {
                let (x, y, z) = to_sensor.transform_xyz(
                    s.xyz[0] + shift[0],
                    s.xyz[1] + shift[1],
                    s.xyz[2] + shift[2],
                );
                points.push(Point::new(x, y, z, s.e));
                raw.push(((inst as u32 + 1) << 16) | m.class_id as u32);
            }
        }
        let labels = LabelSet::from_raw(&raw, &moving);
        frames.push(ScanFrame::new(t, PointCloud::new(points), spec.pose_at(t)).with_labels(labels)?);
    }
    Ok(SyntheticSequence { frames })
}

/// Expected range residual `|r1 − r0| / r0` of a pixel whose return moves
/// from `r0` to `r1`.
pub fn analytic_rv_residual(r0: f64, r1: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(Error::Degenerate(format!("reference range must be positive, got {r0}")));
    }
    Ok((r1 - r0).abs() / r0)
}

/// A random cloud of roughly `n` points spread over a ground plane and a
/// few random boxes, seen from a random pose. Useful for projection
/// stress tests.
pub fn random_scene_frame(n: usize, seed: u64) -> Result<ScanFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = 35.0;
    let boxes: Vec<BoxSpec> = (0..6)
        .map(|_| {
            BoxSpec::on_ground(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                [rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0), rng.gen_range(1.0..4.0)],
            )
        })
        .collect();
    let box_area: f64 = boxes
        .iter()
        .map(|b| 2.0 * (b.size[0] + b.size[1]) * b.size[2] + b.size[0] * b.size[1])
        .sum();
    let ground_area = 4.0 * extent * extent;
    let density = n as f64 / (ground_area + box_area);
    let spec = SceneSpec {
        ground_extent: extent,
        ground_density: density,
        surface_density: density,
        mover_density: None,
        static_boxes: boxes,
        movers: Vec::new(),
        ego: EgoMotion::default(),
        ego_poses: Some(vec![
            Pose::from_yaw_translation(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                0.0,
            );
            2
        ]),
        frames: 2,
        seed: rng.gen(),
    };
    Ok(generate_sequence(&spec)?.frames.swap_remove(0))
}
