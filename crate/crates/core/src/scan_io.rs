//! KITTI-odometry / SemanticKITTI ingestion and rigid ego-motion compensation.
//!
//! On-disk layouts:
//!
//! * scans: little-endian `f32` quadruples `(x, y, z, e)`, no header;
//! * poses: one row-major 3×4 matrix per line (left-camera frame);
//! * calibration: `KEY: v0 .. v11` lines, of which only `Tr` is read;
//! * labels: one little-endian `u32` per point, semantic class in the low
//!   16 bits and instance id in the high 16 bits.
//!
//! In memory, coordinates are `f64` so that compensation round trips stay
//! well below the `f32` storage precision.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// A single LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Return intensity.
    pub e: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, e: f64) -> Self {
        Self { x, y, z, e }
    }

    /// Euclidean distance to the sensor origin.
    #[inline]
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.e.is_finite()
    }
}

/// An ordered scan. The position of a point in `points` is its identity for
/// every index matrix built downstream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Serializes to the KITTI `.bin` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.e] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 16 != 0 {
            return Err(Error::Format(format!(
                "scan length {} is not a multiple of 16 bytes",
                bytes.len()
            )));
        }
        let mut points = Vec::with_capacity(bytes.len() / 16);
        for (i, rec) in bytes.chunks_exact(16).enumerate() {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            let p = Point::new(f(0), f(1), f(2), f(3));
            if !p.is_finite() {
                return Err(Error::Format(format!("point {i} has a non-finite component")));
            }
            points.push(p);
        }
        Ok(Self { points })
    }
}

/// A rigid sensor pose (sensor frame → world frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    m: Matrix4<f64>,
}

const RIGID_TOL: f64 = 1e-6;

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
        }
    }

    /// Validates that `m` is a proper rigid transform.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Math("pose has non-finite entries".into()));
        }
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::Math("pose last row is not (0, 0, 0, 1)".into()));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > RIGID_TOL {
            return Err(Error::Math(format!(
                "pose rotation is not orthonormal (deviation {ortho:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > RIGID_TOL {
            return Err(Error::Math(format!("pose rotation has determinant {det}")));
        }
        Ok(Self { m })
    }

    pub fn from_rotation_translation(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::from_matrix(m)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        Self { m }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, x: f64, y: f64, z: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let mut m = Matrix4::identity();
        m[(0, 0)] = c;
        m[(0, 1)] = -s;
        m[(1, 0)] = s;
        m[(1, 1)] = c;
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    /// Closed-form rigid inverse `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> Pose {
        let r = self.m.fixed_view::<3, 3>(0, 0).transpose();
        let t = self.m.fixed_view::<3, 1>(0, 3).into_owned();
        let ti = -(r * t);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&ti);
        Pose { m }
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose { m: self.m * rhs.m }
    }

    #[inline]
    pub fn transform_xyz(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let m = &self.m;
        (
            m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)] * z + m[(0, 3)],
            m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)] * z + m[(1, 3)],
            m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)] * z + m[(2, 3)],
        )
    }

    /// First three rows, row-major, as written in KITTI pose files.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[4 * r + c] = self.m[(r, c)];
            }
        }
        out
    }
}

fn matrix_from_3x4(v: &[f64]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            m[(r, c)] = v[4 * r + c];
        }
    }
    m
}

/// SemanticKITTI moving classes (252..=259).
pub const DEFAULT_MOVING_CLASSES: [u16; 8] = [252, 253, 254, 255, 256, 257, 258, 259];

/// The set of semantic class ids treated as "moving".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovingClassSet(BTreeSet<u16>);

impl Default for MovingClassSet {
    fn default() -> Self {
        Self(DEFAULT_MOVING_CLASSES.into_iter().collect())
    }
}

impl MovingClassSet {
    pub fn new(ids: impl IntoIterator<Item = u16>) -> Self {
        Self(ids.into_iter().collect())
    }

    pub fn contains(&self, class_id: u16) -> bool {
        self.0.contains(&class_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.0.iter().copied()
    }
}

/// Per-point semantic/instance labels plus the derived moving flag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    pub class_id: Vec<u16>,
    pub instance_id: Vec<u16>,
    pub moving: Vec<bool>,
}

impl LabelSet {
    pub fn from_raw(raw: &[u32], moving_classes: &MovingClassSet) -> Self {
        let class_id: Vec<u16> = raw.iter().map(|&v| (v & 0xFFFF) as u16).collect();
        let instance_id = raw.iter().map(|&v| (v >> 16) as u16).collect();
        let moving = class_id.iter().map(|&c| moving_classes.contains(c)).collect();
        Self {
            class_id,
            instance_id,
            moving,
        }
    }

    pub fn len(&self) -> usize {
        self.class_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_id.is_empty()
    }

    pub fn to_raw(&self) -> Vec<u32> {
        self.class_id
            .iter()
            .zip(&self.instance_id)
            .map(|(&c, &i)| ((i as u32) << 16) | c as u32)
            .collect()
    }
}

/// One scan of a sequence together with its pose and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub labels: Option<LabelSet>,
    pub index: usize,
}

impl ScanFrame {
    pub fn new(index: usize, cloud: PointCloud, pose: Pose) -> Self {
        Self {
            cloud,
            pose,
            labels: None,
            index,
        }
    }

    pub fn with_labels(mut self, labels: LabelSet) -> Result<Self> {
        if labels.len() != self.cloud.len() {
            return Err(Error::Alignment(format!(
                "frame {}: {} labels for {} points",
                self.index,
                labels.len(),
                self.cloud.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    PointCloud::from_bytes(&read_bytes(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cloud.to_bytes()).map_err(|e| Error::io(path, e))
}

fn parse_floats(line: &str, expect: usize, what: &str) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expect {
        return Err(Error::Format(format!(
            "{what}: expected {expect} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Parses the `Tr:` entry of a KITTI calibration file.
pub fn parse_calib_tr(text: &str) -> Result<Matrix4<f64>> {
    for line in text.lines() {
        if let Some((key, rest)) = line.split_once(':') {
            if key.trim() == "Tr" {
                let v = parse_floats(rest, 12, "calib Tr")?;
                return Ok(matrix_from_3x4(&v));
            }
        }
    }
    Err(Error::Format("calibration has no Tr entry".into()))
}

/// Converts camera-frame poses into sensor-frame poses:
/// `P_velo = Tr⁻¹ · P_cam · Tr`.
pub fn parse_poses(pose_text: &str, tr: &Matrix4<f64>) -> Result<Vec<Pose>> {
    let tr_inv = tr
        .try_inverse()
        .ok_or_else(|| Error::Math("calibration Tr is not invertible".into()))?;
    let mut poses = Vec::new();
    for (lineno, line) in pose_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, 12, &format!("pose line {}", lineno + 1))?;
        let p_cam = matrix_from_3x4(&v);
        let mut m = tr_inv * p_cam * tr;
        // homogeneous row is exact by definition
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        poses.push(Pose::from_matrix(m)?);
    }
    Ok(poses)
}

pub fn read_poses(pose_path: impl AsRef<Path>, calib_path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let tr = parse_calib_tr(&read_text(calib_path.as_ref())?)?;
    parse_poses(&read_text(pose_path.as_ref())?, &tr)
}

/// Writes sensor-frame poses as a KITTI pose file, assuming `Tr = I`.
pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a calibration file whose `Tr` is the identity.
pub fn write_identity_calib(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "Tr: 1 0 0 0 0 1 0 0 0 0 1 0").map_err(|e| Error::io(path, e))
}

pub fn read_raw_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: label length {} is not a multiple of 4 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_labels(path: impl AsRef<Path>, moving_classes: &MovingClassSet) -> Result<LabelSet> {
    Ok(LabelSet::from_raw(&read_raw_labels(path)?, moving_classes))
}

pub fn write_raw_labels(path: impl AsRef<Path>, raw: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelSet) -> Result<()> {
    write_raw_labels(path, &labels.to_raw())
}

/// Re-expresses `cloud` (captured at `pose_src`) in the sensor frame at
/// `pose_dst`. Intensities and point order are untouched.
pub fn compensate(cloud: &PointCloud, pose_src: &Pose, pose_dst: &Pose) -> Result<PointCloud> {
    if pose_src == pose_dst {
        return Ok(cloud.clone());
    }
    let rel = relative_pose(pose_src, pose_dst)?;
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| {
                let (x, y, z) = rel.transform_xyz(p.x, p.y, p.z);
                Point::new(x, y, z, p.e)
            })
            .collect(),
    })
}

/// `pose_dst⁻¹ · pose_src`, guarded against degenerate inputs.
pub fn relative_pose(pose_src: &Pose, pose_dst: &Pose) -> Result<Pose> {
    let r = pose_dst.m.fixed_view::<3, 3>(0, 0);
    if r.determinant().abs() < 1e-12 {
        return Err(Error::Math("destination pose is not invertible".into()));
    }
    Ok(pose_dst.inverse().compose(pose_src))
}
