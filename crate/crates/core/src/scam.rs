//! Sparse-voxel spatial/channel attention refinement.
//!
//! Per-point features are mean-pooled into voxels, re-weighted by two
//! sigmoid score maps (a 3×3×3 submanifold convolution for the spatial
//! score, a 1×1×1 one for the channel score), scattered back to the points
//! and combined with a per-point MLP path before a linear classifier.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scan_io::PointCloud;
use crate::tensor::{self, sigmoid, Tensor};
use crate::weights::WeightSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelConfig {
    /// Edge length per axis, meters.
    pub voxel_size: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            voxel_size: [0.2; 3],
            min: [-50.0, -50.0, -4.0],
            max: [50.0, 50.0, 2.0],
        }
    }
}

impl VoxelConfig {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.voxel_size[a] > 0.0) {
                return Err(Error::Config(format!("voxel size must be positive on axis {a}")));
            }
            if !(self.max[a] > self.min[a]) {
                return Err(Error::Config(format!("voxel bounds are empty on axis {a}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn key_of(&self, p: [f64; 3]) -> Option<VoxelKey> {
        let mut k = [0i32; 3];
        for a in 0..3 {
            if !(p[a] >= self.min[a] && p[a] < self.max[a]) {
                return None;
            }
            k[a] = ((p[a] - self.min[a]) / self.voxel_size[a]).floor() as i32;
        }
        Some(VoxelKey(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey(pub [i32; 3]);

impl VoxelKey {
    fn offset(self, d: [i32; 3]) -> VoxelKey {
        VoxelKey([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }
}

/// `N × C` features aligned with a cloud by point index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub n: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl PointFeatures {
    pub fn new(n: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c {
            return Err(shape_err!("{} values for {n} points x {c} channels", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("point features contain non-finite values".into()));
        }
        Ok(Self { n, c, data })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            n,
            c,
            data: vec![0.0; n * c],
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.c], self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let [n, c] = t.shape()[..] else {
            return Err(shape_err!("point features must be N×C, got {:?}", t.shape()));
        };
        Ok(Self {
            n,
            c,
            data: t.into_data(),
        })
    }
}

/// Sparse voxel features plus the point → voxel assignment that produced
/// them. Voxels are kept sorted by key.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub c: usize,
    keys: Vec<VoxelKey>,
    features: Vec<f32>,
    lookup: HashMap<VoxelKey, usize>,
    /// Voxel slot of every source point; `None` for out-of-bounds points.
    pub occupancy: Vec<Option<usize>>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn feature(&self, slot: usize) -> &[f32] {
        &self.features[slot * self.c..(slot + 1) * self.c]
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&[f32]> {
        self.lookup.get(key).map(|&s| self.feature(s))
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    fn with_features(&self, c: usize, features: Vec<f32>) -> VoxelGrid {
        VoxelGrid {
            c,
            keys: self.keys.clone(),
            features,
            lookup: self.lookup.clone(),
            occupancy: self.occupancy.clone(),
        }
    }

    /// Writes one `i,j,k,f0,..,fC-1` line per voxel.
    pub fn write_records(&self, mut out: impl Write) -> std::io::Result<()> {
        for (s, k) in self.keys.iter().enumerate() {
            write!(out, "{},{},{}", k.0[0], k.0[1], k.0[2])?;
            for v in self.feature(s) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Buckets points into voxels; each voxel's feature is the mean of its
/// members' features.
pub fn voxelize(cloud: &PointCloud, feats: &PointFeatures, cfg: &VoxelConfig) -> Result<VoxelGrid> {
    cfg.validate()?;
    if feats.n != cloud.len() {
        return Err(shape_err!("{} feature rows for {} points", feats.n, cloud.len()));
    }
    let point_keys: Vec<Option<VoxelKey>> = cloud
        .points
        .iter()
        .map(|p| cfg.key_of([p.x, p.y, p.z]))
        .collect();
    let mut keys: Vec<VoxelKey> = point_keys.iter().flatten().copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let lookup: HashMap<VoxelKey, usize> = keys.iter().enumerate().map(|(s, k)| (*k, s)).collect();

    let c = feats.c;
    let mut sums = vec![0f64; keys.len() * c];
    let mut counts = vec![0usize; keys.len()];
    let occupancy: Vec<Option<usize>> = point_keys
        .iter()
        .map(|k| k.map(|k| lookup[&k]))
        .collect();
    for (i, slot) in occupancy.iter().enumerate() {
        let Some(s) = *slot else { continue };
        counts[s] += 1;
        for (acc, v) in sums[s * c..(s + 1) * c].iter_mut().zip(feats.row(i)) {
            *acc += *v as f64;
        }
    }
    let features = sums
        .chunks(c.max(1))
        .zip(&counts)
        .flat_map(|(row, &n)| row.iter().map(move |v| (v / n as f64) as f32))
        .collect();
    Ok(VoxelGrid {
        c,
        keys,
        features: if c == 0 { Vec::new() } else { features },
        lookup,
        occupancy,
    })
}

/// Submanifold sparse convolution: output support equals input support and
/// only occupied neighbours contribute.
///
/// `kernel` is `C_out × C_in × k × k × k` (`k ∈ {1, 3}`), indexed by the
/// neighbour offset `+1` along the three voxel axes; `bias` is `C_out`.
pub fn sparse_conv(grid: &VoxelGrid, kernel: &Tensor, bias: &Tensor) -> Result<VoxelGrid> {
    let [c_out, c_in, k0, k1, k2] = kernel.shape()[..] else {
        return Err(shape_err!("sparse kernel must be rank 5, got {:?}", kernel.shape()));
    };
    if k0 != k1 || k1 != k2 || !(k0 == 1 || k0 == 3) {
        return Err(shape_err!("unsupported sparse kernel {k0}x{k1}x{k2}"));
    }
    if c_in != grid.c {
        return Err(shape_err!("kernel expects {c_in} channels, grid has {}", grid.c));
    }
    if bias.shape() != [c_out] {
        return Err(shape_err!("bias shape {:?} for {c_out} outputs", bias.shape()));
    }
    let k = k0;
    let r = (k / 2) as i32;
    let kd = kernel.data();
    let mut out = Vec::with_capacity(grid.len() * c_out);
    let mut acc = vec![0f64; c_out];
    for key in &grid.keys {
        acc.iter_mut().zip(bias.data()).for_each(|(a, b)| *a = *b as f64);
        for di in -r..=r {
            for dj in -r..=r {
                for dk in -r..=r {
                    let Some(f) = grid.get(&key.offset([di, dj, dk])) else {
                        continue;
                    };
                    let tap = (((di + r) as usize * k) + (dj + r) as usize) * k + (dk + r) as usize;
                    for (co, a) in acc.iter_mut().enumerate() {
                        let base = co * c_in * k * k * k;
                        for (ci, v) in f.iter().enumerate() {
                            *a += kd[base + ci * k * k * k + tap] as f64 * *v as f64;
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    Ok(grid.with_features(c_out, out))
}

pub const SCAM_SPATIAL: &str = "scam.spatial";
pub const SCAM_CHANNEL: &str = "scam.channel";
pub const MLP_FC1: &str = "mlp.fc1";
pub const MLP_FC2: &str = "mlp.fc2";
pub const HEAD: &str = "head";

/// Tensor names and shapes used by [`scam_forward`] for `c` channels.
pub fn scam_specs(c: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{SCAM_SPATIAL}.weight"), vec![c, c, 3, 3, 3]),
        (format!("{SCAM_SPATIAL}.bias"), vec![c]),
        (format!("{SCAM_CHANNEL}.weight"), vec![c, c, 1, 1, 1]),
        (format!("{SCAM_CHANNEL}.bias"), vec![c]),
    ]
}

/// Spatial and channel attention: `grid ⊙ σ(conv3³(grid)) ⊙ σ(conv1³(grid))`.
pub fn scam_forward(grid: &VoxelGrid, weights: &WeightSet) -> Result<VoxelGrid> {
    let c = grid.c;
    let sw = weights.expect(&format!("{SCAM_SPATIAL}.weight"), &[c, c, 3, 3, 3])?;
    let sb = weights.expect(&format!("{SCAM_SPATIAL}.bias"), &[c])?;
    let cw = weights.expect(&format!("{SCAM_CHANNEL}.weight"), &[c, c, 1, 1, 1])?;
    let cb = weights.expect(&format!("{SCAM_CHANNEL}.bias"), &[c])?;
    let spatial = sparse_conv(grid, sw, sb)?;
    let channel = sparse_conv(grid, cw, cb)?;
    let out = grid
        .features
        .iter()
        .zip(&spatial.features)
        .zip(&channel.features)
        .map(|((&x, &s), &ch)| {
            (x as f64 * sigmoid(s as f64) * sigmoid(ch as f64)) as f32
        })
        .collect();
    Ok(grid.with_features(c, out))
}

/// Scatters voxel features back to the points they were built from;
/// unassigned points get zeros.
pub fn devoxelize(grid: &VoxelGrid, cloud: &PointCloud) -> Result<PointFeatures> {
    if grid.occupancy.len() != cloud.len() {
        return Err(Error::Alignment(format!(
            "grid was built from {} points, cloud has {}",
            grid.occupancy.len(),
            cloud.len()
        )));
    }
    let mut out = PointFeatures::zeros(cloud.len(), grid.c);
    for (i, slot) in grid.occupancy.iter().enumerate() {
        if let Some(s) = slot {
            out.data[i * grid.c..(i + 1) * grid.c].copy_from_slice(grid.feature(*s));
        }
    }
    Ok(out)
}

/// Two linear+sigmoid layers applied per point.
pub fn point_mlp(feats: &PointFeatures, weights: &WeightSet) -> Result<PointFeatures> {
    let x = feats.to_tensor();
    let h = tensor::linear(
        &x,
        weights.get(&format!("{MLP_FC1}.weight"))?,
        weights.get(&format!("{MLP_FC1}.bias"))?,
    )?;
    let h = tensor::activate(&h, tensor::Activation::Sigmoid)?;
    let h = tensor::linear(
        &h,
        weights.get(&format!("{MLP_FC2}.weight"))?,
        weights.get(&format!("{MLP_FC2}.bias"))?,
    )?;
    PointFeatures::from_tensor(tensor::activate(&h, tensor::Activation::Sigmoid)?)
}

pub fn point_mlp_specs(c_in: usize, hidden: usize, c_out: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{MLP_FC1}.weight"), vec![hidden, c_in]),
        (format!("{MLP_FC1}.bias"), vec![hidden]),
        (format!("{MLP_FC2}.weight"), vec![c_out, hidden]),
        (format!("{MLP_FC2}.bias"), vec![c_out]),
    ]
}

/// How the refined voxel path and the MLP path are combined before the
/// classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFusion {
    #[default]
    Concat,
    Add,
}

pub fn refine_head_specs(
    c_refined: usize,
    c_mlp: usize,
    num_classes: usize,
    fusion: HeadFusion,
) -> Vec<(String, Vec<usize>)> {
    let c_in = match fusion {
        HeadFusion::Concat => c_refined + c_mlp,
        HeadFusion::Add => c_refined,
    };
    vec![
        (format!("{HEAD}.weight"), vec![num_classes, c_in]),
        (format!("{HEAD}.bias"), vec![num_classes]),
    ]
}

/// Per-point class scores, `N × num_classes`.
pub fn refine_head(
    refined: &PointFeatures,
    mlp_path: &PointFeatures,
    weights: &WeightSet,
    fusion: HeadFusion,
) -> Result<Tensor> {
    if refined.n != mlp_path.n {
        return Err(shape_err!("{} refined rows vs {} MLP rows", refined.n, mlp_path.n));
    }
    let fused = match fusion {
        HeadFusion::Concat => {
            let c = refined.c + mlp_path.c;
            let mut data = Vec::with_capacity(refined.n * c);
            for i in 0..refined.n {
                data.extend_from_slice(refined.row(i));
                data.extend_from_slice(mlp_path.row(i));
            }
            Tensor::new(vec![refined.n, c], data)?
        }
        HeadFusion::Add => {
            if refined.c != mlp_path.c {
                return Err(shape_err!(
                    "additive fusion of {} and {} channels",
                    refined.c,
                    mlp_path.c
                ));
            }
            refined.to_tensor().add(&mlp_path.to_tensor())?
        }
    };
    tensor::linear(
        &fused,
        weights.get(&format!("{HEAD}.weight"))?,
        weights.get(&format!("{HEAD}.bias"))?,
    )
}

/// Row-wise argmax of an `N × K` score tensor (first maximum wins).
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = scores.shape().get(1).copied().unwrap_or(0).max(1);
    scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
