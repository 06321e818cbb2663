//! KITTI-style sequence directories:
//!
//! ```text
//! <seq>/velodyne/000000.bin
//! <seq>/labels/000000.label     (optional)
//! <seq>/poses.txt
//! <seq>/calib.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scan_io::{self, MovingClassSet, Pose, ScanFrame};

#[derive(Debug, Clone)]
pub struct SequenceDir {
    root: PathBuf,
}

impl SequenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn scan_path(&self, idx: usize) -> PathBuf {
        self.root.join("velodyne").join(format!("{idx:06}.bin"))
    }

    pub fn label_path(&self, idx: usize) -> PathBuf {
        self.root.join("labels").join(format!("{idx:06}.label"))
    }

    pub fn poses_path(&self) -> PathBuf {
        self.root.join("poses.txt")
    }

    pub fn calib_path(&self) -> PathBuf {
        self.root.join("calib.txt")
    }

    /// Frame numbers present under `velodyne/`, ascending.
    pub fn frame_indices(&self) -> Result<Vec<usize>> {
        scan_numbers(&self.root.join("velodyne"), "bin")
    }

    pub fn read_poses(&self) -> Result<Vec<Pose>> {
        scan_io::read_poses(self.poses_path(), self.calib_path())
    }

    /// Loads a frame with its pose and, when the label file exists, labels.
    pub fn load_frame(&self, idx: usize, poses: &[Pose], moving: &MovingClassSet) -> Result<ScanFrame> {
        let pose = *poses.get(idx).ok_or_else(|| {
            Error::Format(format!("no pose for frame {idx} ({} poses)", poses.len()))
        })?;
        let cloud = scan_io::read_point_cloud(self.scan_path(idx))?;
        let frame = ScanFrame::new(idx, cloud, pose);
        let lp = self.label_path(idx);
        if lp.exists() {
            frame.with_labels(scan_io::read_labels(lp, moving)?)
        } else {
            Ok(frame)
        }
    }

    /// Writes frames (and any labels) plus a pose file and an identity
    /// calibration.
    pub fn write(&self, frames: &[ScanFrame]) -> Result<()> {
        for sub in ["velodyne", "labels"] {
            let d = self.root.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for f in frames {
            scan_io::write_point_cloud(self.scan_path(f.index), &f.cloud)?;
            if let Some(l) = &f.labels {
                scan_io::write_labels(self.label_path(f.index), l)?;
            }
        }
        let mut poses = vec![Pose::identity(); frames.iter().map(|f| f.index + 1).max().unwrap_or(0)];
        for f in frames {
            poses[f.index] = f.pose;
        }
        scan_io::write_poses(self.poses_path(), &poses)?;
        scan_io::write_identity_calib(self.calib_path())
    }
}

/// Sorted numeric stems of `*.<ext>` files in `dir`.
pub fn scan_numbers(dir: &Path, ext: &str) -> Result<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}
