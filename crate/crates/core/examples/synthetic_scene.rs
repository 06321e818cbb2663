//! Generates a labelled synthetic sequence and writes it as a sequence
//! directory (`velodyne/`, `labels/`, `poses.txt`, `calib.txt`).

use lidar_mos::dataset::SequenceDir;
use lidar_mos::synthetic::{generate_sequence, SceneSpec};

fn main() -> lidar_mos::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_seq".into());
    let mut spec = SceneSpec::default_mover(42);
    spec.frames = 5;
    let seq = generate_sequence(&spec)?;
    for f in &seq.frames {
        let moving = f.labels.as_ref().map_or(0, |l| l.moving.iter().filter(|m| **m).count());
        println!("frame {}: {} points, {moving} moving", f.index, f.cloud.len());
    }
    SequenceDir::new(&out).write(&seq.frames)?;
    println!("wrote {out}");
    Ok(())
}
