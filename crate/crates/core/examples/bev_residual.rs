//! Streaming polar BEV residuals from two sliding windows.

use lidar_mos::bev_view::{BevConfig, TemporalWindowPair};
use lidar_mos::synthetic::{generate_sequence, SceneSpec};

fn main() -> lidar_mos::Result<()> {
    let mut spec = SceneSpec::default_mover(5);
    spec.frames = 12;
    let seq = generate_sequence(&spec)?;
    let cfg = BevConfig::default();
    let mut pair = TemporalWindowPair::new(cfg)?;

    for frame in &seq.frames {
        let res = pair.push_frame_and_residual(frame.clone())?;
        let active: Vec<usize> = (0..res.n)
            .map(|k| res.channel(k).iter().filter(|v| v.abs() > 0.0).count())
            .collect();
        println!("frame {:2}: non-zero cells per channel {active:?}", frame.index);
    }
    Ok(())
}
