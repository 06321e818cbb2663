//! Spherical projection of a synthetic scan into a range image.

use lidar_mos::range_view::{build_range_image, RvConfig, CH_RANGE};
use lidar_mos::synthetic::random_scene_frame;

fn main() -> lidar_mos::Result<()> {
    let frame = random_scene_frame(120_000, 1)?;
    let cfg = RvConfig::default();
    let (image, t_r2p, stats) = build_range_image(&frame.cloud, &cfg)?;

    println!("{} points -> {}x{} image", stats.points, cfg.h, cfg.w);
    println!("valid pixels {}, occluded {}, outside FOV {}", t_r2p.valid_count(), stats.occluded, stats.out_of_fov);

    let v = cfg.h / 2;
    let row: Vec<String> = (0..cfg.w)
        .step_by(cfg.w / 16)
        .map(|u| format!("{:.1}", image.get(CH_RANGE, v, u)))
        .collect();
    println!("row {v} ranges: {}", row.join(" "));
    Ok(())
}
