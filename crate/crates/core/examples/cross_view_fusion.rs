//! Maps BEV features onto the range grid through the point cloud and fuses
//! them with range features.

use lidar_mos::cross_view::*;
use lidar_mos::pipeline::{FramePipeline, PipelineConfig};
use lidar_mos::synthetic::{generate_sequence, SceneSpec};
use lidar_mos::tensor::Tensor;
use lidar_mos::weights::WeightSet;

fn main() -> lidar_mos::Result<()> {
    let mut spec = SceneSpec::default_mover(7);
    spec.frames = 9;
    let seq = generate_sequence(&spec)?;
    let cfg = PipelineConfig::default();
    let mut pipeline = FramePipeline::new(cfg.clone())?;
    let mut last = None;
    for f in &seq.frames {
        last = Some(pipeline.process(f.clone())?);
    }
    let out = last.expect("sequence is not empty");
    println!("T(B->R) covers {} of {} range pixels", out.t_b2r.valid_count(), out.t_b2r.coords.len());

    let bev = &out.bev_residual;
    let m_b = Tensor::new(vec![bev.n, bev.h, bev.w], bev.channels.clone())?;
    let aligned = geometric_align(&m_b, &out.t_b2r, cfg.rv.h, cfg.rv.w)?;
    println!("BEV residual on the range grid: {:?}", aligned.shape());

    let c_r = out.rv_residual.k;
    let m_r = Tensor::new(vec![c_r, cfg.rv.h, cfg.rv.w], out.rv_residual.values.clone())?;
    let w = FusionWeights::new(WeightSet::random(&attention_fuse_specs(c_r, bev.n), 1, 0.1));
    let fused = attention_fuse(&m_r, &aligned, &w)?;
    let energy: f32 = fused.data().iter().map(|v| v.abs()).sum();
    println!("attention-fused map {:?}, mean |value| {:.4}", fused.shape(), energy / fused.len() as f32);

    let encoder = FusionWeights::new(WeightSet::random(&bev_encode_specs(bev.n, 4), 2, 0.1));
    println!("encoded BEV features {:?}", bev_encode(&m_b, &encoder)?.shape());
    Ok(())
}
