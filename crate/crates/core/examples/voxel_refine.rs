//! Voxel attention refinement of per-point features and the two-class
//! head, with predictions scored against the synthetic labels.

use lidar_mos::metrics::iou_eval;
use lidar_mos::pipeline::{refine_frame, refine_specs, FramePipeline, PipelineConfig};
use lidar_mos::scam::argmax_rows;
use lidar_mos::synthetic::{generate_sequence, SceneSpec};
use lidar_mos::weights::WeightSet;

fn main() -> lidar_mos::Result<()> {
    let mut spec = SceneSpec::default_mover(9);
    spec.frames = 4;
    let seq = generate_sequence(&spec)?;
    let cfg = PipelineConfig::default();
    let weights = WeightSet::random(&refine_specs(&cfg), cfg.seed, 0.1);
    let mut pipeline = FramePipeline::new(cfg.clone())?;

    for frame in &seq.frames {
        let out = pipeline.process(frame.clone())?;
        let scores = refine_frame(frame, &out, &weights, &cfg)?;
        let pred: Vec<bool> = argmax_rows(&scores).iter().map(|c| *c == 1).collect();
        let gt = &frame.labels.as_ref().expect("synthetic frames are labelled").moving;
        println!("frame {}: {} predicted moving, {}", frame.index, pred.iter().filter(|p| **p).count(), iou_eval(&pred, gt)?);
    }
    println!("(random weights; load trained ones with weights::load_weights)");
    Ok(())
}
