//! Branch losses on toy predictions and distance-binned evaluation.

use lidar_mos::loss::{branch_loss, lovasz_softmax, total_loss, weighted_cross_entropy, ClassProbs};
use lidar_mos::metrics::{distance_binned_eval, DistanceBins};
use lidar_mos::scan_io::{Point, PointCloud};

fn main() -> lidar_mos::Result<()> {
    let gt = [0, 1, 1, 0, 1];
    let probs = ClassProbs::from_logits(2, &[2.0, -1.0, -0.5, 1.5, 0.2, 0.1, 1.0, 0.0, -2.0, 3.0])?;
    let w = [1.0, 4.0];
    println!("weighted CE  {:.4}", weighted_cross_entropy(&probs, &gt, &w)?);
    println!("Lovasz       {:.4}", lovasz_softmax(&probs, &gt)?);
    println!("branch       {:.4}", branch_loss(&probs, &gt, &w)?);
    println!("total        {:.4}", total_loss(&probs, &gt, &w, &probs, &gt, &w)?);

    let cloud = PointCloud::new(
        [5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0]
            .iter()
            .map(|&r| Point::new(r, 0.0, 0.0, 0.0))
            .collect(),
    );
    let pred = [true, false, true, true, false, true, false];
    let truth = [true, true, true, false, false, true, true];
    let report = distance_binned_eval(&pred, &truth, &cloud, &DistanceBins::default())?;
    print!("{}", report.to_table());
    print!("{}", report.to_csv());
    Ok(())
}
