//! Range-view residuals between a frame and its pose-compensated
//! predecessors, next to the closed-form value for a receding car.

use lidar_mos::range_view::{build_rv_residual, RvConfig};
use lidar_mos::synthetic::{analytic_rv_residual, generate_sequence, SceneSpec};

fn main() -> lidar_mos::Result<()> {
    let spec = SceneSpec::default_mover(3);
    let seq = generate_sequence(&spec)?;
    let cfg = RvConfig::default();
    let t = 4;
    let cur = &seq.frames[t];
    let res = build_rv_residual(cur, &[&seq.frames[t - 1], &seq.frames[t - 2]], &cfg)?;

    for k in 0..res.k {
        let ch = res.channel(k);
        let valid = res.doubly_valid[k * cfg.pixels()..(k + 1) * cfg.pixels()].iter().filter(|m| **m).count();
        let hot = ch.iter().filter(|v| **v > 0.05).count();
        println!("past frame {}: {valid} comparable pixels, {hot} above 0.05", k + 1);
    }

    let m = &spec.movers[0];
    let back = m.body.center[0] - m.body.size[0] / 2.0;
    let r_now = back + m.velocity[0] * t as f64;
    let r_then = r_now - m.velocity[0];
    println!("expected residual on the car's rear face: {:.3}", analytic_rv_residual(r_now, r_then)?);
    Ok(())
}
