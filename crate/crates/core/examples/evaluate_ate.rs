//! Aligns an estimate to ground truth and computes the 2D ATE.

use mapfusion::eval::{align_6dof, associate, evaluate, DelocMetric, EvalOptions, Trajectory};
use mapfusion::geom::Pose;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt: Vec<(f64, Pose)> = (0..200)
        .map(|k| {
            let a = k as f64 * 0.03;
            (k as f64 * 0.1, Pose::from_xy_yaw(50.0 * a.cos(), 30.0 * a.sin(), a + 1.57))
        })
        .collect();
    // the estimate lives in a rotated, shifted frame and wobbles sideways
    let offset = Pose::from_xyz_rpy(5.0, -2.0, 1.0, 0.0, 0.0, 30f64.to_radians());
    let est: Vec<(f64, Pose)> = gt
        .iter()
        .enumerate()
        .map(|(k, (t, p))| {
            let wobble = Pose::from_xy_yaw(0.0, 0.5 * (k as f64 * 0.2).sin(), 0.0);
            (t + 0.004, offset.compose(&p.compose(&wobble)))
        })
        .collect();
    let gt = Trajectory::new(gt)?;
    let est = Trajectory::new(est)?;

    let pairs = associate(&est, &gt, 0.02)?;
    let t = align_6dof(&pairs)?;
    let (_, _, yaw) = t.euler();
    println!("{} pairs; alignment yaw {:.2} deg, shift ({:.2}, {:.2}, {:.2})", pairs.len(), yaw.to_degrees(), t.x(), t.y(), t.z());

    for align in [false, true] {
        let r = evaluate(&est, &gt, &EvalOptions { align, ..EvalOptions::default() })?;
        println!("align {align:5}: rmse {:7.3} m, max {:7.3} m, delocalized {}", r.rmse, r.max_error, r.delocalized);
    }
    let r = evaluate(&est, &gt, &EvalOptions { align: false, metric: DelocMetric::Rmse, ..EvalOptions::default() })?;
    println!("unaligned, rmse rule: delocalized {}", r.delocalized);
    Ok(())
}
