//! Matches pose estimates to the closest map pose under the combined
//! distance and reports the lateral offset.

use mapfusion::geom::Pose;
use mapfusion::matcher::{match_pose, MatchConfig};
use mapfusion::sim::maps;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = maps::rounded_rectangle(300.0, 200.0, 30.0, 2)?;
    let cfg = MatchConfig::default();
    let estimates = [
        ("on the road, heading east", Pose::from_xy_yaw(20.0, -100.0, 0.0)),
        ("4 m off, heading west", Pose::from_xy_yaw(20.0, -96.0, std::f64::consts::PI)),
        ("8 m off, skewed 20 deg", Pose::from_xy_yaw(-40.0, -108.0, 20f64.to_radians())),
        ("in the corner", Pose::from_xy_yaw(140.0, -90.0, 1.0)),
    ];
    for (label, est) in estimates {
        match match_pose(&map, &est, None, &cfg) {
            Some(m) => {
                println!(
                    "{label:28} edge {} wp {:4} reversed {:5} E {:5.2} m A {:5.2} deg D {:5.2} L {:5.2} m exceeds {}",
                    m.map_pose.edge,
                    m.map_pose.index,
                    m.reversed,
                    m.euclidean_m,
                    m.angular_deg,
                    m.combined,
                    m.lateral_m,
                    m.exceeds_road_width
                );
            }
            None => println!("{label:28} no map pose within {} m", cfg.widen_radius_m),
        }
    }

    // consecutive estimates reuse the previous match as the search center
    let mut hint = None;
    for k in 0..5 {
        let est = Pose::from_xy_yaw(-60.0 + 0.8 * k as f64, -97.0, 0.05);
        let m = match_pose(&map, &est, hint.as_ref(), &cfg).expect("near the road");
        println!("step {k}: waypoint {} lateral {:.2} m", m.map_pose.index, m.lateral_m);
        hint = Some(m);
    }
    Ok(())
}
