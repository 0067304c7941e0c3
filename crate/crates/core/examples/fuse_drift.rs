//! Drifting odometry around a loop, fused with and without map priors.

use std::sync::Arc;

use mapfusion::fusion::FusionConfig;
use mapfusion::sim::{evaluate_scenario, maps, DriftSpec, GpsSpec, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = Arc::new(maps::rounded_rectangle(600.0, 400.0, 40.0, 1)?);
    let scenario = Scenario {
        route: vec![0],
        speed_mps: vec![10.0],
        drift: DriftSpec {
            lateral_m_per_m: 0.005,
            yaw_deg_per_m: 0.02,
            step_pos_std_m: 0.01,
            step_rot_std_deg: 0.01,
            ..DriftSpec::default()
        },
        gps: GpsSpec::default(),
        seed: 1,
        ..Scenario::default()
    };
    let cfg = FusionConfig {
        gps_after_init: false,
        ..FusionConfig::default()
    };
    let report = evaluate_scenario(map, &scenario, &cfg)?;
    for arm in [&report.with_map, &report.without_map] {
        println!(
            "map priors {:5}: aligned rmse {:7.2} m, max {:7.2} m, global rmse {:7.2} m, {} map / {} cap priors",
            arm.map_priors, arm.aligned.rmse, arm.aligned.max_error, arm.global.rmse, arm.stats.map_priors, arm.stats.cap_priors
        );
    }
    println!("rmse ratio {:.3}", report.rmse_ratio());
    Ok(())
}
