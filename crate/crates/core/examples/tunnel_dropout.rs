//! A GPS dropout over drifting odometry, with and without map priors.
//! Errors are unaligned: what the vehicle believes at the time.

use std::sync::Arc;

use mapfusion::fusion::{FusionConfig, OutputMode};
use mapfusion::eval::DelocMetric;
use mapfusion::sim::{generate, maps, run_arm, DriftSpec, GpsSpec, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = Arc::new(maps::rounded_rectangle(400.0, 300.0, 40.0, 1)?);
    let scenario = Scenario {
        drift: DriftSpec {
            lateral_m_per_m: 0.005,
            yaw_deg_per_m: 0.02,
            step_pos_std_m: 0.01,
            step_rot_std_deg: 0.01,
            ..DriftSpec::default()
        },
        gps: GpsSpec {
            period_s: Some(5.0),
            dropouts: vec![(45.0, 70.0)],
            warmup_s: 35.0,
            ..GpsSpec::default()
        },
        speed_mps: vec![12.0],
        seed: 4,
        ..Scenario::default()
    };
    let sim = generate(&map, &scenario)?;
    let mut cfg = FusionConfig::default();
    cfg.init.samples_required = 25;
    for map_priors in [true, false] {
        let arm_cfg = FusionConfig { map_priors, ..cfg.clone() };
        let report = run_arm(Some(map.clone()), &sim, &arm_cfg, OutputMode::Online, DelocMetric::Max)?;
        let inside = report
            .global
            .times
            .iter()
            .zip(&report.global.errors)
            .filter(|(t, _)| (45.0..70.0).contains(*t))
            .map(|(_, e)| *e)
            .fold(0.0, f64::max);
        println!(
            "map priors {map_priors:5}: max error in dropout {inside:6.2} m, overall max {:6.2} m, delocalized {}",
            report.global.max_error, report.global.delocalized
        );
    }
    Ok(())
}
