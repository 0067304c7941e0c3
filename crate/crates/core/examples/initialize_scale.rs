//! Recovers the odometry scale and heading offset from a GPS prefix.

use mapfusion::initializer::{measurement_counts, InitConfig, InitState, InitStatus};
use mapfusion::sim::{generate, maps, DriftSpec, GpsSpec, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = maps::rounded_rectangle(800.0, 500.0, 50.0, 1)?;
    let cfg = InitConfig::default();
    let (c_gps, c_vo) = measurement_counts(&cfg);
    println!("md {} m at >= {} km/h: at most {c_gps} GPS and {c_vo} odometry measurements per sample", cfg.md_m, cfg.ms_kmh);

    for injected in [0.25, 0.5, 2.0] {
        let scenario = Scenario {
            drift: DriftSpec {
                scale_error: 1.0 / injected,
                step_pos_std_m: 0.005,
                ..DriftSpec::default()
            },
            gps: GpsSpec::default(),
            seed: 11,
            ..Scenario::default()
        };
        let sim = generate(&map, &scenario)?;
        let mut init = InitState::new(cfg.clone())?;
        let gps: std::collections::BTreeMap<u64, _> =
            sim.gps.iter().map(|(t, p)| ((t * 1e6).round() as u64, *p)).collect();
        for (t, d) in &sim.odometry {
            let fix = gps.get(&((t * 1e6).round() as u64)).copied();
            if let InitStatus::Initialized { .. } = init.feed(*t, fix, d.as_ref()) {
                break;
            }
        }
        let a = init.alignment()?;
        println!(
            "injected scale {injected:4}: recovered {:.4} ({:+.2}%), heading offset {:+.3} deg, {} windows discarded",
            a.scale,
            100.0 * (a.scale / injected - 1.0),
            a.heading_offset.to_degrees(),
            init.discarded_windows()
        );
    }
    Ok(())
}
