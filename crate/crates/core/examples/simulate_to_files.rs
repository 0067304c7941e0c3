//! Writes a simulated drive as files, fuses them through the command line
//! and evaluates the result.
//!
//! `cargo run --example simulate_to_files -- <out-dir>`

use std::path::PathBuf;

use mapfusion::cli;

const TOWN: &str = include_str!("../tests/data/town.osm");
const RING: &str = include_str!("../tests/data/ring.scenario");

fn run(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("mapfusion").chain(args.iter().copied()), &mut out, &mut err);
    print!("{}", String::from_utf8_lossy(&out));
    eprint!("{}", String::from_utf8_lossy(&err));
    code
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/simulate_to_files".into()));
    std::fs::create_dir_all(&dir)?;
    let p = |name: &str| dir.join(name).display().to_string();
    std::fs::write(p("town.osm"), TOWN)?;
    std::fs::write(p("ring.scenario"), RING)?;

    assert_eq!(run(&["map", "build", "--input", &p("town.osm"), "--output", &p("town.map")]), 0);
    assert_eq!(run(&["simulate", "--map", &p("town.map"), "--scenario", &p("ring.scenario"), "--out-dir", &p("sim")]), 0);
    let sim = |f: &str| dir.join("sim").join(f).display().to_string();
    for (label, extra) in [("est_map.tum", None), ("est_nomap.tum", Some("--no-map"))] {
        let (map, odo, gps, out) = (p("town.map"), sim("odometry.tum"), sim("gps.csv"), p(label));
        let mut args = vec!["fuse", "--map", &map, "--odometry", &odo, "--gps", &gps, "--output", &out];
        args.extend(extra);
        let code = run(&args);
        println!("{label}: exit {code}");
        run(&["eval", "--est", &out, "--gt", &sim("truth.tum")]);
    }
    Ok(())
}
