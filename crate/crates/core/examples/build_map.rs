//! Builds a road graph from an OSM extract and round-trips it through the
//! binary map format.
//!
//! `cargo run --example build_map -- [extract.osm]`

use mapfusion::mapgraph::{build_graph, load_map, parse_osm, serialize_map, BuildConfig, OsmFormat};

const TOWN: &str = include_str!("../tests/data/town.osm");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => TOWN.as_bytes().to_vec(),
    };
    let raw = parse_osm(&bytes, OsmFormat::sniff(&bytes))?;
    println!("{} road ways, {} nodes", raw.ways.len(), raw.nodes.len());

    let (mut map, report) = build_graph(&raw, &BuildConfig::default())?;
    println!("{} edges, {} waypoints", report.edges, report.waypoints);
    for e in map.edges() {
        println!(
            "  edge {} way {} {} -> {}: {:.1} m, {} lane(s), width {:.0} m",
            e.id,
            e.way_id,
            e.from,
            e.to,
            e.length_m(),
            e.lane_count,
            e.road_width_m()
        );
    }

    // widen one road, as for a parking area mapped as a single lane
    map.set_lanes(0, 6)?;
    let bytes = serialize_map(&map);
    let back = load_map(&bytes)?;
    assert_eq!(back, map);
    println!("map file {} bytes, edge 0 now {} m wide", bytes.len(), back.edges()[0].road_width_m());
    Ok(())
}
