//! The `mapfusion` command line.
//!
//! Exit codes: 0 success, 1 finished but degraded (an optimization failed
//! or did not converge), 2 error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::ToolkitConfig;
use crate::eval::{evaluate, DelocMetric, Trajectory};
use crate::formats::{
    merge_streams, parse_gps_csv, parse_trajectory, write_debug_csv, write_errors_csv, write_gps_csv,
    write_trajectory, OdometryKind,
};
use crate::fusion::{FusionSession, OutputMode};
use crate::geom::GeoPoint;
use crate::initializer::Alignment;
use crate::mapgraph::{build_graph, load_map, parse_osm, serialize_map, to_debug_json, MapGraph, OsmFormat};
use crate::sim::{generate, parse_scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DEGRADED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mapfusion", version, about = "Drift correction of odometry with GPS and street maps")]
struct Cli {
    /// Config file; defaults to $MAPFUSION_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `key=value`, repeatable; beats the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Road map files.
    #[command(subcommand)]
    Map(MapCommand),
    /// Fuse odometry, GPS and map into a trajectory.
    Fuse(FuseArgs),
    /// Simulate a scenario into truth, odometry and GPS files.
    Simulate(SimulateArgs),
    /// Absolute trajectory error of an estimate against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
enum MapCommand {
    /// Build a map file from an OSM extract (XML or Overpass JSON).
    Build(MapBuildArgs),
    /// Overwrite the lane count of one edge.
    SetLanes(SetLanesArgs),
}

#[derive(Debug, Args)]
struct MapBuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Input format; sniffed from the content when absent.
    #[arg(long, value_parser = ["xml", "json"])]
    format: Option<String>,
    /// Waypoint spacing, meters.
    #[arg(long)]
    step: Option<f64>,
    /// Smoothing window, odd number of waypoints.
    #[arg(long)]
    window: Option<u32>,
    /// Local frame origin `lat,lon`; the extract's center when absent.
    #[arg(long, value_name = "LAT,LON")]
    origin: Option<String>,
    /// Also write the graph as JSON.
    #[arg(long)]
    debug_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SetLanesArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    edge: u32,
    #[arg(long)]
    lanes: u32,
    /// Destination; the input map is rewritten when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    /// Odometry poses, trajectory format.
    #[arg(long)]
    odometry: PathBuf,
    /// `absolute` poses or per-frame `delta`s.
    #[arg(long, default_value = "absolute")]
    odometry_kind: OdometryKind,
    #[arg(long)]
    gps: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Disable map priors.
    #[arg(long)]
    no_map: bool,
    /// Fail unless scale and heading come from GPS.
    #[arg(long)]
    require_gps_init: bool,
    /// `online` or `smoothed`; overrides `fusion.output`.
    #[arg(long)]
    output_mode: Option<OutputMode>,
    /// Per-step diagnostics CSV.
    #[arg(long)]
    debug: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    deloc_metric: Option<DelocMetric>,
    /// Association window, seconds.
    #[arg(long)]
    max_dt: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-pose errors CSV.
    #[arg(long)]
    errors_csv: Option<PathBuf>,
}

type Res<T> = Result<T, String>;

fn read(path: &Path) -> Res<Vec<u8>> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Res<String> {
    String::from_utf8(read(path)?).map_err(|_| format!("{}: not UTF-8", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Res<()> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_map_file(path: &Path) -> Res<MapGraph> {
    load_map(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn trajectory_file(path: &Path) -> Res<Vec<(f64, crate::geom::Pose)>> {
    parse_trajectory(&read_text(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_origin(s: &str) -> Res<GeoPoint> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("origin {s:?} is not LAT,LON"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("origin {s:?} is not LAT,LON"));
    GeoPoint::lat_lon(num(a)?, num(b)?).map_err(|e| e.to_string())
}

fn map_build(args: &MapBuildArgs, cfg: &ToolkitConfig, out: &mut dyn Write) -> Res<i32> {
    let bytes = read(&args.input)?;
    let format = match args.format.as_deref() {
        Some("xml") => OsmFormat::Xml,
        Some("json") => OsmFormat::Json,
        _ => OsmFormat::sniff(&bytes),
    };
    let raw = parse_osm(&bytes, format).map_err(|e| format!("{}: {e}", args.input.display()))?;
    let mut build = cfg.mapgraph.clone();
    if let Some(s) = args.step {
        build.step_m = s;
    }
    if let Some(w) = args.window {
        build.smoothing_window = w;
    }
    if let Some(o) = &args.origin {
        build.origin = Some(parse_origin(o)?);
    }
    let (map, report) = build_graph(&raw, &build).map_err(|e| e.to_string())?;
    write(&args.output, serialize_map(&map))?;
    if let Some(p) = &args.debug_json {
        let mut json = serde_json::to_string_pretty(&to_debug_json(&map)).map_err(|e| e.to_string())?;
        json.push('\n');
        write(p, json)?;
    }
    writeln!(
        out,
        "edges {} waypoints {} degenerate_ways {} dropped_ways {}",
        report.edges, report.waypoints, report.degenerate_ways, raw.dropped_ways
    )
    .map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn set_lanes(args: &SetLanesArgs, out: &mut dyn Write) -> Res<i32> {
    let mut map = load_map_file(&args.map)?;
    map.set_lanes(args.edge, args.lanes).map_err(|e| e.to_string())?;
    let dest = args.output.as_ref().unwrap_or(&args.map);
    write(dest, serialize_map(&map))?;
    writeln!(out, "edge {} lanes {}", args.edge, args.lanes).map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn fuse(args: &FuseArgs, cfg: &ToolkitConfig, out: &mut dyn Write, err: &mut dyn Write) -> Res<i32> {
    if args.require_gps_init && args.gps.is_none() {
        return Err("--require-gps-init needs a --gps file".into());
    }
    let map = args.map.as_deref().map(load_map_file).transpose()?.map(Arc::new);
    let odometry = trajectory_file(&args.odometry)?;
    if odometry.is_empty() {
        return Err(format!("{}: no poses", args.odometry.display()));
    }
    let gps = match &args.gps {
        Some(p) => parse_gps_csv(&read_text(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Vec::new(),
    };
    let needs_frame = gps.iter().any(|f| matches!(f.position, crate::formats::GpsPosition::Geodetic(_)));
    let frame = match (&map, needs_frame) {
        (Some(m), _) => *m.frame(),
        (None, false) => crate::geom::LocalFrame::new(GeoPoint::lat_lon(0.0, 0.0).expect("valid")),
        (None, true) => return Err("geodetic GPS fixes need a --map to define the local frame".into()),
    };
    let frames = merge_streams(&odometry, args.odometry_kind, &gps, &frame, cfg.gps_merge_tol_s);

    let mut fusion = cfg.fusion.clone();
    if args.no_map {
        fusion.map_priors = false;
    }
    let mut session = if args.gps.is_some() {
        FusionSession::new(map, fusion)
    } else {
        writeln!(err, "warning: no GPS; odometry is taken as metric and already in the map frame").ok();
        FusionSession::with_alignment(map, fusion, Alignment::identity())
    }
    .map_err(|e| e.to_string())?;
    let records = session.run(frames).map_err(|e| e.to_string())?;
    if !session.is_initialized() {
        return Err(format!(
            "initialization did not complete: {} of {} scale samples",
            session.initializer().samples().len(),
            cfg.fusion.init.samples_required
        ));
    }
    let mode = args.output_mode.unwrap_or(cfg.output);
    write(&args.output, write_trajectory(&session.trajectory(mode)))?;
    if let Some(p) = &args.debug {
        write(p, write_debug_csv(&records))?;
    }
    let s = session.stats();
    writeln!(
        out,
        "poses {} gps_priors {} map_priors {} cap_priors {} optimizations {} failures {} degraded {}",
        session.online_trajectory().len(),
        s.gps_priors,
        s.map_priors,
        s.cap_priors,
        s.optimizations,
        s.failures,
        session.is_degraded()
    )
    .map_err(|e| e.to_string())?;
    Ok(if session.is_degraded() { EXIT_DEGRADED } else { EXIT_OK })
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Res<i32> {
    let map = load_map_file(&args.map)?;
    let scenario = parse_scenario(&read_text(&args.scenario)?).map_err(|e| format!("{}: {e}", args.scenario.display()))?;
    let sim = generate(&map, &scenario).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| format!("{}: {e}", args.out_dir.display()))?;
    let mut odo_from_origin = Vec::with_capacity(sim.odometry.len());
    let mut p = crate::geom::Pose::identity();
    for (t, d) in &sim.odometry {
        if let Some(d) = d {
            p = p.compose(d);
        }
        odo_from_origin.push((*t, p));
    }
    write(&args.out_dir.join("truth.tum"), write_trajectory(&sim.truth))?;
    write(&args.out_dir.join("odometry.tum"), write_trajectory(&odo_from_origin))?;
    write(&args.out_dir.join("gps.csv"), write_gps_csv(&sim.gps, map.frame()))?;
    writeln!(out, "frames {} gps_fixes {} duration_s {}", sim.truth.len(), sim.gps.len(), sim.duration())
        .map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn eval(args: &EvalArgs, cfg: &ToolkitConfig, out: &mut dyn Write) -> Res<i32> {
    let est = Trajectory::new(trajectory_file(&args.est)?).map_err(|e| format!("{}: {e}", args.est.display()))?;
    let gt = Trajectory::new(trajectory_file(&args.gt)?).map_err(|e| format!("{}: {e}", args.gt.display()))?;
    let mut opts = cfg.eval;
    if args.no_align {
        opts.align = false;
    }
    if let Some(m) = args.deloc_metric {
        opts.metric = m;
    }
    if let Some(d) = args.max_dt {
        opts.max_dt = d;
    }
    let report = evaluate(&est, &gt, &opts).map_err(|e| e.to_string())?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    json.push('\n');
    out.write_all(json.as_bytes()).map_err(|e| e.to_string())?;
    if let Some(p) = &args.output {
        write(p, &json)?;
    }
    if let Some(p) = &args.errors_csv {
        write(p, write_errors_csv(&report.times, &report.errors))?;
    }
    Ok(EXIT_OK)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = ToolkitConfig::load(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| e.to_string())
        .and_then(|cfg| match &cli.command {
            Command::Map(MapCommand::Build(a)) => map_build(a, &cfg, out),
            Command::Map(MapCommand::SetLanes(a)) => set_lanes(a, out),
            Command::Fuse(a) => fuse(a, &cfg, out, err),
            Command::Simulate(a) => simulate(a, out),
            Command::Eval(a) => eval(a, &cfg, out),
        });
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_ERROR
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
