//! Text formats for trajectories, GPS fixes and per-step diagnostics.
//!
//! Trajectories: one pose per line, `timestamp tx ty tz qx qy qz qw`,
//! whitespace-separated, `#` starts a comment. GPS: CSV with a header,
//! `timestamp,lat,lon,alt` or `timestamp,east,north,up`, optionally followed
//! by a `cov` column holding the horizontal variance in m².

use std::fmt::Write;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::fusion::{Frame, StepRecord};
use crate::geom::{relative, GeoPoint, LocalFrame, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn fail<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError {
        line,
        message: message.into(),
    })
}

fn field(line: usize, s: &str) -> Result<f64, FormatError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => fail(line, format!("bad number {:?}", s.trim())),
    }
}

/// Parses a trajectory; timestamps must strictly increase.
pub fn parse_trajectory(text: &str) -> Result<Vec<(f64, Pose)>, FormatError> {
    let mut out: Vec<(f64, Pose)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parts: Vec<&str> = body.split_whitespace().collect();
        if parts.len() != 8 {
            return fail(line, format!("expected 8 fields, found {}", parts.len()));
        }
        let v = parts.iter().map(|p| field(line, p)).collect::<Result<Vec<f64>, _>>()?;
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-9 {
            return fail(line, "zero quaternion");
        }
        if let Some((prev, _)) = out.last() {
            if !(v[0] > *prev) {
                return fail(line, format!("timestamp {} does not increase", v[0]));
            }
        }
        let pose = Pose::new(Vector3::new(v[1], v[2], v[3]), UnitQuaternion::from_quaternion(q));
        out.push((v[0], pose));
    }
    Ok(out)
}

/// Writes poses with shortest round-trip formatting, one per line.
pub fn write_trajectory(poses: &[(f64, Pose)]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in poses {
        let q = p.rotation.quaternion();
        let tr = p.translation;
        let _ = writeln!(s, "{t} {} {} {} {} {} {} {}", tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GpsPosition {
    Geodetic(GeoPoint),
    Enu(Vector3<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub t: f64,
    pub position: GpsPosition,
    /// Horizontal variance, m².
    pub variance: Option<f64>,
}

impl GpsFix {
    pub fn enu(&self, frame: &LocalFrame) -> Vector3<f64> {
        match self.position {
            GpsPosition::Geodetic(g) => frame.project(&g),
            GpsPosition::Enu(p) => p,
        }
    }

    pub fn std_m(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }
}

pub fn parse_gps_csv(text: &str) -> Result<Vec<GpsFix>, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let l = l.trim();
        !l.is_empty() && !l.starts_with('#')
    });
    let Some((hn, header)) = lines.next() else {
        return fail(1, "missing header");
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    let (geodetic, with_cov) = match names.as_slice() {
        ["timestamp", "lat", "lon", "alt"] => (true, false),
        ["timestamp", "lat", "lon", "alt", "cov"] => (true, true),
        ["timestamp", "east", "north", "up"] => (false, false),
        ["timestamp", "east", "north", "up", "cov"] => (false, true),
        _ => return fail(hn + 1, format!("unrecognized header {header:?}")),
    };
    let mut out: Vec<GpsFix> = Vec::new();
    for (n, raw) in lines {
        let line = n + 1;
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != cols.len() {
            return fail(line, format!("expected {} columns, found {}", cols.len(), parts.len()));
        }
        let v = parts.iter().map(|p| field(line, p)).collect::<Result<Vec<f64>, _>>()?;
        let position = if geodetic {
            match GeoPoint::new(v[1], v[2], v[3]) {
                Ok(g) => GpsPosition::Geodetic(g),
                Err(e) => return fail(line, e.to_string()),
            }
        } else {
            GpsPosition::Enu(Vector3::new(v[1], v[2], v[3]))
        };
        let variance = if with_cov {
            if !(v[4] > 0.0) {
                return fail(line, "covariance must be positive");
            }
            Some(v[4])
        } else {
            None
        };
        if let Some(prev) = out.last() {
            if !(v[0] > prev.t) {
                return fail(line, format!("timestamp {} does not increase", v[0]));
            }
        }
        out.push(GpsFix { t: v[0], position, variance });
    }
    Ok(out)
}

/// Geodetic GPS CSV for ENU fixes in `frame`.
pub fn write_gps_csv(fixes: &[(f64, Vector3<f64>)], frame: &LocalFrame) -> String {
    let mut s = String::from("timestamp,lat,lon,alt\n");
    for (t, p) in fixes {
        let g = frame.unproject(p);
        let _ = writeln!(s, "{t},{},{},{}", g.latitude, g.longitude, g.altitude);
    }
    s
}

pub fn write_gps_enu_csv(fixes: &[(f64, Vector3<f64>)]) -> String {
    let mut s = String::from("timestamp,east,north,up\n");
    for (t, p) in fixes {
        let _ = writeln!(s, "{t},{},{},{}", p.x, p.y, p.z);
    }
    s
}

/// How odometry poses in a trajectory file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdometryKind {
    /// Poses in the odometry frame; consecutive ones are differenced.
    #[default]
    Absolute,
    /// Each pose is the motion since the previous line; the first is unused.
    Delta,
}

impl std::str::FromStr for OdometryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absolute" => Ok(OdometryKind::Absolute),
            "delta" => Ok(OdometryKind::Delta),
            other => Err(format!("unknown odometry kind `{other}`")),
        }
    }
}

/// Merges odometry and GPS by timestamp. A fix joins the odometry frame
/// within `tol` seconds of it, else the nearest later frame; fixes after
/// the last frame are dropped.
pub fn merge_streams(
    odometry: &[(f64, Pose)],
    kind: OdometryKind,
    gps: &[GpsFix],
    frame: &LocalFrame,
    tol: f64,
) -> Vec<Frame> {
    let mut frames: Vec<Frame> = odometry
        .iter()
        .enumerate()
        .map(|(k, (t, p))| {
            let delta = match (k, kind) {
                (0, _) => None,
                (_, OdometryKind::Absolute) => Some(relative(&odometry[k - 1].1, p)),
                (_, OdometryKind::Delta) => Some(*p),
            };
            Frame::new(*t, delta, None)
        })
        .collect();
    let mut k = 0;
    for fix in gps {
        while k < frames.len() && frames[k].t < fix.t - tol {
            k += 1;
        }
        if k == frames.len() {
            break;
        }
        if frames[k].gps.is_none() {
            frames[k].gps = Some(fix.enu(frame));
            frames[k].gps_std_m = fix.std_m();
        }
    }
    frames
}

pub const DEBUG_CSV_HEADER: &str = "t,x,y,z,yaw,marginal_std_m,gps_prior,map_prior,cap_prior,optimized,degraded,matched_edge,lateral_m,road_width_m,exceeds_road_width";

pub fn write_debug_csv(records: &[StepRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut s = String::from(DEBUG_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.x,
            r.y,
            r.z,
            r.yaw,
            r.marginal_std_m,
            r.gps_prior as u8,
            r.map_prior as u8,
            r.cap_prior as u8,
            r.optimized as u8,
            r.degraded as u8,
            r.matched_edge.map_or(String::new(), |e| e.to_string()),
            opt(r.lateral_m),
            opt(r.road_width_m),
            r.exceeds_road_width as u8,
        );
    }
    s
}

/// Per-pose ATE rows, `t,error_m`.
pub fn write_errors_csv(times: &[f64], errors: &[f64]) -> String {
    let mut s = String::from("t,error_m\n");
    for (t, e) in times.iter().zip(errors) {
        let _ = writeln!(s, "{t},{e}");
    }
    s
}
