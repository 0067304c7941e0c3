//! Synthetic drives over a map with known ground truth, corrupted into
//! odometry and GPS streams.

mod file;
pub mod maps;
mod report;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::eval::EvalError;
use crate::fusion::{Frame, FusionError};
use crate::geom::{wrap_angle, Pose};
use crate::mapgraph::{EdgeId, MapGraph};

pub use file::{parse_scenario, scenario_to_string};
pub use report::{evaluate_scenario, run_arm, ArmReport, PriorEvent, PriorKind, ScenarioReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("route is empty")]
    EmptyRoute,
    #[error("route references unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("route edge {index} does not connect to the previous edge")]
    Disconnected { index: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("fusion never initialized: {samples} of {required} scale samples")]
    NotInitialized { samples: usize, required: usize },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Odometry corruption. Drifts accrue per step in the body frame in
/// proportion to the distance moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    /// Sideways drift, meters per meter traveled.
    pub lateral_m_per_m: f64,
    /// Heading drift, degrees per meter traveled.
    pub yaw_deg_per_m: f64,
    /// Factor applied to every odometry translation.
    pub scale_error: f64,
    pub step_pos_std_m: f64,
    pub step_rot_std_deg: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            lateral_m_per_m: 0.0,
            yaw_deg_per_m: 0.0,
            scale_error: 1.0,
            step_pos_std_m: 0.0,
            step_rot_std_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsSpec {
    /// Fix period after the warmup; `None` emits no fixes after it.
    pub period_s: Option<f64>,
    pub noise_std_m: f64,
    /// Time windows `[start, end)` without fixes.
    pub dropouts: Vec<(f64, f64)>,
    /// Initial stretch with its own fix period, for initialization.
    pub warmup_s: f64,
    pub warmup_period_s: f64,
}

impl Default for GpsSpec {
    fn default() -> Self {
        Self {
            period_s: Some(1.0),
            noise_std_m: 0.5,
            dropouts: Vec::new(),
            warmup_s: 0.0,
            warmup_period_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Chain-connected edges; each is driven in whichever direction
    /// continues from the previous one.
    pub route: Vec<EdgeId>,
    /// One speed for the whole route or one per route edge, m/s.
    pub speed_mps: Vec<f64>,
    pub vo_hz: f64,
    pub drift: DriftSpec,
    pub gps: GpsSpec,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            route: vec![0],
            speed_mps: vec![10.0],
            vo_hz: 10.0,
            drift: DriftSpec::default(),
            gps: GpsSpec::default(),
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        if self.route.is_empty() {
            return Err(SimError::EmptyRoute);
        }
        if self.speed_mps.is_empty() || (self.speed_mps.len() != 1 && self.speed_mps.len() != self.route.len()) {
            return bad("speed_mps needs one value or one per route edge");
        }
        if self.speed_mps.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("speeds must be positive");
        }
        if !(self.vo_hz > 0.0 && self.vo_hz.is_finite()) {
            return bad("vo_hz must be positive");
        }
        if !(self.drift.scale_error > 0.0 && self.drift.scale_error.is_finite()) {
            return bad("scale_error must be positive");
        }
        if self.drift.step_pos_std_m < 0.0 || self.drift.step_rot_std_deg < 0.0 || self.gps.noise_std_m < 0.0 {
            return bad("noise std must not be negative");
        }
        if self.gps.period_s.is_some_and(|p| !(p > 0.0)) || !(self.gps.warmup_period_s > 0.0) {
            return bad("gps periods must be positive");
        }
        let mut windows = self.gps.dropouts.clone();
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in &windows {
            if !(w.1 > w.0) || w.0 < 0.0 {
                return bad("dropout windows need 0 <= start < end");
            }
        }
        if windows.windows(2).any(|p| p[1].0 < p[0].1) {
            return bad("dropout windows overlap");
        }
        Ok(())
    }

    fn speed(&self, segment: usize) -> f64 {
        if self.speed_mps.len() == 1 {
            self.speed_mps[0]
        } else {
            self.speed_mps[segment]
        }
    }
}

/// Simulated streams. `odometry[k]` is the corrupted motion from frame
/// `k - 1` to frame `k`, absent for the first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub truth: Vec<(f64, Pose)>,
    pub odometry: Vec<(f64, Option<Pose>)>,
    pub gps: Vec<(f64, Vector3<f64>)>,
}

impl SimOutput {
    /// Frames for the fusion session, GPS fixes attached to their frame.
    pub fn frames(&self) -> Vec<Frame> {
        let mut g = self.gps.iter().peekable();
        self.odometry
            .iter()
            .map(|(t, d)| {
                let fix = match g.peek() {
                    Some((tg, p)) if (tg - t).abs() < 1e-9 => {
                        g.next();
                        Some(*p)
                    }
                    _ => None,
                };
                Frame::new(*t, *d, fix)
            })
            .collect()
    }

    /// Odometry deltas integrated from the first true pose.
    pub fn dead_reckoning(&self) -> Vec<(f64, Pose)> {
        let mut p = self.truth.first().map_or_else(Pose::identity, |(_, p)| *p);
        self.odometry
            .iter()
            .map(|(t, d)| {
                if let Some(d) = d {
                    p = p.compose(d);
                }
                (*t, p)
            })
            .collect()
    }

    pub fn duration(&self) -> f64 {
        self.truth.last().map_or(0.0, |(t, _)| *t)
    }
}

/// One polyline along the route with, for each point, the route segment it
/// belongs to.
pub fn route_polyline(map: &MapGraph, route: &[EdgeId]) -> Result<(Vec<Vector2<f64>>, Vec<usize>), SimError> {
    if route.is_empty() {
        return Err(SimError::EmptyRoute);
    }
    let edge = |id: EdgeId| map.edge(id).ok_or(SimError::UnknownEdge(id));
    let mut forward = Vec::with_capacity(route.len());
    let first = edge(route[0])?;
    let mut end = if route.len() == 1 {
        forward.push(true);
        first.to
    } else {
        let next = edge(route[1])?;
        if first.to == next.from || first.to == next.to {
            forward.push(true);
            first.to
        } else if first.from == next.from || first.from == next.to {
            forward.push(false);
            first.from
        } else {
            return Err(SimError::Disconnected { index: 1 });
        }
    };
    for (k, id) in route.iter().enumerate().skip(1) {
        let e = edge(*id)?;
        if e.from == end {
            forward.push(true);
            end = e.to;
        } else if e.to == end {
            forward.push(false);
            end = e.from;
        } else {
            return Err(SimError::Disconnected { index: k });
        }
    }
    let mut pts: Vec<Vector2<f64>> = Vec::new();
    let mut seg = Vec::new();
    for (k, (id, fwd)) in route.iter().zip(&forward).enumerate() {
        let wps = &edge(*id)?.waypoints;
        let ordered: Vec<Vector2<f64>> = if *fwd {
            wps.iter().map(|w| w.xy()).collect()
        } else {
            wps.iter().rev().map(|w| w.xy()).collect()
        };
        for p in ordered {
            if pts.last().is_some_and(|q| (q - p).norm() < 1e-9) {
                continue;
            }
            pts.push(p);
            seg.push(k);
        }
    }
    if pts.len() < 2 {
        return Err(SimError::Invalid("route has no length".into()));
    }
    Ok((pts, seg))
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std validated non-negative")
}

/// Ground truth along the route centerline at the scenario speeds, with
/// corrupted odometry and GPS. Identical inputs give identical streams.
pub fn generate(map: &MapGraph, scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let (pts, seg) = route_polyline(map, &scenario.route)?;
    let dt = 1.0 / scenario.vo_hz;

    // truth: walk the polyline at the speed of the current segment
    let mut truth = Vec::new();
    let mut i = 0usize;
    let mut along = 0.0;
    let mut k = 0u64;
    while i + 1 < pts.len() {
        let dir = pts[i + 1] - pts[i];
        let p = pts[i] + dir * (along / dir.norm());
        truth.push((k as f64 * dt, Pose::from_xy_yaw(p.x, p.y, dir.y.atan2(dir.x))));
        along += scenario.speed(seg[i + 1]) * dt;
        while i + 1 < pts.len() && along > len_of(&pts, i) {
            along -= len_of(&pts, i);
            i += 1;
        }
        k += 1;
    }

    // odometry: body-frame truth deltas plus drift, noise and scale
    let mut odo_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    odo_rng.set_stream(1);
    let d = &scenario.drift;
    let pos_noise = normal(d.step_pos_std_m);
    let rot_noise = normal(d.step_rot_std_deg.to_radians());
    let yaw_rate = d.yaw_deg_per_m.to_radians();
    let mut odometry = Vec::with_capacity(truth.len());
    odometry.push((truth[0].0, None));
    for w in truth.windows(2) {
        let rel = w[0].1.relative_to(&w[1].1);
        let dx = rel.translation.x;
        let dy = rel.translation.y;
        let dyaw = wrap_angle(rel.yaw());
        let moved = dx.abs();
        let nx = pos_noise.sample(&mut odo_rng);
        let ny = pos_noise.sample(&mut odo_rng);
        let nyaw = rot_noise.sample(&mut odo_rng);
        let cx = (dx + nx) * d.scale_error;
        let cy = (dy + d.lateral_m_per_m * moved + ny) * d.scale_error;
        let cyaw = dyaw + yaw_rate * moved + nyaw;
        odometry.push((w[1].0, Some(Pose::from_xy_yaw(cx, cy, cyaw))));
    }

    // gps: fixes on the first frame at or after each scheduled time
    let mut gps_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    gps_rng.set_stream(2);
    let g = &scenario.gps;
    let gps_noise = normal(g.noise_std_m);
    let mut gps = Vec::new();
    let mut next = 0.0;
    for (t, p) in &truth {
        if *t + 1e-9 < next {
            continue;
        }
        let period = if *t < g.warmup_s { Some(g.warmup_period_s) } else { g.period_s };
        let Some(period) = period else {
            next = f64::INFINITY;
            continue;
        };
        next += period;
        while next <= *t + 1e-9 {
            next += period;
        }
        let nx = gps_noise.sample(&mut gps_rng);
        let ny = gps_noise.sample(&mut gps_rng);
        if g.dropouts.iter().any(|(a, b)| *t >= *a && *t < *b) {
            continue;
        }
        gps.push((*t, p.translation + Vector3::new(nx, ny, 0.0)));
    }

    Ok(SimOutput { truth, odometry, gps })
}

fn len_of(pts: &[Vector2<f64>], i: usize) -> f64 {
    (pts[i + 1] - pts[i]).norm()
}
