use std::sync::Arc;

use nalgebra::{Matrix6, Vector3};
use serde::Serialize;

use super::graph::{horizontal_std, propagate_covariance, Factor, FusionGraph, OptimizeOptions, PoseId};
use super::noise::{map_prior_noise, MapPriorParams, NoiseModel};
use super::FusionError;
use crate::geom::Pose;
use crate::initializer::{Alignment, InitConfig, InitState};
use crate::mapgraph::{MapGraph, LANE_WIDTH_M};
use crate::matcher::{match_pose, road_pose, MatchConfig, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryNoise {
    /// Position std per step before initialization, meters.
    pub pre_init_pos_std_m: f64,
    /// Position std per step after initialization: base plus a fraction of
    /// the step length.
    pub pos_std_base_m: f64,
    pub pos_std_per_m: f64,
    pub rot_std_deg: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            pre_init_pos_std_m: 10.0,
            pos_std_base_m: 0.1,
            pos_std_per_m: 0.01,
            rot_std_deg: 0.5,
        }
    }
}

impl OdometryNoise {
    pub fn pre_init(&self) -> Result<NoiseModel, FusionError> {
        let p = self.pre_init_pos_std_m;
        let r = self.rot_std_deg.to_radians();
        NoiseModel::from_sigmas([p, p, p, r, r, r])
    }

    pub fn post_init(&self, step_len: f64) -> Result<NoiseModel, FusionError> {
        let p = self.pos_std_base_m + self.pos_std_per_m * step_len;
        let r = self.rot_std_deg.to_radians();
        NoiseModel::from_sigmas([p, p, p, r, r, r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    /// Estimate of each pose as of its own timestep.
    #[default]
    Online,
    /// Final estimates after the whole stream.
    Smoothed,
}

impl std::str::FromStr for OutputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "online" => Ok(OutputMode::Online),
            "smoothed" => Ok(OutputMode::Smoothed),
            other => Err(format!("unknown output mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub init: InitConfig,
    pub matcher: MatchConfig,
    pub odometry: OdometryNoise,
    /// Horizontal std of GPS priors without their own covariance.
    pub gps_std_m: f64,
    /// Fuse GPS fixes after initialization; when off GPS only initializes.
    pub gps_after_init: bool,
    /// Prior on the first pose once initialized.
    pub first_pose_pos_std_m: f64,
    pub first_pose_rot_std_deg: f64,
    pub map_priors: bool,
    pub map_prior: MapPriorParams,
    pub cap: bool,
    pub window: usize,
    pub optimizer: OptimizeOptions,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            matcher: MatchConfig::default(),
            odometry: OdometryNoise::default(),
            gps_std_m: 0.5,
            gps_after_init: true,
            first_pose_pos_std_m: 0.5,
            first_pose_rot_std_deg: 5.0,
            map_priors: true,
            map_prior: MapPriorParams::default(),
            cap: true,
            window: 500,
            optimizer: OptimizeOptions::default(),
        }
    }
}

/// Measurements at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: f64,
    /// Odometry motion since the previous frame, in odometry units.
    pub vo_delta: Option<Pose>,
    /// GPS fix in the local ENU frame.
    pub gps: Option<Vector3<f64>>,
    /// Horizontal std of this fix, overriding the configured one.
    pub gps_std_m: Option<f64>,
}

impl Frame {
    pub fn new(t: f64, vo_delta: Option<Pose>, gps: Option<Vector3<f64>>) -> Self {
        Self {
            t,
            vo_delta,
            gps,
            gps_std_m: None,
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub marginal_std_m: f64,
    pub gps_prior: bool,
    pub map_prior: bool,
    pub cap_prior: bool,
    pub optimized: bool,
    pub degraded: bool,
    pub matched_edge: Option<u32>,
    pub lateral_m: Option<f64>,
    pub road_width_m: Option<f64>,
    pub exceeds_road_width: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    pub gps_priors: usize,
    pub map_priors: usize,
    pub cap_priors: usize,
    pub optimizations: usize,
    pub non_converged: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    /// Still collecting the initialization prefix.
    Initializing,
    /// The initialization prefix was aligned and optimized at this step.
    Initialized { poses: Vec<(f64, Pose)>, record: StepRecord },
    Tracking { pose: Pose, record: StepRecord },
}

impl StepOutput {
    pub fn pose(&self) -> Option<&Pose> {
        match self {
            StepOutput::Initializing => None,
            StepOutput::Initialized { poses, .. } => poses.last().map(|(_, p)| p),
            StepOutput::Tracking { pose, .. } => Some(pose),
        }
    }

    pub fn record(&self) -> Option<&StepRecord> {
        match self {
            StepOutput::Initializing => None,
            StepOutput::Initialized { record, .. } | StepOutput::Tracking { record, .. } => Some(record),
        }
    }
}

#[derive(Debug, Clone)]
struct Buffered {
    frame: Frame,
    odom: Pose,
}

/// Online fusion of odometry, GPS and map priors.
#[derive(Debug, Clone)]
pub struct FusionSession {
    map: Option<Arc<MapGraph>>,
    cfg: FusionConfig,
    init: InitState,
    buffer: Vec<Buffered>,
    preset: Option<Alignment>,
    alignment: Option<Alignment>,
    graph: FusionGraph,
    times: Vec<f64>,
    frozen: Vec<Pose>,
    online: Vec<(f64, Pose)>,
    newest_cov: Matrix6<f64>,
    hint: Option<MatchResult>,
    armed: bool,
    last_t: Option<f64>,
    last_gps_t: Option<f64>,
    degraded: bool,
    stats: SessionStats,
}

impl FusionSession {
    pub fn new(map: Option<Arc<MapGraph>>, cfg: FusionConfig) -> Result<Self, FusionError> {
        if cfg.window < 2 {
            return Err(FusionError::InvalidConfig("window must hold at least 2 poses".into()));
        }
        if !(cfg.gps_std_m > 0.0) {
            return Err(FusionError::InvalidConfig("gps std must be positive".into()));
        }
        cfg.odometry.pre_init()?;
        cfg.odometry.post_init(0.0)?;
        let init = InitState::new(cfg.init.clone())?;
        Ok(Self {
            map,
            cfg,
            init,
            buffer: Vec::new(),
            preset: None,
            alignment: None,
            graph: FusionGraph::new(),
            times: Vec::new(),
            frozen: Vec::new(),
            online: Vec::new(),
            newest_cov: Matrix6::zeros(),
            hint: None,
            armed: true,
            last_t: None,
            last_gps_t: None,
            degraded: false,
            stats: SessionStats::default(),
        })
    }

    /// A session that skips scale initialization and maps odometry through
    /// `alignment` from the first frame on.
    pub fn with_alignment(map: Option<Arc<MapGraph>>, cfg: FusionConfig, alignment: Alignment) -> Result<Self, FusionError> {
        let mut s = Self::new(map, cfg)?;
        s.preset = Some(alignment);
        Ok(s)
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn initializer(&self) -> &InitState {
        &self.init
    }

    pub fn alignment(&self) -> Option<&Alignment> {
        self.alignment.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.alignment.is_some()
    }

    pub fn graph(&self) -> &FusionGraph {
        &self.graph
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    /// Set once an optimization failed or did not converge.
    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// Marginal covariance of the newest pose.
    pub fn newest_covariance(&self) -> Option<&Matrix6<f64>> {
        self.is_initialized().then_some(&self.newest_cov)
    }

    pub fn last_gps_age(&self) -> Option<f64> {
        Some(self.last_t? - self.last_gps_t?)
    }

    pub fn online_trajectory(&self) -> &[(f64, Pose)] {
        &self.online
    }

    pub fn smoothed_trajectory(&self) -> Vec<(f64, Pose)> {
        self.frozen
            .iter()
            .chain(self.graph.estimates())
            .enumerate()
            .map(|(k, p)| (self.times[k], *p))
            .collect()
    }

    pub fn trajectory(&self, mode: OutputMode) -> Vec<(f64, Pose)> {
        match mode {
            OutputMode::Online => self.online.clone(),
            OutputMode::Smoothed => self.smoothed_trajectory(),
        }
    }

    fn gps_noise(&self, std: Option<f64>) -> Result<NoiseModel, FusionError> {
        let s = std.unwrap_or(self.cfg.gps_std_m);
        NoiseModel::from_sigmas([s, s, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY])
    }

    fn gps_prior(&self, id: PoseId, fix: Vector3<f64>, std: Option<f64>) -> Result<Factor, FusionError> {
        let rot = self.graph.estimate(id).ok_or(FusionError::UnknownPose(id))?.rotation;
        Ok(Factor::prior(id, Pose::new(fix, rot), self.gps_noise(std)?))
    }

    pub fn step(&mut self, frame: Frame) -> Result<StepOutput, FusionError> {
        if let Some(prev) = self.last_t {
            if !(frame.t > prev) {
                return Err(FusionError::NonMonotonic { prev, t: frame.t });
            }
        }
        if !frame.t.is_finite() {
            return Err(FusionError::NonMonotonic {
                prev: self.last_t.unwrap_or(f64::NAN),
                t: frame.t,
            });
        }
        self.last_t = Some(frame.t);
        if frame.gps.is_some() {
            self.last_gps_t = Some(frame.t);
        }
        if self.alignment.is_none() {
            self.init.feed(frame.t, frame.gps, frame.vo_delta.as_ref());
            self.buffer.push(Buffered {
                frame,
                odom: self.init.odometry_pose(),
            });
            if let Some(a) = self.preset {
                return self.initialize(a);
            }
            if !self.init.is_initialized() {
                return Ok(StepOutput::Initializing);
            }
            let a = self.init.alignment()?;
            return self.initialize(a);
        }
        self.track(frame)
    }

    fn initialize(&mut self, a: Alignment) -> Result<StepOutput, FusionError> {
        self.alignment = Some(a);
        let buffer = std::mem::take(&mut self.buffer);
        let pre = self.cfg.odometry.pre_init()?;
        let mut gps_priors = 0;
        for (k, b) in buffer.iter().enumerate() {
            let id = self.graph.add_pose(a.apply(&b.odom));
            self.times.push(b.frame.t);
            if k == 0 {
                let p = self.cfg.first_pose_pos_std_m;
                let r = self.cfg.first_pose_rot_std_deg.to_radians();
                let noise = NoiseModel::from_sigmas([p, p, p, r, r, r])?;
                let at = *self.graph.estimate(id).expect("just added");
                self.graph.add_factor(Factor::prior(id, at, noise))?;
            } else {
                let d = b.frame.vo_delta.map_or_else(Pose::identity, |d| a.scale_delta(&d));
                self.graph.add_factor(Factor::between(id - 1, id, d, pre))?;
            }
            if let Some(fix) = b.frame.gps {
                let f = self.gps_prior(id, fix, b.frame.gps_std_m)?;
                self.graph.add_factor(f)?;
                gps_priors += 1;
            }
        }
        self.stats.gps_priors += gps_priors;
        let report = self.graph.optimize(&self.cfg.optimizer)?;
        self.stats.optimizations += 1;
        if !report.converged {
            self.stats.non_converged += 1;
            self.degraded = true;
        }
        let last = self.graph.last_id().expect("prefix is not empty");
        self.newest_cov = self.graph.marginal(last)?;
        let poses: Vec<(f64, Pose)> = self
            .graph
            .estimates()
            .iter()
            .zip(&self.times)
            .map(|(p, t)| (*t, *p))
            .collect();
        self.online.extend_from_slice(&poses);
        self.trim_window();

        let (t, pose) = *poses.last().expect("prefix is not empty");
        let mut record = self.record(t, &pose, None);
        record.gps_prior = gps_priors > 0;
        record.optimized = true;
        Ok(StepOutput::Initialized { poses, record })
    }

    fn record(&self, t: f64, pose: &Pose, m: Option<&MatchResult>) -> StepRecord {
        StepRecord {
            t,
            x: pose.x(),
            y: pose.y(),
            z: pose.z(),
            yaw: pose.yaw(),
            marginal_std_m: horizontal_std(&self.newest_cov),
            gps_prior: false,
            map_prior: false,
            cap_prior: false,
            optimized: false,
            degraded: self.degraded,
            matched_edge: m.map(|m| m.map_pose.edge),
            lateral_m: m.map(|m| m.lateral_m),
            road_width_m: m.map(|m| m.road_width_m),
            exceeds_road_width: m.is_some_and(|m| m.exceeds_road_width),
        }
    }

    fn trim_window(&mut self) {
        while self.graph.len() > self.cfg.window {
            let oldest = *self.graph.estimate(self.graph.first_id()).expect("window not empty");
            match self.graph.marginalize_oldest() {
                Ok(()) => self.frozen.push(oldest),
                Err(_) => {
                    self.degraded = true;
                    break;
                }
            }
        }
    }

    fn track(&mut self, frame: Frame) -> Result<StepOutput, FusionError> {
        let a = self.alignment.expect("initialized");
        let prev_id = self.graph.last_id().expect("initialized graph is not empty");
        let prev = *self.graph.estimate(prev_id).expect("newest pose");
        let prev_t = self.times[prev_id];

        // 1. odometry
        let (delta, odo_noise) = match frame.vo_delta {
            Some(d) => {
                let d = a.scale_delta(&d);
                let n = self.cfg.odometry.post_init(d.translation.norm())?;
                (d, n)
            }
            None => (Pose::identity(), self.cfg.odometry.pre_init()?),
        };
        let estimate = prev.compose(&delta);
        let id = self.graph.add_pose(estimate);
        self.times.push(frame.t);
        self.graph.add_factor(Factor::between(prev_id, id, delta, odo_noise))?;
        let cov = propagate_covariance(&prev, &self.newest_cov, &delta, &odo_noise)?;
        let rollback = self.graph.factors().len();

        // 2. gps
        let mut gps_prior = false;
        if let Some(fix) = frame.gps.filter(|_| self.cfg.gps_after_init) {
            let f = self.gps_prior(id, fix, frame.gps_std_m)?;
            self.graph.add_factor(f)?;
            gps_prior = true;
        }

        // 3. map alignment
        let mut map_prior = false;
        let matched = match &self.map {
            Some(map) => match_pose(map, &estimate, self.hint.as_ref(), &self.cfg.matcher),
            None => None,
        };
        if let Some(m) = &matched {
            if !m.exceeds_road_width {
                self.armed = true;
            } else if self.armed && self.cfg.map_priors {
                let dt = frame.t - prev_t;
                let v = prev.rotation.inverse() * (estimate.translation - prev.translation) / dt;
                if let Ok(noise) = map_prior_noise(&prev, &estimate, v.x, v.y, &self.cfg.map_prior) {
                    let target = road_pose(&m.map_pose, &estimate);
                    self.graph.add_factor(Factor::prior(id, target, noise))?;
                    map_prior = true;
                    self.armed = false;
                }
            }
        }
        self.hint = matched;

        // 4. uncertainty cap
        let width = matched.map_or(LANE_WIDTH_M, |m| m.road_width_m);
        let mut cap_prior = false;
        if self.cfg.cap && !gps_prior && !map_prior && horizontal_std(&cov) > width {
            let noise = NoiseModel::from_covariance(&cov)?;
            self.graph.add_factor(Factor::prior(id, estimate, noise))?;
            cap_prior = true;
        }

        // 5. optimize when new absolute information arrived; a lone
        // odometry factor is already satisfied by dead reckoning
        let mut optimized = false;
        if gps_prior || map_prior || cap_prior {
            self.stats.optimizations += 1;
            let solved = self
                .graph
                .optimize(&self.cfg.optimizer)
                .and_then(|r| Ok((r, self.graph.marginal(id)?)));
            match solved {
                Ok((report, marginal)) => {
                    if !report.converged {
                        self.stats.non_converged += 1;
                        self.degraded = true;
                    }
                    self.newest_cov = marginal;
                    optimized = true;
                    self.stats.gps_priors += usize::from(gps_prior);
                    self.stats.map_priors += usize::from(map_prior);
                    self.stats.cap_priors += usize::from(cap_prior);
                }
                Err(_) => {
                    self.stats.failures += 1;
                    self.degraded = true;
                    self.graph.truncate_factors(rollback);
                    self.graph.set_estimate(id, estimate)?;
                    self.newest_cov = cov;
                }
            }
        } else {
            self.newest_cov = cov;
        }
        let pose = if optimized {
            *self.graph.estimate(id).expect("newest pose")
        } else {
            estimate
        };
        self.online.push((frame.t, pose));
        self.trim_window();

        let mut record = self.record(frame.t, &pose, matched.as_ref());
        record.gps_prior = gps_prior;
        record.map_prior = map_prior;
        record.cap_prior = cap_prior;
        record.optimized = optimized;
        Ok(StepOutput::Tracking { pose, record })
    }

    /// Feeds a whole stream, stopping at the first error.
    pub fn run(&mut self, frames: impl IntoIterator<Item = Frame>) -> Result<Vec<StepRecord>, FusionError> {
        let mut records = Vec::new();
        for f in frames {
            if let Some(r) = self.step(f)?.record() {
                records.push(*r);
            }
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, maps, DriftSpec, GpsSpec, Scenario};

    fn short_init() -> InitConfig {
        InitConfig {
            samples_required: 20,
            ..InitConfig::default()
        }
    }

    fn straight_run(drift: DriftSpec, gps_after_init: bool) -> (FusionSession, Vec<StepRecord>) {
        let map = Arc::new(maps::straight(800.0, 1).unwrap());
        let s = Scenario {
            drift,
            gps: GpsSpec {
                period_s: None,
                warmup_s: 60.0,
                noise_std_m: 0.3,
                ..GpsSpec::default()
            },
            seed: 3,
            ..Scenario::default()
        };
        let sim = generate(&map, &s).unwrap();
        let cfg = FusionConfig {
            gps_after_init,
            init: short_init(),
            ..FusionConfig::default()
        };
        let mut session = FusionSession::new(Some(map), cfg).unwrap();
        let records = session.run(sim.frames()).unwrap();
        (session, records)
    }

    #[test]
    fn unbiased_straight_road_needs_no_map_priors() {
        let (session, records) = straight_run(DriftSpec::default(), true);
        assert!(session.is_initialized());
        assert_eq!(session.stats().map_priors, 0);
        assert!(!session.is_degraded());
        let last = records.last().unwrap();
        assert!(last.lateral_m.unwrap() < 1.0);
    }

    #[test]
    fn yaw_drift_triggers_map_priors() {
        // constant lateral drift on a straight road is absorbed by the
        // heading offset, yaw drift is not
        let drift = DriftSpec {
            yaw_deg_per_m: 0.02,
            ..DriftSpec::default()
        };
        let (session, records) = straight_run(drift, false);
        assert!(session.stats().map_priors > 0);
        let width = records.iter().find_map(|r| r.road_width_m).unwrap();
        // map priors keep the estimate near the road, allowing one excursion
        let worst = records.iter().filter_map(|r| r.lateral_m).fold(0.0, f64::max);
        assert!(worst < 2.0 * width + 1.0, "{worst}");
    }

    #[test]
    fn gps_can_be_limited_to_initialization() {
        let map = Arc::new(maps::straight(600.0, 1).unwrap());
        let sim = generate(&map, &Scenario::default()).unwrap();
        let cfg = FusionConfig {
            gps_after_init: false,
            init: short_init(),
            ..FusionConfig::default()
        };
        let mut session = FusionSession::new(Some(map), cfg).unwrap();
        let records = session.run(sim.frames()).unwrap();
        assert!(records.iter().skip(1).all(|r| !r.gps_prior));
        assert!(records[0].gps_prior);
    }

    #[test]
    fn timestamps_must_increase() {
        let mut s = FusionSession::new(None, FusionConfig::default()).unwrap();
        s.step(Frame::new(1.0, None, None)).unwrap();
        let err = s.step(Frame::new(1.0, Some(Pose::identity()), None)).unwrap_err();
        assert_eq!(err, FusionError::NonMonotonic { prev: 1.0, t: 1.0 });
        assert!(s.step(Frame::new(f64::NAN, None, None)).is_err());
    }

    #[test]
    fn preset_alignment_tracks_from_first_frame() {
        let mut s = FusionSession::with_alignment(None, FusionConfig::default(), Alignment::identity()).unwrap();
        assert!(matches!(s.step(Frame::new(0.0, None, None)).unwrap(), StepOutput::Initialized { .. }));
        let d = Pose::from_xy_yaw(1.0, 0.0, 0.0);
        for k in 1..20 {
            s.step(Frame::new(k as f64 * 0.1, Some(d), None)).unwrap();
        }
        let (_, last) = *s.online_trajectory().last().unwrap();
        assert!((last.x() - 19.0).abs() < 1e-9 && last.y().abs() < 1e-9);
        assert_eq!(s.trajectory(OutputMode::Smoothed).len(), 20);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = FusionConfig {
            window: 1,
            ..FusionConfig::default()
        };
        assert!(matches!(FusionSession::new(None, cfg), Err(FusionError::InvalidConfig(_))));
        let cfg = FusionConfig {
            gps_std_m: 0.0,
            ..FusionConfig::default()
        };
        assert!(FusionSession::new(None, cfg).is_err());
    }
}
