//! Scale and heading initialization of an odometry stream from a GPS prefix.
//!
//! GPS and odometry travel distances are accumulated over windows. A window
//! closes once the GPS distance reaches `md`; it yields a scale sample only
//! if it used at most `C_gps` GPS and `C_vo` odometry measurements, i.e. the
//! vehicle kept at least the minimum average speed `ms`. After
//! `samples_required` samples the scale is the median of the samples.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geom::{heading_between, wrap_angle, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("invalid initializer config: {0}")]
    InvalidConfig(String),
    #[error("initializer has not collected enough samples")]
    NotInitialized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// `(|d_gps| / |d_vo|) * (t_vo / t_gps)`
    LinearRatio,
    /// `(|d_gps|^2 / |d_vo|^2) * (t_vo / t_gps)`
    LiteralSquared,
}

impl std::str::FromStr for ScaleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear-ratio" | "linear" => Ok(ScaleMode::LinearRatio),
            "literal-squared" | "squared" => Ok(ScaleMode::LiteralSquared),
            other => Err(format!("unknown scale mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    /// Minimum GPS distance per scale sample, meters.
    pub md_m: f64,
    /// Minimum average speed, km/h.
    pub ms_kmh: f64,
    pub f_gps_hz: f64,
    pub f_vo_hz: f64,
    pub samples_required: usize,
    pub scale_mode: ScaleMode,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            md_m: 10.0,
            ms_kmh: 18.0,
            f_gps_hz: 1.0,
            f_vo_hz: 10.0,
            samples_required: 50,
            scale_mode: ScaleMode::LinearRatio,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<(), InitError> {
        let positive = [
            ("md_m", self.md_m),
            ("ms_kmh", self.ms_kmh),
            ("f_gps_hz", self.f_gps_hz),
            ("f_vo_hz", self.f_vo_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InitError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.samples_required == 0 {
            return Err(InitError::InvalidConfig("samples_required must be at least 1".into()));
        }
        Ok(())
    }
}

/// Maximum numbers of GPS and odometry measurements `(C_gps, C_vo)` a window
/// may use to cover `md` at speed `ms`.
pub fn measurement_counts(cfg: &InitConfig) -> (u32, u32) {
    let raw = cfg.md_m * 3.6 * cfg.f_gps_hz / cfg.ms_kmh;
    // guard against 2.0000000000000004 becoming 3
    let c_gps = (raw - 1e-9 * raw.max(1.0)).ceil().max(1.0);
    let c_vo = (c_gps * cfg.f_vo_hz / cfg.f_gps_hz).round().max(1.0);
    (c_gps as u32, c_vo as u32)
}

/// One scale sample from accumulated distances and durations.
pub fn scale_sample(mode: ScaleMode, d_gps: f64, d_vo: f64, t_gps: f64, t_vo: f64) -> f64 {
    let ratio = d_gps / d_vo;
    let time = t_vo / t_gps;
    match mode {
        ScaleMode::LinearRatio => ratio * time,
        ScaleMode::LiteralSquared => ratio * ratio * time,
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    wrap_angle(s.atan2(c))
}

/// Similarity taking odometry-frame poses into the global ENU frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    /// Rotation about Up from the odometry frame to ENU, radians.
    pub heading_offset: f64,
    /// First GPS fix, ENU.
    pub anchor_enu: Vector3<f64>,
    /// Odometry-frame pose at the time of the first GPS fix.
    pub anchor_odom: Pose,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            heading_offset: 0.0,
            anchor_enu: Vector3::zeros(),
            anchor_odom: Pose::identity(),
        }
    }

    fn yaw(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(0.0, 0.0, self.heading_offset)
    }

    /// Maps an absolute odometry-frame pose into ENU.
    pub fn apply(&self, p: &Pose) -> Pose {
        let r = self.yaw();
        Pose::new(
            self.anchor_enu + r * ((p.translation - self.anchor_odom.translation) * self.scale),
            r * p.rotation,
        )
    }

    /// Rescales a relative odometry measurement to meters.
    pub fn scale_delta(&self, delta: &Pose) -> Pose {
        Pose::new(delta.translation * self.scale, delta.rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStatus {
    Collecting,
    Initialized { scale: f64, heading_offset: f64 },
}

#[derive(Debug, Clone)]
struct Window {
    t_gps0: f64,
    gps_start: Vector2<f64>,
    vo_start: Vector2<f64>,
    d_gps: f64,
    d_vo: f64,
    n_gps: u32,
    n_vo: u32,
    t_vo0: f64,
    t_vo_last: f64,
}

impl Window {
    fn start(t: f64, gps: Vector2<f64>, vo: Vector2<f64>) -> Self {
        Self {
            t_gps0: t,
            gps_start: gps,
            vo_start: vo,
            d_gps: 0.0,
            d_vo: 0.0,
            n_gps: 0,
            n_vo: 0,
            t_vo0: t,
            t_vo_last: t,
        }
    }
}

/// Accumulated initialization state. Feed measurements in time order.
#[derive(Debug, Clone)]
pub struct InitState {
    cfg: InitConfig,
    counts: (u32, u32),
    status: InitStatus,
    odom: Pose,
    last_t: Option<f64>,
    last_gps: Option<Vector2<f64>>,
    anchor: Option<(Vector3<f64>, Pose)>,
    window: Option<Window>,
    samples: Vec<f64>,
    heading_offsets: Vec<f64>,
    discarded: usize,
}

impl InitState {
    pub fn new(cfg: InitConfig) -> Result<Self, InitError> {
        cfg.validate()?;
        let counts = measurement_counts(&cfg);
        Ok(Self {
            cfg,
            counts,
            status: InitStatus::Collecting,
            odom: Pose::identity(),
            last_t: None,
            last_gps: None,
            anchor: None,
            window: None,
            samples: Vec::new(),
            heading_offsets: Vec::new(),
            discarded: 0,
        })
    }

    pub fn config(&self) -> &InitConfig {
        &self.cfg
    }

    pub fn counts(&self) -> (u32, u32) {
        self.counts
    }

    pub fn status(&self) -> InitStatus {
        self.status
    }

    pub fn is_initialized(&self) -> bool {
        matches!(self.status, InitStatus::Initialized { .. })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn heading_offsets(&self) -> &[f64] {
        &self.heading_offsets
    }

    /// Windows dropped because the vehicle was too slow.
    pub fn discarded_windows(&self) -> usize {
        self.discarded
    }

    /// Odometry-frame pose integrated from every delta fed so far.
    pub fn odometry_pose(&self) -> Pose {
        self.odom
    }

    /// Feeds the measurements of one timestep: the odometry delta ending at
    /// `t` first, then a GPS fix taken at `t`. Input after initialization is
    /// ignored apart from odometry integration.
    pub fn feed(&mut self, t: f64, gps: Option<Vector3<f64>>, vo_delta: Option<&Pose>) -> InitStatus {
        if let Some(last) = self.last_t {
            debug_assert!(t >= last, "timestamps must not decrease");
        }
        self.last_t = Some(t);
        if let Some(d) = vo_delta {
            self.odom = self.odom.compose(d);
            if let Some(w) = self.window.as_mut() {
                w.d_vo += d.translation.norm();
                w.n_vo += 1;
                w.t_vo_last = t;
            }
        }
        if self.is_initialized() {
            return self.status;
        }
        let Some(fix) = gps else {
            return self.status;
        };
        let pos = fix.xy();
        if self.anchor.is_none() {
            self.anchor = Some((fix, self.odom));
        }
        if let (Some(prev), Some(w)) = (self.last_gps, self.window.as_mut()) {
            w.d_gps += (pos - prev).norm();
            w.n_gps += 1;
            let (c_gps, c_vo) = self.counts;
            let within = w.n_gps <= c_gps && w.n_vo <= c_vo;
            if w.d_gps >= self.cfg.md_m {
                let t_gps = t - w.t_gps0;
                let t_vo = w.t_vo_last - w.t_vo0;
                if within && w.d_vo > 0.0 && t_gps > 0.0 && t_vo > 0.0 {
                    self.samples
                        .push(scale_sample(self.cfg.scale_mode, w.d_gps, w.d_vo, t_gps, t_vo));
                    let gps_heading = heading_between(w.gps_start, pos);
                    let vo_heading = heading_between(w.vo_start, self.odom.xy());
                    if let (Ok(g), Ok(v)) = (gps_heading, vo_heading) {
                        self.heading_offsets.push(wrap_angle(g - v));
                    }
                } else {
                    self.discarded += 1;
                }
                self.window = None;
            } else if !within {
                self.discarded += 1;
                self.window = None;
            }
        }
        if self.window.is_none() {
            self.window = Some(Window::start(t, pos, self.odom.xy()));
        }
        self.last_gps = Some(pos);

        if self.samples.len() >= self.cfg.samples_required {
            self.status = InitStatus::Initialized {
                scale: median(&self.samples).expect("samples present"),
                heading_offset: circular_mean(&self.heading_offsets),
            };
        }
        self.status
    }

    pub fn alignment(&self) -> Result<Alignment, InitError> {
        match (self.status, self.anchor) {
            (InitStatus::Initialized { scale, heading_offset }, Some((anchor_enu, anchor_odom))) => {
                Ok(Alignment {
                    scale,
                    heading_offset,
                    anchor_enu,
                    anchor_odom,
                })
            }
            _ => Err(InitError::NotInitialized),
        }
    }
}

/// Rotates, scales and translates an odometry-frame pose prefix into the
/// global frame so the pose at the first GPS fix sits on that fix.
pub fn apply_initialization(state: &InitState, prefix: &[Pose]) -> Result<Vec<Pose>, InitError> {
    let a = state.alignment()?;
    Ok(prefix.iter().map(|p| a.apply(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn counts_examples() {
        let mut cfg = InitConfig {
            md_m: 10.0,
            ms_kmh: 18.0,
            f_gps_hz: 1.0,
            f_vo_hz: 10.0,
            ..InitConfig::default()
        };
        assert_eq!(measurement_counts(&cfg), (2, 20));
        cfg.ms_kmh = 36.0;
        assert_eq!(measurement_counts(&cfg), (1, 10));
        cfg.f_vo_hz = cfg.f_gps_hz;
        let (g, v) = measurement_counts(&cfg);
        assert_eq!(g, v);
    }

    #[test]
    fn sample_examples() {
        assert_eq!(scale_sample(ScaleMode::LiteralSquared, 10.0, 5.0, 2.0, 2.0), 4.0);
        assert_eq!(scale_sample(ScaleMode::LinearRatio, 10.0, 5.0, 2.0, 2.0), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(InitConfig { md_m: 0.0, ..InitConfig::default() }.validate().is_err());
        assert!(InitConfig { samples_required: 0, ..InitConfig::default() }.validate().is_err());
        assert!(InitConfig::default().validate().is_ok());
        assert_eq!("literal-squared".parse::<ScaleMode>(), Ok(ScaleMode::LiteralSquared));
    }

    /// Straight drive east at `speed` m/s; VO at 10 Hz in units of
    /// `1/vo_factor` meters, GPS at 1 Hz.
    fn straight_drive(state: &mut InitState, seconds: usize, speed: f64, vo_factor: f64) {
        let delta = Pose::from_xy_yaw(speed / 10.0 * vo_factor, 0.0, 0.0);
        state.feed(0.0, Some(Vector3::zeros()), None);
        for k in 1..=seconds * 10 {
            let t = k as f64 / 10.0;
            let gps = (k % 10 == 0).then(|| Vector3::new(speed * t, 0.0, 0.0));
            state.feed(t, gps, Some(&delta));
        }
    }

    #[test]
    fn half_scale_vo_gives_two() {
        let mut s = InitState::new(InitConfig::default()).unwrap();
        straight_drive(&mut s, 120, 10.0, 0.5);
        assert!(s.samples().len() >= 50);
        for v in s.samples() {
            assert!((v - 2.0).abs() < 1e-9, "{v}");
        }
        match s.status() {
            InitStatus::Initialized { scale, heading_offset } => {
                assert!((scale - 2.0).abs() < 1e-9);
                assert!(heading_offset.abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slow_vehicle_never_initializes() {
        let mut s = InitState::new(InitConfig::default()).unwrap();
        // 3 m/s is below 18 km/h
        straight_drive(&mut s, 200, 3.0, 1.0);
        assert!(s.samples().is_empty());
        assert!(s.discarded_windows() > 0);
        assert!(!s.is_initialized());
    }

    #[test]
    fn stationary_jitter_never_initializes() {
        let mut s = InitState::new(InitConfig::default()).unwrap();
        let still = Pose::identity();
        for k in 0..5000 {
            let t = k as f64 / 10.0;
            let j = if k % 2 == 0 { 0.3 } else { -0.3 };
            let gps = (k % 10 == 0).then(|| Vector3::new(j, -j, 0.0));
            s.feed(t, gps, Some(&still));
        }
        assert!(!s.is_initialized());
        assert!(s.samples().is_empty());
    }

    #[test]
    fn scale_equivariance() {
        let run = |k: f64| {
            let mut s = InitState::new(InitConfig { samples_required: 10, ..InitConfig::default() }).unwrap();
            straight_drive(&mut s, 40, 12.0, 0.8 * k);
            s.samples().to_vec()
        };
        let base = run(1.0);
        let scaled = run(3.0);
        assert_eq!(base.len(), scaled.len());
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a / 3.0 - b).abs() < 1e-12 * a.abs());
        }
    }

    #[test]
    fn heading_offset_and_alignment() {
        // Odometry frame points east, world motion is north: offset 90 deg.
        let mut s = InitState::new(InitConfig { samples_required: 10, ..InitConfig::default() }).unwrap();
        let delta = Pose::from_xy_yaw(1.0, 0.0, 0.0);
        let start = Vector3::new(100.0, 50.0, 0.0);
        s.feed(0.0, Some(start), None);
        let mut prefix = vec![Pose::identity()];
        for k in 1..=300 {
            let t = k as f64 / 10.0;
            let gps = (k % 10 == 0).then(|| start + Vector3::new(0.0, 10.0 * t, 0.0));
            s.feed(t, gps, Some(&delta));
            prefix.push(s.odometry_pose());
            if s.is_initialized() {
                break;
            }
        }
        let InitStatus::Initialized { scale, heading_offset } = s.status() else {
            panic!("not initialized");
        };
        assert!((scale - 1.0).abs() < 1e-9);
        assert!((heading_offset - FRAC_PI_2).abs() < 1e-9);
        let aligned = apply_initialization(&s, &prefix).unwrap();
        assert!((aligned[0].translation - start).norm() < 1e-9);
        let last = aligned.last().unwrap();
        assert!((last.yaw() - FRAC_PI_2).abs() < 1e-9);
        assert!((last.x() - start.x).abs() < 1e-6);
    }

    #[test]
    fn not_initialized_error() {
        let s = InitState::new(InitConfig::default()).unwrap();
        assert_eq!(apply_initialization(&s, &[]), Err(InitError::NotInitialized));
    }

    #[test]
    fn identity_alignment_is_noop() {
        let a = Alignment::identity();
        let p = Pose::from_xyz_rpy(3.0, -1.0, 0.2, 0.1, 0.0, 0.3);
        let q = a.apply(&p);
        assert!((q.translation - p.translation).norm() < 1e-15);
        assert!(q.rotation.angle_to(&p.rotation) < 1e-12);
    }

    #[test]
    fn median_handles_even_and_outliers() {
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let mut v: Vec<f64> = (0..50).map(|i| 0.5 + 0.001 * (i as f64 - 25.0)).collect();
        let clean = median(&v).unwrap();
        for x in v.iter_mut().step_by(5).take(10) {
            *x *= 10.0;
        }
        assert!((median(&v).unwrap() - clean).abs() / clean < 0.05);
    }
}
