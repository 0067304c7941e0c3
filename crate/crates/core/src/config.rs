//! Toolkit configuration: `key = value` lines, grouped under `[section]`
//! headers or written with dotted keys (`fusion.window = 300`). Defaults are
//! built in; a file overrides them and explicit overrides beat the file.
//!
//! ```text
//! [init]
//! md_m = 10
//! samples = 50
//!
//! [fusion]
//! map_priors = true
//! output = online
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::EvalOptions;
use crate::fusion::{FusionConfig, OutputMode};
use crate::mapgraph::BuildConfig;

pub const CONFIG_ENV: &str = "MAPFUSION_CONFIG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolkitConfig {
    pub mapgraph: BuildConfig,
    pub fusion: FusionConfig,
    pub output: OutputMode,
    pub eval: EvalOptions,
    /// Seconds within which a GPS fix joins an odometry frame.
    pub gps_merge_tol_s: f64,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            mapgraph: BuildConfig::default(),
            fusion: FusionConfig::default(),
            output: OutputMode::default(),
            eval: EvalOptions::default(),
            gps_merge_tol_s: 1e-3,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mapgraph.step_m",
    "mapgraph.window",
    "mapgraph.grid_cell_m",
    "init.md_m",
    "init.ms_kmh",
    "init.f_gps_hz",
    "init.f_vo_hz",
    "init.samples",
    "init.scale_mode",
    "matcher.radius_m",
    "matcher.widen_radius_m",
    "fusion.gps_std_m",
    "fusion.gps_after_init",
    "fusion.first_pose_pos_std_m",
    "fusion.first_pose_rot_std_deg",
    "fusion.odom_pre_init_pos_std_m",
    "fusion.odom_pos_std_base_m",
    "fusion.odom_pos_std_per_m",
    "fusion.odom_rot_std_deg",
    "fusion.map_priors",
    "fusion.map_eigen_floor",
    "fusion.map_yaw_std_deg",
    "fusion.cap",
    "fusion.window",
    "fusion.output",
    "fusion.max_iterations",
    "fusion.rel_tol",
    "fusion.rel_step_gate",
    "fusion.gps_merge_tol_s",
    "eval.max_dt",
    "eval.align",
    "eval.deloc_metric",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad value {v:?} for {key}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("bad boolean {v:?} for {key}")),
    }
}

impl ToolkitConfig {
    pub fn defaults() -> Self {
        Self::default()
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let f = &mut self.fusion;
        match key {
            "mapgraph.step_m" => self.mapgraph.step_m = parse(key, v)?,
            "mapgraph.window" => self.mapgraph.smoothing_window = parse(key, v)?,
            "mapgraph.grid_cell_m" => self.mapgraph.grid_cell_m = parse(key, v)?,
            "init.md_m" => f.init.md_m = parse(key, v)?,
            "init.ms_kmh" => f.init.ms_kmh = parse(key, v)?,
            "init.f_gps_hz" => f.init.f_gps_hz = parse(key, v)?,
            "init.f_vo_hz" => f.init.f_vo_hz = parse(key, v)?,
            "init.samples" => f.init.samples_required = parse(key, v)?,
            "init.scale_mode" => f.init.scale_mode = v.parse()?,
            "matcher.radius_m" => f.matcher.radius_m = parse(key, v)?,
            "matcher.widen_radius_m" => f.matcher.widen_radius_m = parse(key, v)?,
            "fusion.gps_std_m" => f.gps_std_m = parse(key, v)?,
            "fusion.gps_after_init" => f.gps_after_init = boolean(key, v)?,
            "fusion.first_pose_pos_std_m" => f.first_pose_pos_std_m = parse(key, v)?,
            "fusion.first_pose_rot_std_deg" => f.first_pose_rot_std_deg = parse(key, v)?,
            "fusion.odom_pre_init_pos_std_m" => f.odometry.pre_init_pos_std_m = parse(key, v)?,
            "fusion.odom_pos_std_base_m" => f.odometry.pos_std_base_m = parse(key, v)?,
            "fusion.odom_pos_std_per_m" => f.odometry.pos_std_per_m = parse(key, v)?,
            "fusion.odom_rot_std_deg" => f.odometry.rot_std_deg = parse(key, v)?,
            "fusion.map_priors" => f.map_priors = boolean(key, v)?,
            "fusion.map_eigen_floor" => f.map_prior.eigen_floor = parse(key, v)?,
            "fusion.map_yaw_std_deg" => f.map_prior.yaw_std_deg = parse(key, v)?,
            "fusion.cap" => f.cap = boolean(key, v)?,
            "fusion.window" => f.window = parse(key, v)?,
            "fusion.output" => self.output = v.parse()?,
            "fusion.max_iterations" => f.optimizer.max_iterations = parse(key, v)?,
            "fusion.rel_tol" => f.optimizer.rel_tol = parse(key, v)?,
            "fusion.rel_step_gate" => f.optimizer.rel_step_gate = parse(key, v)?,
            "fusion.gps_merge_tol_s" => self.gps_merge_tol_s = parse(key, v)?,
            "eval.max_dt" => self.eval.max_dt = parse(key, v)?,
            "eval.align" => self.eval.align = boolean(key, v)?,
            "eval.deloc_metric" => self.eval.metric = v.parse()?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies a config file's lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let err = |message: String| ConfigError::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
                let name = name.trim();
                if !KEYS.iter().any(|k| k.starts_with(&format!("{name}."))) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let key = match &section {
                Some(s) if !k.contains('.') => format!("{s}.{k}"),
                _ => k.to_string(),
            };
            self.set(&key, v).map_err(err)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            let err = |message: String| ConfigError::Parse {
                source_name: "--set".into(),
                line: i + 1,
                message,
            };
            let (k, v) = o.split_once('=').ok_or_else(|| err(format!("{o:?} is not key=value")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let g = &self.mapgraph;
        if !(g.step_m > 0.0) || !(g.grid_cell_m > 0.0) {
            return bad("mapgraph step and grid cell must be positive".into());
        }
        if g.smoothing_window.is_multiple_of(2) {
            return bad("mapgraph.window must be odd".into());
        }
        let f = &self.fusion;
        f.init.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(f.matcher.radius_m > 0.0) || f.matcher.widen_radius_m < f.matcher.radius_m {
            return bad("matcher radius must be positive and not above the widened radius".into());
        }
        let positive = [
            ("fusion.gps_std_m", f.gps_std_m),
            ("fusion.first_pose_pos_std_m", f.first_pose_pos_std_m),
            ("fusion.first_pose_rot_std_deg", f.first_pose_rot_std_deg),
            ("fusion.odom_pre_init_pos_std_m", f.odometry.pre_init_pos_std_m),
            ("fusion.odom_pos_std_base_m", f.odometry.pos_std_base_m),
            ("fusion.odom_rot_std_deg", f.odometry.rot_std_deg),
            ("fusion.map_eigen_floor", f.map_prior.eigen_floor),
            ("fusion.map_yaw_std_deg", f.map_prior.yaw_std_deg),
            ("fusion.rel_tol", f.optimizer.rel_tol),
            ("fusion.rel_step_gate", f.optimizer.rel_step_gate),
            ("eval.max_dt", self.eval.max_dt),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        if f.odometry.pos_std_per_m < 0.0 || !(self.gps_merge_tol_s >= 0.0) {
            return bad("fusion.odom_pos_std_per_m and fusion.gps_merge_tol_s must not be negative".into());
        }
        if f.window < 2 {
            return bad("fusion.window must be at least 2".into());
        }
        if f.optimizer.max_iterations == 0 {
            return bad("fusion.max_iterations must be at least 1".into());
        }
        Ok(())
    }

    /// Defaults, then the file at `path` (or `$MAPFUSION_CONFIG` when no
    /// path is given), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults();
        let path: Option<PathBuf> = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        if let Some(p) = path {
            let text = std::fs::read_to_string(&p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
