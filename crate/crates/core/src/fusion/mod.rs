//! Factor-graph back-end and the online fusion loop.
//!
//! Poses live on the product manifold of translations and rotations:
//! perturbations move the translation in the world frame and the rotation
//! on the right, `(t + dt, R * Exp(dtheta))`. Residuals and information
//! matrices use the same `(x, y, z, roll, pitch, yaw)` ordering.

mod graph;
mod noise;
mod session;
mod skyline;

use thiserror::Error;

use crate::initializer::InitError;

pub use graph::{
    between_residual, horizontal_std, optimize, prior_residual, propagate_covariance, retract, Factor,
    FactorKind, FusionGraph, OptimizeOptions, OptimizeReport, PoseId, Solution,
};
pub use noise::{map_prior_covariance_xy, map_prior_noise, MapPriorParams, NoiseModel, DIMENSION_NAMES};
pub use session::{
    FusionConfig, FusionSession, Frame, OdometryNoise, OutputMode, SessionStats, StepOutput, StepRecord,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("normal equations are singular: pose {pose} is unconstrained in {dimension}")]
    Singular { pose: usize, dimension: &'static str },
    #[error("no pose {0} in the graph window")]
    UnknownPose(usize),
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("vehicle moved only {0} m, too little for a map prior direction")]
    Stationary(f64),
    #[error("graph has no poses")]
    EmptyGraph,
    #[error("pose {0} connects to more than its successor; cannot marginalize")]
    NotChain(usize),
    #[error("timestamp {t} does not follow {prev}")]
    NonMonotonic { prev: f64, t: f64 },
    #[error(transparent)]
    Init(#[from] InitError),
}
