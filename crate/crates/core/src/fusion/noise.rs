use nalgebra::{Matrix2, Matrix6, SymmetricEigen, Vector2};

use super::FusionError;
use crate::geom::Pose;

/// Gaussian noise as a 6x6 information matrix over the tangent coordinates
/// `(x, y, z, roll, pitch, yaw)`. A zero row leaves that dimension
/// unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    info: Matrix6<f64>,
}

pub const DIMENSION_NAMES: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];

impl NoiseModel {
    pub fn from_information(info: Matrix6<f64>) -> Result<Self, FusionError> {
        if info.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::InvalidNoise("non-finite information entry".into()));
        }
        let scale = info.abs().max().max(1.0);
        if (info - info.transpose()).abs().max() > 1e-9 * scale {
            return Err(FusionError::InvalidNoise("information matrix is not symmetric".into()));
        }
        let sym = (info + info.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < -1e-9 * scale {
            return Err(FusionError::InvalidNoise(format!(
                "information matrix is indefinite (eigenvalue {min_eig})"
            )));
        }
        Ok(Self { info: sym })
    }

    /// Diagonal noise from standard deviations; an infinite sigma gives zero
    /// information.
    pub fn from_sigmas(sigmas: [f64; 6]) -> Result<Self, FusionError> {
        let mut info = Matrix6::zeros();
        for (k, s) in sigmas.iter().enumerate() {
            if s.is_nan() || *s <= 0.0 {
                return Err(FusionError::InvalidNoise(format!(
                    "sigma for {} must be positive, got {s}",
                    DIMENSION_NAMES[k]
                )));
            }
            info[(k, k)] = if s.is_infinite() { 0.0 } else { 1.0 / (s * s) };
        }
        Ok(Self { info })
    }

    /// Inverse of a positive definite covariance.
    pub fn from_covariance(cov: &Matrix6<f64>) -> Result<Self, FusionError> {
        let sym = (cov + cov.transpose()) * 0.5;
        let info = sym
            .cholesky()
            .ok_or_else(|| FusionError::InvalidNoise("covariance is not positive definite".into()))?
            .inverse();
        Self::from_information((info + info.transpose()) * 0.5)
    }

    pub fn information(&self) -> &Matrix6<f64> {
        &self.info
    }
}

/// Horizontal covariance of a map prior: eigenvectors along and across the
/// direction of travel `cur - prev`, eigenvalues the longitudinal and
/// lateral speeds, each floored at `floor`.
pub fn map_prior_covariance_xy(
    prev: &Pose,
    cur: &Pose,
    v_lon: f64,
    v_lat: f64,
    floor: f64,
    min_motion: f64,
) -> Result<Matrix2<f64>, FusionError> {
    let d = cur.xy() - prev.xy();
    let n = d.norm();
    if !(n > min_motion) {
        return Err(FusionError::Stationary(n));
    }
    let e1 = d / n;
    let e2 = Vector2::new(d.y, -d.x) / n;
    let v = Matrix2::from_columns(&[e1, e2]);
    let lambda = Matrix2::from_diagonal(&Vector2::new(v_lon.abs().max(floor), v_lat.abs().max(floor)));
    // V is orthonormal, so V^-1 = V^T
    let sigma = v * lambda * v.transpose();
    Ok((sigma + sigma.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPriorParams {
    pub eigen_floor: f64,
    pub yaw_std_deg: f64,
    pub min_motion_m: f64,
}

impl Default for MapPriorParams {
    fn default() -> Self {
        Self {
            eigen_floor: 0.01,
            yaw_std_deg: 10.0,
            min_motion_m: 1e-3,
        }
    }
}

/// Map prior noise: the speed-shaped horizontal covariance, a fixed yaw
/// deviation, and no information on height, roll or pitch.
pub fn map_prior_noise(
    prev: &Pose,
    cur: &Pose,
    v_lon: f64,
    v_lat: f64,
    params: &MapPriorParams,
) -> Result<NoiseModel, FusionError> {
    let sigma = map_prior_covariance_xy(prev, cur, v_lon, v_lat, params.eigen_floor, params.min_motion_m)?;
    let xy_info = sigma
        .try_inverse()
        .ok_or_else(|| FusionError::InvalidNoise("singular map covariance".into()))?;
    let mut info = Matrix6::zeros();
    info.fixed_view_mut::<2, 2>(0, 0).copy_from(&((xy_info + xy_info.transpose()) * 0.5));
    let yaw = params.yaw_std_deg.to_radians();
    info[(5, 5)] = 1.0 / (yaw * yaw);
    NoiseModel::from_information(info)
}
