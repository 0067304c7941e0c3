//! Trajectory association, rigid alignment, and 2D absolute trajectory
//! error with delocalization detection.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::geom::Pose;

/// Estimates farther than this from the truth count as delocalized.
pub const DELOCALIZATION_THRESHOLD_M: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory is empty")]
    Empty,
    #[error("timestamps must increase strictly (entry {0})")]
    NonIncreasing(usize),
    #[error("no timestamp pairs within the association tolerance")]
    NoPairs,
    #[error("alignment needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(k) = poses.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NonIncreasing(k + 1));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[(f64, Pose)] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Applies `t * pose` to every pose.
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub t: f64,
    pub est: Pose,
    pub gt: Pose,
}

/// Pairs every ground-truth pose with the nearest-in-time estimate within
/// `max_dt`; ground-truth poses without one are dropped.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<Pair>, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let e = est.poses();
    let mut pairs = Vec::new();
    for (t, g) in gt.poses() {
        let k = e.partition_point(|(s, _)| s < t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < e.len())
            .min_by(|&a, &b| (e[a].0 - t).abs().total_cmp(&(e[b].0 - t).abs()));
        if let Some(i) = best {
            if (e[i].0 - t).abs() <= max_dt {
                pairs.push(Pair {
                    t: *t,
                    est: e[i].1,
                    gt: *g,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    Ok(pairs)
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Dominant direction of a centered point set, signed so it points from the
/// first point toward the last.
fn dominant_direction(points: &[Vector3<f64>], c: &Vector3<f64>) -> Option<Vector3<f64>> {
    let cov: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    if eig.eigenvalues[k] <= 0.0 {
        return None;
    }
    let mut d: Vector3<f64> = eig.eigenvectors.column(k).into_owned();
    let span = points[points.len() - 1] - points[0];
    if d.dot(&span) < 0.0 {
        d = -d;
    }
    Some(d)
}

/// Rigid transform `T` minimizing `sum |T * est - gt|^2` over the pair
/// positions. Collinear inputs rotate the dominant estimated direction onto
/// the dominant true direction.
pub fn align_6dof(pairs: &[Pair]) -> Result<Pose, EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let pe: Vec<Vector3<f64>> = pairs.iter().map(|p| p.est.translation).collect();
    let pg: Vec<Vector3<f64>> = pairs.iter().map(|p| p.gt.translation).collect();
    let ce = centroid(&pe);
    let cg = centroid(&pg);
    let h: Matrix3<f64> = pe
        .iter()
        .zip(&pg)
        .map(|(e, g)| (e - ce) * (g - cg).transpose())
        .sum();
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    let rot = if sv[0] <= 0.0 {
        Matrix3::identity()
    } else if sv[1] <= 1e-9 * sv[0] {
        match (dominant_direction(&pe, &ce), dominant_direction(&pg, &cg)) {
            (Some(de), Some(dg)) => UnitQuaternion::rotation_between(&de, &dg)
                .unwrap_or_else(|| {
                    // opposite directions: half turn about Up
                    UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::PI)
                })
                .to_rotation_matrix()
                .into_inner(),
            _ => Matrix3::identity(),
        }
    } else {
        let u = svd.u.expect("requested");
        let v = svd.v_t.expect("requested").transpose();
        let d = (v * u.transpose()).determinant().signum();
        v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose()
    };
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    Ok(Pose::new(cg - q * ce, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DelocMetric {
    #[default]
    Max,
    Rmse,
}

impl std::str::FromStr for DelocMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(DelocMetric::Max),
            "rmse" => Ok(DelocMetric::Rmse),
            other => Err(format!("unknown delocalization metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub max_error: f64,
    pub pairs: usize,
    pub delocalized: bool,
    pub deloc_metric: DelocMetric,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

/// Horizontal position errors of already aligned pairs.
pub fn ate_2d(pairs: &[Pair], metric: DelocMetric) -> AteReport {
    let errors: Vec<f64> = pairs.iter().map(|p| (p.est.xy() - p.gt.xy()).norm()).collect();
    let n = errors.len().max(1) as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let delocalized = match metric {
        DelocMetric::Max => max_error > DELOCALIZATION_THRESHOLD_M,
        DelocMetric::Rmse => rmse > DELOCALIZATION_THRESHOLD_M,
    };
    AteReport {
        rmse,
        mean,
        max_error,
        pairs: errors.len(),
        delocalized,
        deloc_metric: metric,
        times: pairs.iter().map(|p| p.t).collect(),
        errors,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub max_dt: f64,
    pub align: bool,
    pub metric: DelocMetric,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_dt: 0.02,
            align: true,
            metric: DelocMetric::Max,
        }
    }
}

/// Associates, optionally aligns, and scores `est` against `gt`.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, opts: &EvalOptions) -> Result<AteReport, EvalError> {
    let mut pairs = associate(est, gt, opts.max_dt)?;
    if opts.align {
        let t = align_6dof(&pairs)?;
        for p in &mut pairs {
            p.est = t.compose(&p.est);
        }
    }
    Ok(ate_2d(&pairs, opts.metric))
}
