use nalgebra::{Matrix6, Vector6};

use super::skyline::Skyline;
use super::{FusionError, NoiseModel, DIMENSION_NAMES};
use crate::geom::{skew, so3_exp, so3_log, so3_right_jacobian_inv, Pose};

/// Pose variables are identified by a global index that stays valid while
/// older poses are marginalized out of the window.
pub type PoseId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// Relative pose of `j` seen from `i`.
    Between { i: PoseId, j: PoseId, measured: Pose },
    Prior { i: PoseId, measured: Pose },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub noise: NoiseModel,
}

impl Factor {
    pub fn between(i: PoseId, j: PoseId, measured: Pose, noise: NoiseModel) -> Self {
        Self {
            kind: FactorKind::Between { i, j, measured },
            noise,
        }
    }

    pub fn prior(i: PoseId, measured: Pose, noise: NoiseModel) -> Self {
        Self {
            kind: FactorKind::Prior { i, measured },
            noise,
        }
    }

    pub fn touches(&self, id: PoseId) -> bool {
        match self.kind {
            FactorKind::Between { i, j, .. } => i == id || j == id,
            FactorKind::Prior { i, .. } => i == id,
        }
    }
}

/// Perturbs a pose: translation in the world frame, rotation on the right.
pub fn retract(p: &Pose, delta: &Vector6<f64>) -> Pose {
    let dt = delta.fixed_rows::<3>(0).into_owned();
    let dr = delta.fixed_rows::<3>(3).into_owned();
    Pose::new(p.translation + dt, p.rotation * so3_exp(&dr))
}

/// Residual `(t_err, Log(R_err))` of `measured^-1 * (pi^-1 * pj)` and its
/// Jacobians with respect to `pi` and `pj`.
pub fn between_residual(pi: &Pose, pj: &Pose, measured: &Pose) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let ri = pi.rotation_matrix();
    let rj = pj.rotation_matrix();
    let rm = measured.rotation_matrix();
    let d = pj.translation - pi.translation;
    let rmi = rm.transpose() * ri.transpose();
    let rt = rmi * d - rm.transpose() * measured.translation;
    let err_rot = measured.rotation.inverse() * pi.rotation.inverse() * pj.rotation;
    let phi = so3_log(&err_rot);
    let jr_inv = so3_right_jacobian_inv(&phi);

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&rt);
    r.fixed_rows_mut::<3>(3).copy_from(&phi);

    let mut ji = Matrix6::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rmi));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rm.transpose() * skew(&(ri.transpose() * d))));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rj.transpose() * ri));

    let mut jj = Matrix6::zeros();
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&rmi);
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
    (r, ji, jj)
}

/// Residual of a prior: world-frame translation difference and
/// `Log(R_m^T R)`, with its Jacobian.
pub fn prior_residual(p: &Pose, measured: &Pose) -> (Vector6<f64>, Matrix6<f64>) {
    let phi = so3_log(&(measured.rotation.inverse() * p.rotation));
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&(p.translation - measured.translation));
    r.fixed_rows_mut::<3>(3).copy_from(&phi);
    let mut j = Matrix6::identity();
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&so3_right_jacobian_inv(&phi));
    (r, j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop once the cost changes by less than this fraction and the
    /// largest update component is below `rel_step_gate`.
    pub rel_tol: f64,
    /// Meters or radians. Gauss-Newton converges only linearly along weakly
    /// constrained directions, where a tiny cost change can precede a
    /// sizeable remaining correction.
    pub rel_step_gate: f64,
    /// Stop once the update norm drops below this.
    pub step_tol: f64,
    /// Pivot threshold, relative to the diagonal, for singularity.
    pub pivot_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            rel_tol: 1e-9,
            rel_step_gate: 1e-8,
            step_tol: 1e-12,
            pivot_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub poses: Vec<Pose>,
    /// Marginal covariance of every pose in tangent coordinates.
    pub marginals: Vec<Matrix6<f64>>,
    pub report: OptimizeReport,
}

/// Factor graph over a window of pose variables.
#[derive(Debug, Clone, Default)]
pub struct FusionGraph {
    first: PoseId,
    poses: Vec<Pose>,
    factors: Vec<Factor>,
}

fn add_block(h: &mut Skyline, rb: usize, cb: usize, m: &Matrix6<f64>) {
    for r in 0..6 {
        let cols = if rb == cb { r + 1 } else { 6 };
        for c in 0..cols {
            h.add(6 * rb + r, 6 * cb + c, m[(r, c)]);
        }
    }
}

impl FusionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pose(&mut self, initial: Pose) -> PoseId {
        self.poses.push(initial);
        self.first + self.poses.len() - 1
    }

    pub fn first_id(&self) -> PoseId {
        self.first
    }

    /// Id of the newest pose.
    pub fn last_id(&self) -> Option<PoseId> {
        (!self.poses.is_empty()).then(|| self.first + self.poses.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn contains(&self, id: PoseId) -> bool {
        id >= self.first && id < self.first + self.poses.len()
    }

    pub fn estimate(&self, id: PoseId) -> Option<&Pose> {
        id.checked_sub(self.first).and_then(|k| self.poses.get(k))
    }

    pub fn estimates(&self) -> &[Pose] {
        &self.poses
    }

    pub fn set_estimate(&mut self, id: PoseId, p: Pose) -> Result<(), FusionError> {
        let k = self.local(id)?;
        self.poses[k] = p;
        Ok(())
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn add_factor(&mut self, f: Factor) -> Result<(), FusionError> {
        match f.kind {
            FactorKind::Between { i, j, .. } => {
                self.local(i)?;
                self.local(j)?;
                if i == j {
                    return Err(FusionError::InvalidFactor(format!("between factor from pose {i} to itself")));
                }
            }
            FactorKind::Prior { i, .. } => {
                self.local(i)?;
            }
        }
        self.factors.push(f);
        Ok(())
    }

    pub(crate) fn truncate_factors(&mut self, n: usize) {
        self.factors.truncate(n);
    }

    fn local(&self, id: PoseId) -> Result<usize, FusionError> {
        if self.contains(id) {
            Ok(id - self.first)
        } else {
            Err(FusionError::UnknownPose(id))
        }
    }

    fn profile(&self) -> Vec<usize> {
        let mut first_block: Vec<usize> = (0..self.poses.len()).collect();
        for f in &self.factors {
            if let FactorKind::Between { i, j, .. } = f.kind {
                let (a, b) = (i.min(j) - self.first, i.max(j) - self.first);
                first_block[b] = first_block[b].min(a);
            }
        }
        (0..6 * self.poses.len()).map(|r| 6 * first_block[r / 6]).collect()
    }

    /// Total cost `sum r^T info r` at the given values.
    pub fn cost(&self, poses: &[Pose]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let r = match f.kind {
                    FactorKind::Between { i, j, measured } => {
                        between_residual(&poses[i - self.first], &poses[j - self.first], &measured).0
                    }
                    FactorKind::Prior { i, measured } => prior_residual(&poses[i - self.first], &measured).0,
                };
                (r.transpose() * f.noise.information() * r)[0]
            })
            .sum()
    }

    /// Normal equations `H`, gradient `J^T info r`, and cost.
    fn linearize(&self, poses: &[Pose]) -> (Skyline, Vec<f64>, f64) {
        let mut h = Skyline::zeros(self.profile());
        let mut g = vec![0.0; 6 * poses.len()];
        let mut cost = 0.0;
        for f in &self.factors {
            let info = f.noise.information();
            match f.kind {
                FactorKind::Between { i, j, measured } => {
                    let (a, b) = (i - self.first, j - self.first);
                    let (r, ja, jb) = between_residual(&poses[a], &poses[b], &measured);
                    let wr = info * r;
                    cost += r.dot(&wr);
                    let wa = info * ja;
                    let wb = info * jb;
                    add_block(&mut h, a, a, &(ja.transpose() * wa));
                    add_block(&mut h, b, b, &(jb.transpose() * wb));
                    if b > a {
                        add_block(&mut h, b, a, &(jb.transpose() * wa));
                    } else {
                        add_block(&mut h, a, b, &(ja.transpose() * wb));
                    }
                    let ga = ja.transpose() * wr;
                    let gb = jb.transpose() * wr;
                    for k in 0..6 {
                        g[6 * a + k] += ga[k];
                        g[6 * b + k] += gb[k];
                    }
                }
                FactorKind::Prior { i, measured } => {
                    let a = i - self.first;
                    let (r, j) = prior_residual(&poses[a], &measured);
                    let wr = info * r;
                    cost += r.dot(&wr);
                    add_block(&mut h, a, a, &(j.transpose() * info * j));
                    let ga = j.transpose() * wr;
                    for k in 0..6 {
                        g[6 * a + k] += ga[k];
                    }
                }
            }
        }
        (h, g, cost)
    }

    fn factorize(&self, h: &Skyline, tol: f64) -> Result<Skyline, FusionError> {
        h.cholesky(tol).map_err(|p| FusionError::Singular {
            pose: self.first + p.0 / 6,
            dimension: DIMENSION_NAMES[p.0 % 6],
        })
    }

    fn apply(poses: &[Pose], dx: &[f64]) -> Vec<Pose> {
        poses
            .iter()
            .enumerate()
            .map(|(k, p)| retract(p, &Vector6::from_column_slice(&dx[6 * k..6 * k + 6])))
            .collect()
    }

    /// Gauss-Newton from the current estimates, falling back to Levenberg
    /// damping when a step increases the cost. The estimates are replaced by
    /// the best iterate even when the iteration limit is hit.
    pub fn optimize(&mut self, opts: &OptimizeOptions) -> Result<OptimizeReport, FusionError> {
        if self.poses.is_empty() {
            return Err(FusionError::EmptyGraph);
        }
        let (mut h, mut g, mut cost) = self.linearize(&self.poses);
        let initial_cost = cost;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iterations {
            iterations += 1;
            let l = self.factorize(&h, opts.pivot_tol)?;
            let mut dx: Vec<f64> = g.iter().map(|v| -v).collect();
            l.solve_in_place(&mut dx);
            let mut cand = Self::apply(&self.poses, &dx);
            let mut cand_cost = self.cost(&cand);

            if !(cand_cost <= cost) {
                let diag = h.diagonal();
                let mut lambda = 1e-4;
                let mut accepted = false;
                for _ in 0..12 {
                    let mut damped = h.clone();
                    damped.add_diagonal(&diag.iter().map(|d| lambda * d.max(1e-12)).collect::<Vec<_>>());
                    let ld = self.factorize(&damped, opts.pivot_tol)?;
                    dx = g.iter().map(|v| -v).collect();
                    ld.solve_in_place(&mut dx);
                    cand = Self::apply(&self.poses, &dx);
                    cand_cost = self.cost(&cand);
                    if cand_cost < cost {
                        accepted = true;
                        break;
                    }
                    lambda *= 10.0;
                }
                if !accepted {
                    // no descent direction left at this precision
                    converged = true;
                    break;
                }
            }

            let step = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let largest = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rel = (cost - cand_cost).abs() / cost.max(f64::MIN_POSITIVE);
            self.poses = cand;
            cost = cand_cost;
            if (rel < opts.rel_tol && largest < opts.rel_step_gate) || step < opts.step_tol || cost == 0.0 {
                converged = true;
                break;
            }
            (h, g, cost) = self.linearize(&self.poses);
        }
        Ok(OptimizeReport {
            iterations,
            converged,
            initial_cost,
            final_cost: cost,
        })
    }

    fn factor_at_estimates(&self, tol: f64) -> Result<Skyline, FusionError> {
        if self.poses.is_empty() {
            return Err(FusionError::EmptyGraph);
        }
        let (h, _, _) = self.linearize(&self.poses);
        self.factorize(&h, tol)
    }

    fn block_of_inverse(l: &Skyline, k: usize) -> Matrix6<f64> {
        let n = l.dim();
        let mut out = Matrix6::zeros();
        let mut col = vec![0.0; n];
        for c in 0..6 {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[6 * k + c] = 1.0;
            l.solve_in_place(&mut col);
            for r in 0..6 {
                out[(r, c)] = col[6 * k + r];
            }
        }
        (out + out.transpose()) * 0.5
    }

    /// Marginal covariance of one pose at the current estimates.
    pub fn marginal(&self, id: PoseId) -> Result<Matrix6<f64>, FusionError> {
        let k = self.local(id)?;
        let l = self.factor_at_estimates(OptimizeOptions::default().pivot_tol)?;
        Ok(Self::block_of_inverse(&l, k))
    }

    pub fn marginals(&self) -> Result<Vec<Matrix6<f64>>, FusionError> {
        let l = self.factor_at_estimates(OptimizeOptions::default().pivot_tol)?;
        Ok((0..self.poses.len()).map(|k| Self::block_of_inverse(&l, k)).collect())
    }

    /// Removes the oldest pose, folding everything it knew into a prior on
    /// its successor (Schur complement at the current estimates). Requires
    /// the oldest pose to connect only to its successor.
    pub fn marginalize_oldest(&mut self) -> Result<(), FusionError> {
        if self.poses.len() < 2 {
            return Err(FusionError::EmptyGraph);
        }
        let o = self.first;
        let next = o + 1;
        let (x0, x1) = (self.poses[0], self.poses[1]);
        let mut a = Matrix6::zeros();
        let mut c = Matrix6::zeros();
        let mut d = Matrix6::zeros();
        let mut g0 = Vector6::zeros();
        let mut g1 = Vector6::zeros();
        for f in self.factors.iter().filter(|f| f.touches(o)) {
            let info = f.noise.information();
            match f.kind {
                FactorKind::Prior { measured, .. } => {
                    let (r, j) = prior_residual(&x0, &measured);
                    a += j.transpose() * info * j;
                    g0 += j.transpose() * info * r;
                }
                FactorKind::Between { i, j, measured } => {
                    let other = if i == o { j } else { i };
                    if other != next {
                        return Err(FusionError::NotChain(o));
                    }
                    let (r, j0, j1) = if i == o {
                        between_residual(&x0, &x1, &measured)
                    } else {
                        let (r, ji, jj) = between_residual(&x1, &x0, &measured);
                        (r, jj, ji)
                    };
                    a += j0.transpose() * info * j0;
                    c += j0.transpose() * info * j1;
                    d += j1.transpose() * info * j1;
                    g0 += j0.transpose() * info * r;
                    g1 += j1.transpose() * info * r;
                }
            }
        }
        let a_inv = a
            .cholesky()
            .ok_or(FusionError::Singular { pose: o, dimension: "x" })?
            .inverse();
        let hm = d - c.transpose() * a_inv * c;
        let hm = (hm + hm.transpose()) * 0.5;
        let gm = g1 - c.transpose() * a_inv * g0;
        let delta = -hm
            .cholesky()
            .ok_or(FusionError::Singular { pose: next, dimension: "x" })?
            .solve(&gm);
        let measured = retract(&x1, &delta);
        // The prior's Jacobian at x1 is not the identity when delta is
        // nonzero; pick the information so J^T info J reproduces hm there.
        let (_, j) = prior_residual(&x1, &measured);
        let j_inv = j
            .try_inverse()
            .ok_or(FusionError::Singular { pose: next, dimension: "roll" })?;
        let info = j_inv.transpose() * hm * j_inv;

        self.factors.retain(|f| !f.touches(o));
        self.poses.remove(0);
        self.first += 1;
        let noise = NoiseModel::from_information((info + info.transpose()) * 0.5)?;
        self.factors.push(Factor::prior(next, measured, noise));
        Ok(())
    }
}

/// Optimizes `graph` from the given initial values and returns the
/// estimates with every pose's marginal covariance.
pub fn optimize(graph: &FusionGraph, initial: &[Pose], opts: &OptimizeOptions) -> Result<Solution, FusionError> {
    if initial.len() != graph.len() {
        return Err(FusionError::InvalidFactor(format!(
            "{} initial values for {} poses",
            initial.len(),
            graph.len()
        )));
    }
    let mut g = graph.clone();
    g.poses = initial.to_vec();
    let report = g.optimize(opts)?;
    let marginals = g.marginals()?;
    Ok(Solution {
        poses: g.poses,
        marginals,
        report,
    })
}

/// Covariance of `pj = pi * measured` given the covariance of `pi` and the
/// between-factor information, linearized at zero residual.
pub fn propagate_covariance(
    pi: &Pose,
    cov_i: &Matrix6<f64>,
    measured: &Pose,
    noise: &NoiseModel,
) -> Result<Matrix6<f64>, FusionError> {
    let pj = pi.compose(measured);
    let (_, ji, jj) = between_residual(pi, &pj, measured);
    let q = noise
        .information()
        .cholesky()
        .ok_or_else(|| FusionError::InvalidNoise("odometry noise must be full rank".into()))?
        .inverse();
    let jj_inv = jj
        .try_inverse()
        .ok_or_else(|| FusionError::InvalidNoise("degenerate odometry Jacobian".into()))?;
    let s = jj_inv * (ji * cov_i * ji.transpose() + q) * jj_inv.transpose();
    Ok((s + s.transpose()) * 0.5)
}

/// Largest standard deviation of the horizontal position block.
pub fn horizontal_std(cov: &Matrix6<f64>) -> f64 {
    let b = cov.fixed_view::<2, 2>(0, 0).into_owned();
    let b = (b + b.transpose()) * 0.5;
    b.symmetric_eigenvalues().max().max(0.0).sqrt()
}
