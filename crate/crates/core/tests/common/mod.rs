//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use mapfusion::fusion::{Factor, FactorKind, FusionGraph, NoiseModel};
use mapfusion::geom::Pose;
use mapfusion::mapgraph::{MapGraph, MapPose};
use mapfusion::matcher::MatchResult;
use mapfusion::sim::maps::{self, Way};
use nalgebra::{DMatrix, DVector, Isometry3, Matrix6, Translation3, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn iso(p: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(p.translation), p.rotation)
}

/// Residual of one factor, computed through nalgebra isometries.
pub fn oracle_residual(f: &Factor, poses: &[Pose]) -> Vector6<f64> {
    match &f.kind {
        FactorKind::Between { i, j, measured } => {
            let e = iso(measured).inverse() * (iso(&poses[*i]).inverse() * iso(&poses[*j]));
            let r = e.rotation.scaled_axis();
            Vector6::new(e.translation.x, e.translation.y, e.translation.z, r.x, r.y, r.z)
        }
        FactorKind::Prior { i, measured } => {
            let t = poses[*i].translation - measured.translation;
            let r = (measured.rotation.inverse() * poses[*i].rotation).scaled_axis();
            Vector6::new(t.x, t.y, t.z, r.x, r.y, r.z)
        }
    }
}

fn perturb(p: &Pose, k: usize, h: f64) -> Pose {
    let mut t = p.translation;
    let mut q = p.rotation;
    if k < 3 {
        t[k] += h;
    } else {
        let mut v = Vector3::zeros();
        v[k - 3] = h;
        q *= UnitQuaternion::from_scaled_axis(v);
    }
    Pose::new(t, q)
}

pub fn oracle_cost(factors: &[Factor], poses: &[Pose]) -> f64 {
    factors
        .iter()
        .map(|f| {
            let r = oracle_residual(f, poses);
            (r.transpose() * f.noise.information() * r)[0]
        })
        .sum()
}

/// Dense Gauss-Newton with central-difference Jacobians and step halving.
pub fn dense_gauss_newton(factors: &[Factor], initial: &[Pose]) -> Vec<Pose> {
    let n = initial.len();
    let mut x = initial.to_vec();
    let h = 1e-6;
    for _ in 0..100 {
        let mut hm = DMatrix::<f64>::zeros(6 * n, 6 * n);
        let mut g = DVector::<f64>::zeros(6 * n);
        for f in factors {
            let r = oracle_residual(f, &x);
            let vars: Vec<usize> = match f.kind {
                FactorKind::Between { i, j, .. } => vec![i, j],
                FactorKind::Prior { i, .. } => vec![i],
            };
            let mut jac = DMatrix::<f64>::zeros(6, 6 * n);
            for &v in &vars {
                for k in 0..6 {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[v] = perturb(&x[v], k, h);
                    minus[v] = perturb(&x[v], k, -h);
                    let d = (oracle_residual(f, &plus) - oracle_residual(f, &minus)) / (2.0 * h);
                    jac.view_mut((0, 6 * v + k), (6, 1)).copy_from(&d);
                }
            }
            let info = DMatrix::from_fn(6, 6, |a, b| f.noise.information()[(a, b)]);
            let jt_info = jac.transpose() * &info;
            hm += &jt_info * &jac;
            g += &jt_info * DVector::from_column_slice(r.as_slice());
        }
        let Some(chol) = hm.clone().cholesky() else {
            panic!("oracle normal equations singular");
        };
        let dx = -chol.solve(&g);
        let base = oracle_cost(factors, &x);
        let mut alpha = 1.0;
        let mut next = x.clone();
        for _ in 0..30 {
            next = (0..n)
                .map(|v| {
                    let d = dx.rows(6 * v, 6) * alpha;
                    let t = x[v].translation + Vector3::new(d[0], d[1], d[2]);
                    let q = x[v].rotation * UnitQuaternion::from_scaled_axis(Vector3::new(d[3], d[4], d[5]));
                    Pose::new(t, q)
                })
                .collect();
            if oracle_cost(factors, &next) <= base {
                break;
            }
            alpha *= 0.5;
        }
        x = next;
        if dx.amax() * alpha < 1e-12 {
            break;
        }
    }
    x
}

pub fn random_pose(r: &mut ChaCha8Rng, pos: f64, rot: f64) -> Pose {
    let mut u = || r.random_range(-1.0..1.0);
    Pose::from_xyz_rpy(pos * u(), pos * u(), pos * u(), rot * u(), rot * u(), rot * u())
}

pub fn noisy(r: &mut ChaCha8Rng, p: &Pose, pos: f64, rot: f64) -> Pose {
    p.compose(&random_pose(r, pos, rot))
}

pub struct RandomGraph {
    pub truth: Vec<Pose>,
    pub initial: Vec<Pose>,
    /// Factors in insertion order; betweens into pose `k` and priors on it
    /// come before anything touching pose `k + 1`.
    pub factors: Vec<Factor>,
}

/// A random walk of up to `max_poses` poses with chain betweens, a few loop
/// closures, a full prior on pose 0 and partial GPS- or map-like priors.
pub fn random_graph(seed: u64, max_poses: usize) -> RandomGraph {
    let mut r = rng(seed);
    let n = r.random_range(2..=max_poses);
    let mut truth = vec![random_pose(&mut r, 5.0, 0.3)];
    for _ in 1..n {
        let step = Pose::from_xyz_rpy(
            r.random_range(0.5..3.0),
            r.random_range(-0.5..0.5),
            r.random_range(-0.1..0.1),
            r.random_range(-0.05..0.05),
            r.random_range(-0.05..0.05),
            r.random_range(-0.4..0.4),
        );
        let last = *truth.last().unwrap();
        truth.push(last.compose(&step));
    }
    let odo = |r: &mut ChaCha8Rng| {
        let p = r.random_range(0.05..0.3);
        let a = r.random_range(0.005..0.05);
        NoiseModel::from_sigmas([p, p, p, a, a, a]).unwrap()
    };
    let mut factors = vec![Factor::prior(
        0,
        noisy(&mut r, &truth[0], 0.2, 0.02),
        NoiseModel::from_sigmas([0.5, 0.5, 0.5, 0.05, 0.05, 0.05]).unwrap(),
    )];
    for j in 1..n {
        let m = noisy(&mut r, &truth[j - 1].relative_to(&truth[j]), 0.05, 0.01);
        let noise = odo(&mut r);
        factors.push(Factor::between(j - 1, j, m, noise));
        if j >= 3 && r.random_bool(0.2) {
            let i = r.random_range(0..j - 1);
            let m = noisy(&mut r, &truth[i].relative_to(&truth[j]), 0.05, 0.01);
            let noise = odo(&mut r);
            factors.push(Factor::between(i, j, m, noise));
        }
        if r.random_bool(0.3) {
            let m = noisy(&mut r, &truth[j], 0.5, 0.05);
            let inf = f64::INFINITY;
            let sig = if r.random_bool(0.5) {
                [0.5, 0.5, inf, inf, inf, inf]
            } else {
                [1.5, 0.7, inf, inf, inf, 0.17]
            };
            factors.push(Factor::prior(j, m, NoiseModel::from_sigmas(sig).unwrap()));
        }
    }
    let initial = truth.iter().map(|p| noisy(&mut r, p, 0.3, 0.03)).collect();
    RandomGraph { truth, initial, factors }
}

/// Builds `g` in the library graph pose by pose, optimizing after each
/// pose's factors are in.
pub fn solve_incrementally(g: &RandomGraph) -> FusionGraph {
    let mut graph = FusionGraph::new();
    let opts = Default::default();
    let mut next = 0;
    for (k, p) in g.initial.iter().enumerate() {
        graph.add_pose(*p);
        while next < g.factors.len() && max_id(&g.factors[next]) <= k {
            graph.add_factor(g.factors[next].clone()).unwrap();
            next += 1;
        }
        graph.optimize(&opts).unwrap();
    }
    graph
}

fn max_id(f: &Factor) -> usize {
    match f.kind {
        FactorKind::Between { i, j, .. } => i.max(j),
        FactorKind::Prior { i, .. } => i,
    }
}

/// Position and rotation differences between two pose lists.
pub fn max_pose_diff(a: &[Pose], b: &[Pose]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0, 0.0), |(dp, dr), (p, q)| {
        (
            f64::max(dp, (p.translation - q.translation).norm()),
            f64::max(dr, p.rotation.angle_to(&q.rotation)),
        )
    })
}

/// Marginal covariance of pose `id` from the dense information matrix.
pub fn dense_marginal(factors: &[Factor], poses: &[Pose], id: usize) -> Matrix6<f64> {
    let n = poses.len();
    let h = 1e-6;
    let mut hm = DMatrix::<f64>::zeros(6 * n, 6 * n);
    for f in factors {
        let mut jac = DMatrix::<f64>::zeros(6, 6 * n);
        for v in 0..n {
            for k in 0..6 {
                let mut plus = poses.to_vec();
                let mut minus = poses.to_vec();
                plus[v] = perturb(&poses[v], k, h);
                minus[v] = perturb(&poses[v], k, -h);
                let d = (oracle_residual(f, &plus) - oracle_residual(f, &minus)) / (2.0 * h);
                jac.view_mut((0, 6 * v + k), (6, 1)).copy_from(&d);
            }
        }
        let info = DMatrix::from_fn(6, 6, |a, b| f.noise.information()[(a, b)]);
        hm += jac.transpose() * info * &jac;
    }
    let inv = hm.try_inverse().expect("oracle information singular");
    Matrix6::from_fn(|a, b| inv[(6 * id + a, 6 * id + b)])
}

/// A small random road map: a few polylines in a 200 m square, some
/// sharing junction points.
pub fn random_map(seed: u64) -> MapGraph {
    let mut r = rng(seed);
    let ways_n = r.random_range(2..=5);
    let mut junctions: Vec<Vector2<f64>> = Vec::new();
    let mut ways = Vec::new();
    for _ in 0..ways_n {
        let pts_n = r.random_range(2..=5);
        let mut pts: Vec<Vector2<f64>> = Vec::new();
        for k in 0..pts_n {
            let p = if k == 0 && !junctions.is_empty() && r.random_bool(0.5) {
                junctions[r.random_range(0..junctions.len())]
            } else {
                Vector2::new(r.random_range(-100.0..100.0), r.random_range(-100.0..100.0))
            };
            if pts.last().is_some_and(|q: &Vector2<f64>| (q - p).norm() < 5.0) {
                continue;
            }
            pts.push(p);
        }
        if pts.len() < 2 {
            pts.push(pts[0] + Vector2::new(30.0, 10.0));
        }
        junctions.extend(pts.iter().copied());
        ways.push(Way::open(pts, r.random_range(1..=3)));
    }
    maps::from_polylines(&ways).expect("random map builds")
}

fn quat_of(roll: f64, pitch: f64, yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

/// Rotation angle between two orientations in degrees, from the rotation
/// matrix `R1^T R2`.
fn rotation_angle_deg(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let r = a.to_rotation_matrix().matrix().transpose() * b.to_rotation_matrix().matrix();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    vee.norm().atan2(r.trace() - 1.0).to_degrees()
}

/// `(combined, edge, index, reversed)` of the brute-force best waypoint
/// among those within `radius` of `center`, scanning every waypoint.
pub fn brute_force_match(
    map: &MapGraph,
    est: &Pose,
    center: Vector2<f64>,
    radius: f64,
    hint_edge: Option<u32>,
) -> Option<(f64, u32, u32, bool)> {
    let (roll, pitch, _) = est.euler();
    let mut all: Vec<(f64, bool, u32, u32, bool)> = Vec::new();
    for e in map.edges() {
        for w in &e.waypoints {
            if (w.xy() - center).norm() > radius {
                continue;
            }
            for rev in [false, true] {
                let heading = if rev { w.heading + std::f64::consts::PI } else { w.heading };
                let a = rotation_angle_deg(&est.rotation, &quat_of(roll, pitch, heading));
                let d = (w.xy() - est.xy()).norm() + a;
                all.push((d, Some(w.edge) != hint_edge, w.edge, w.index, rev));
            }
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.first().map(|b| (b.0, b.2, b.3, b.4))
}

/// Second-best combined distance found by the brute-force scan, to tell
/// whether the best is unique beyond round-off.
pub fn brute_force_gap(map: &MapGraph, est: &Pose, center: Vector2<f64>, radius: f64) -> f64 {
    let (roll, pitch, _) = est.euler();
    let mut ds: Vec<f64> = Vec::new();
    for w in map.waypoints() {
        if (w.xy() - center).norm() > radius {
            continue;
        }
        for rev in [false, true] {
            let heading = if rev { w.heading + std::f64::consts::PI } else { w.heading };
            let a = rotation_angle_deg(&est.rotation, &quat_of(roll, pitch, heading));
            ds.push((w.xy() - est.xy()).norm() + a);
        }
    }
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if ds.len() < 2 {
        f64::INFINITY
    } else {
        ds[1] - ds[0]
    }
}

pub fn hint_from(wp: &MapPose, est: &Pose, map: &MapGraph) -> MatchResult {
    let width = map.edge(wp.edge).unwrap().road_width_m();
    mapfusion::matcher::score(wp, false, width, est)
}

/// Straight parallel roads with about `n` waypoints in total.
pub fn large_map(n: usize) -> MapGraph {
    let rows = 10;
    let len = (n / rows) as f64;
    let ways: Vec<Way> = (0..rows)
        .map(|k| Way::open(vec![Vector2::new(0.0, 40.0 * k as f64), Vector2::new(len, 40.0 * k as f64 + 5.0)], 1 + (k % 3) as u32))
        .collect();
    maps::from_polylines(&ways).unwrap()
}

/// Structural invariants of every built edge: spacing within the
/// densification step, headings pointing at the next waypoint, the last
/// heading copied from its predecessor, width from lanes and ids in order.
pub fn edge_violations(map: &MapGraph) -> Vec<String> {
    let step = map.step_m();
    let mut bad = Vec::new();
    let angle_diff = |a: f64, b: f64| ((a - b + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI).abs();
    for e in map.edges() {
        let n = e.waypoints.len();
        if n < 2 {
            bad.push(format!("edge {} has {n} waypoints", e.id));
            continue;
        }
        if e.road_width_m() != 3.0 * e.lane_count as f64 {
            bad.push(format!("edge {} width {}", e.id, e.road_width_m()));
        }
        if !map.vertices().contains_key(&e.from) || !map.vertices().contains_key(&e.to) {
            bad.push(format!("edge {} dangling vertex", e.id));
        }
        for (k, w) in e.waypoints.windows(2).enumerate() {
            let d = w[1].xy() - w[0].xy();
            if d.norm() > step + 1e-6 {
                bad.push(format!("edge {} gap {} at {k}", e.id, d.norm()));
            }
            if angle_diff(w[0].heading, d.y.atan2(d.x)) > 1e-12 {
                bad.push(format!("edge {} heading at {k}", e.id));
            }
        }
        if e.waypoints[n - 1].heading != e.waypoints[n - 2].heading {
            bad.push(format!("edge {} last heading", e.id));
        }
        for (k, w) in e.waypoints.iter().enumerate() {
            if (w.edge, w.index as usize) != (e.id, k) {
                bad.push(format!("edge {} waypoint {k} ids", e.id));
            }
        }
    }
    bad
}
