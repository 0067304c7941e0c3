//! Rigid-body pose algebra and geodetic helpers.
//!
//! Global frames are East/North/Up; a pose used as a relative transform is
//! expressed in the body frame (forward/left/up). Orientation is stored as a
//! unit quaternion and Euler angles follow the yaw-pitch-roll convention
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("points coincide, heading undefined")]
    CoincidentPoints,
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    /// The projection was computed but lies beyond the tangent-plane
    /// validity radius. The computed value is carried along so callers may
    /// treat this as a warning.
    #[error("point is {distance:.0} m from the frame origin, beyond the {limit:.0} m tangent-plane limit")]
    BeyondTangentPlane {
        enu: Vector3<f64>,
        distance: f64,
        limit: f64,
    },
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// SE(3) rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_xyz_rpy(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        )
    }

    /// Planar pose at height zero.
    pub fn from_xy_yaw(x: f64, y: f64, yaw: f64) -> Self {
        Self::from_xyz_rpy(x, y, 0.0, 0.0, 0.0, yaw)
    }

    pub fn x(&self) -> f64 {
        self.translation.x
    }

    pub fn y(&self) -> f64 {
        self.translation.y
    }

    pub fn z(&self) -> f64 {
        self.translation.z
    }

    /// `(roll, pitch, yaw)` in radians.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn yaw(&self) -> f64 {
        self.euler().2
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.translation.x, self.translation.y)
    }

    /// SE(3) product `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = renormalize(self.rotation * other.rotation);
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    /// Transform taking `self` to `to`, i.e. `self^-1 * to`.
    pub fn relative_to(&self, to: &Pose) -> Pose {
        relative(self, to)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// `from^-1 * to`, expressed in the frame of `from`.
pub fn relative(from: &Pose, to: &Pose) -> Pose {
    let inv = from.rotation.inverse();
    Pose {
        translation: inv * (to.translation - from.translation),
        rotation: renormalize(inv * to.rotation),
    }
}

/// Angle between two orientations in degrees, `acos(2<q1,q2>^2 - 1)`.
///
/// Evaluated as `2 atan2(|v|, |w|)` of `q1^-1 q2`, which is the same angle
/// without the loss of precision of `acos` near zero.
pub fn quat_angular_distance_deg(q1: &UnitQuaternion<f64>, q2: &UnitQuaternion<f64>) -> f64 {
    let r = q1.inverse() * q2;
    (2.0 * r.imag().norm().atan2(r.w.abs())).to_degrees()
}

/// Heading of the segment `p_prev -> p_next`, counter-clockwise from East,
/// in `(-pi, pi]`.
pub fn heading_between(p_prev: Vector2<f64>, p_next: Vector2<f64>) -> Result<f64, GeomError> {
    let d = p_next - p_prev;
    if d.norm() <= 1e-9 {
        return Err(GeomError::CoincidentPoints);
    }
    Ok(wrap_angle(d.y.atan2(d.x)))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation vector of `q`, with angle in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Pick the hemisphere with non-negative scalar part so the angle is <= pi.
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    let v = q.imag();
    let n = v.norm();
    if n < 1e-12 {
        return v * 2.0;
    }
    let angle = 2.0 * n.atan2(q.w);
    v * (angle / n)
}

pub fn so3_exp(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = v.norm();
    if theta < 1e-12 {
        return UnitQuaternion::new_normalize(Quaternion::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z));
    }
    UnitQuaternion::from_scaled_axis(*v)
}

/// Inverse of the SO(3) right Jacobian at rotation vector `phi`.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coef * k * k
}

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Default validity radius of the tangent-plane projection, in meters.
pub const TANGENT_PLANE_LIMIT_M: f64 = 50_000.0;

/// WGS84 geodetic coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeomError> {
        if !(-90.0..=90.0).contains(&latitude) || latitude.is_nan() {
            return Err(GeomError::InvalidLatitude(latitude));
        }
        if !(-180.0..=180.0).contains(&longitude) || longitude.is_nan() {
            return Err(GeomError::InvalidLongitude(longitude));
        }
        Ok(Self {
            latitude,
            longitude,
            altitude,
        })
    }

    pub fn lat_lon(latitude: f64, longitude: f64) -> Result<Self, GeomError> {
        Self::new(latitude, longitude, 0.0)
    }

    fn to_ecef(self) -> Vector3<f64> {
        let (slat, clat) = self.latitude.to_radians().sin_cos();
        let (slon, clon) = self.longitude.to_radians().sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
        Vector3::new(
            (n + self.altitude) * clat * clon,
            (n + self.altitude) * clat * slon,
            (n * (1.0 - WGS84_E2) + self.altitude) * slat,
        )
    }

    fn from_ecef(p: &Vector3<f64>) -> Self {
        let lon = p.y.atan2(p.x);
        let r = (p.x * p.x + p.y * p.y).sqrt();
        let mut lat = p.z.atan2(r * (1.0 - WGS84_E2));
        let mut h = 0.0;
        for _ in 0..8 {
            let s = lat.sin();
            let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
            h = if lat.cos().abs() > 1e-12 {
                r / lat.cos() - n
            } else {
                p.z.abs() - n * (1.0 - WGS84_E2)
            };
            lat = p.z.atan2(r * (1.0 - WGS84_E2 * n / (n + h)));
        }
        Self {
            latitude: lat.to_degrees(),
            longitude: lon.to_degrees(),
            altitude: h,
        }
    }
}

/// East/North/Up tangent plane anchored at a geodetic origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    origin: GeoPoint,
    origin_ecef: Vector3<f64>,
    // Rows are the East, North and Up unit vectors in ECEF.
    ecef_to_enu: Matrix3<f64>,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        let (slat, clat) = origin.latitude.to_radians().sin_cos();
        let (slon, clon) = origin.longitude.to_radians().sin_cos();
        let ecef_to_enu = Matrix3::new(
            -slon,
            clon,
            0.0,
            -slat * clon,
            -slat * slon,
            clat,
            clat * clon,
            clat * slon,
            slat,
        );
        Self {
            origin,
            origin_ecef: origin.to_ecef(),
            ecef_to_enu,
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// Projection without the validity check.
    pub fn project(&self, p: &GeoPoint) -> Vector3<f64> {
        self.ecef_to_enu * (p.to_ecef() - self.origin_ecef)
    }

    pub fn unproject(&self, enu: &Vector3<f64>) -> GeoPoint {
        let ecef = self.origin_ecef + self.ecef_to_enu.transpose() * enu;
        GeoPoint::from_ecef(&ecef)
    }
}

/// Geodetic to local East/North/Up. Points beyond [`TANGENT_PLANE_LIMIT_M`]
/// return [`GeomError::BeyondTangentPlane`] carrying the computed value.
pub fn geo_to_enu(frame: &LocalFrame, p: &GeoPoint) -> Result<Vector3<f64>, GeomError> {
    let enu = frame.project(p);
    let distance = (enu.x * enu.x + enu.y * enu.y).sqrt();
    if distance > TANGENT_PLANE_LIMIT_M {
        return Err(GeomError::BeyondTangentPlane {
            enu,
            distance,
            limit: TANGENT_PLANE_LIMIT_M,
        });
    }
    Ok(enu)
}

pub fn enu_to_geo(frame: &LocalFrame, enu: &Vector3<f64>) -> GeoPoint {
    frame.unproject(enu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.translation - b.translation).norm() <= tol
            && quat_angular_distance_deg(&a.rotation, &b.rotation).to_radians() <= tol
            && so3_log(&(a.rotation.inverse() * b.rotation)).norm() <= tol
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::from_xyz_rpy(1.0, -2.0, 0.5, 0.1, -0.2, 1.3);
        let id = Pose::identity();
        assert_eq!(id.compose(&p).translation, p.translation);
        assert!(pose_close(&id.compose(&p), &p, 1e-12));
        assert!(pose_close(&p.compose(&p.inverse()), &id, 1e-9));
    }

    #[test]
    fn compose_quarter_turn() {
        let a = Pose::from_xy_yaw(1.0, 0.0, PI / 2.0);
        let b = Pose::from_xy_yaw(1.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert!(close(c.x(), 1.0, 1e-12));
        assert!(close(c.y(), 1.0, 1e-12));
        assert!(close(c.yaw(), PI / 2.0, 1e-12));
    }

    #[test]
    fn relative_examples() {
        let p = Pose::from_xyz_rpy(3.0, 1.0, 2.0, 0.3, 0.1, -2.0);
        assert!(pose_close(&relative(&p, &p), &Pose::identity(), 1e-12));

        let r = relative(&Pose::identity(), &Pose::from_xy_yaw(3.0, 2.0, 0.0));
        assert!((r.translation - Vector3::new(3.0, 2.0, 0.0)).norm() < 1e-12);

        let from = Pose::from_xy_yaw(0.0, 0.0, PI / 2.0);
        let r = relative(&from, &Pose::from_xy_yaw(0.0, 4.0, PI / 2.0));
        assert!((r.translation - Vector3::new(4.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn angular_distance_examples() {
        let q = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.7);
        assert!(quat_angular_distance_deg(&q, &q) < 1e-6);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert!(quat_angular_distance_deg(&q, &neg) < 1e-6);
        let a = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.0);
        let b = UnitQuaternion::from_euler_angles(0.0, 0.0, PI / 2.0);
        // acos(2 cos^2(45 deg) - 1) = acos(0) = 90 deg
        assert!(close(quat_angular_distance_deg(&a, &b), 90.0, 1e-9));
    }

    #[test]
    fn heading_examples() {
        let o = Vector2::zeros();
        assert_eq!(heading_between(o, Vector2::new(1.0, 0.0)).unwrap(), 0.0);
        assert!(close(heading_between(o, Vector2::new(1.0, 1.0)).unwrap(), PI / 4.0, 1e-15));
        assert_eq!(heading_between(o, Vector2::new(-1.0, 0.0)).unwrap(), PI);
        assert_eq!(heading_between(o, Vector2::new(-1.0, -0.0)).unwrap(), PI);
        assert_eq!(heading_between(o, o), Err(GeomError::CoincidentPoints));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15));
    }

    #[test]
    fn origin_projects_to_zero() {
        let frame = LocalFrame::new(GeoPoint::new(51.75, -1.25, 60.0).unwrap());
        let enu = geo_to_enu(&frame, &frame.origin()).unwrap();
        assert!(enu.norm() < 1e-6);
    }

    // Meridian radius of curvature M = a(1-e^2)/(1-e^2 sin^2 lat)^1.5 gives
    // the north distance of a small latitude step independently of ECEF.
    fn meridian_arc(lat_deg: f64, dlat_deg: f64) -> f64 {
        let s = (lat_deg + dlat_deg / 2.0).to_radians().sin();
        let m = WGS84_A * (1.0 - WGS84_E2) / (1.0 - WGS84_E2 * s * s).powf(1.5);
        m * dlat_deg.to_radians()
    }

    #[test]
    fn small_north_step_matches_meridian_arc() {
        for &(lat, lon) in &[(48.0, 11.5), (48.0, -120.0), (35.0, 139.7), (60.0, 0.0)] {
            let frame = LocalFrame::new(GeoPoint::lat_lon(lat, lon).unwrap());
            let p = GeoPoint::lat_lon(lat + 0.001, lon).unwrap();
            let enu = geo_to_enu(&frame, &p).unwrap();
            assert!(close(enu.y, meridian_arc(lat, 0.001), 1e-3), "lat {lat}: {}", enu.y);
            assert!(enu.x.abs() < 1e-6);
        }
        // mid latitudes: 0.001 deg north is about 111.2 m
        let frame = LocalFrame::new(GeoPoint::lat_lon(48.0, 11.5).unwrap());
        let enu = geo_to_enu(&frame, &GeoPoint::lat_lon(48.001, 11.5).unwrap()).unwrap();
        assert!(close(enu.y, 111.2, 0.3));
    }

    #[test]
    fn far_point_is_flagged_but_computed() {
        let frame = LocalFrame::new(GeoPoint::lat_lon(0.0, 0.0).unwrap());
        match geo_to_enu(&frame, &GeoPoint::lat_lon(1.0, 0.0).unwrap()) {
            Err(GeomError::BeyondTangentPlane { enu, distance, .. }) => {
                assert!(distance > 100_000.0);
                assert!(enu.y > 100_000.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn geo_point_range_checked() {
        assert!(GeoPoint::lat_lon(91.0, 0.0).is_err());
        assert!(GeoPoint::lat_lon(0.0, -181.0).is_err());
        assert!(GeoPoint::lat_lon(-90.0, 180.0).is_ok());
    }

    #[test]
    fn enu_round_trip_thousand_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let frame = LocalFrame::new(GeoPoint::new(1.30, 103.8, 15.0).unwrap());
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = GeoPoint::new(
                1.30 + rng.random_range(-0.2..0.2),
                103.8 + rng.random_range(-0.2..0.2),
                rng.random_range(-50.0..200.0),
            )
            .unwrap();
            let enu = geo_to_enu(&frame, &p).unwrap();
            let back = enu_to_geo(&frame, &enu);
            worst = worst
                .max((back.latitude - p.latitude).abs())
                .max((back.longitude - p.longitude).abs());
            assert!((back.altitude - p.altitude).abs() < 1e-3);
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    #[test]
    fn log_exp_inverse() {
        let v = Vector3::new(0.3, -1.2, 2.0);
        assert!((so3_log(&so3_exp(&v)) - v).norm() < 1e-12);
        let small = Vector3::new(1e-14, 0.0, -2e-14);
        assert!((so3_log(&so3_exp(&small)) - small).norm() < 1e-20);
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_difference() {
        // d Log(Exp(phi) Exp(d)) / d d = Jr^-1(phi)
        let phi = Vector3::new(0.4, -0.7, 1.1);
        let jinv = so3_right_jacobian_inv(&phi);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let plus = so3_log(&(so3_exp(&phi) * so3_exp(&d)));
            let minus = so3_log(&(so3_exp(&phi) * so3_exp(&-d)));
            let col = (plus - minus) / (2.0 * h);
            assert!((col - jinv.column(k)).norm() < 1e-7);
        }
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            -5.0..5.0f64,
            -1.5..1.5f64,
            -1.5..1.5f64,
            -3.1..3.1f64,
        )
            .prop_map(|(x, y, z, r, p, w)| Pose::from_xyz_rpy(x, y, z, r, p, w))
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-2)
            .prop_map(|(a, b, c, d)| UnitQuaternion::new_normalize(Quaternion::new(a, b, c, d)))
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.translation - r.translation).norm() < 1e-9);
            prop_assert!(so3_log(&(l.rotation.inverse() * r.rotation)).norm() < 1e-9);
        }

        #[test]
        fn relative_then_compose_recovers(a in arb_pose(), b in arb_pose()) {
            let back = a.compose(&relative(&a, &b));
            prop_assert!((back.translation - b.translation).norm() < 1e-9);
            prop_assert!(so3_log(&(back.rotation.inverse() * b.rotation)).norm() < 1e-9);
            prop_assert!((back.rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn euler_round_trip(r in -3.1..3.1f64, p in -1.569..1.569f64, y in -3.1..3.1f64) {
            let pose = Pose::from_xyz_rpy(0.0, 0.0, 0.0, r, p, y);
            let (r2, p2, y2) = pose.euler();
            let again = Pose::from_xyz_rpy(0.0, 0.0, 0.0, r2, p2, y2);
            prop_assert!(so3_log(&(pose.rotation.inverse() * again.rotation)).norm() < 1e-9);
        }

        #[test]
        fn angular_distance_identity(q1 in arb_quat(), q2 in arb_quat()) {
            let a = quat_angular_distance_deg(&q1, &q2);
            let dot = q1.coords.dot(&q2.coords);
            let alt = (2.0 * dot * dot - 1.0).clamp(-1.0, 1.0).acos().to_degrees();
            prop_assert!((0.0..=180.0).contains(&a));
            prop_assert!((a - quat_angular_distance_deg(&q2, &q1)).abs() < 1e-12);
            let flipped = UnitQuaternion::new_unchecked(-q2.into_inner());
            prop_assert!((a - quat_angular_distance_deg(&q1, &flipped)).abs() < 1e-12);
            // The two closed forms agree except where acos loses precision
            // near identical orientations.
            if a > 1e-3 {
                prop_assert!((a - alt).abs() < 1e-9, "{} vs {}", a, alt);
            }
        }
    }
}
