//! SO(3)/SE(3) primitives, Rodrigues map, camera rays, and pose-error metrics.
//!
//! Conventions used everywhere: rotations are camera-to-world, the translation
//! is the camera center in world coordinates, and the camera looks down its
//! local -z axis (OpenGL style) with a +0.5 pixel-center offset.

use nalgebra::{Matrix3, Vector3, SVD};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A 3x3 rotation matrix. Constructors that can produce non-orthonormal
/// matrices go through [`so3_project`]; `from_matrix_unchecked` is for
/// matrices already known to be in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Frobenius deviation from orthonormality plus determinant check.
    pub fn is_valid(&self, tol: f64) -> bool {
        let gram = self.0.transpose() * self.0;
        let dev = (gram - Mat3::identity()).norm();
        dev <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }
}

/// Camera intrinsics for an ideal pinhole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("cy outside image"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        Ok(())
    }

    /// Symmetric intrinsics with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Intrinsics {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// Camera-to-world extrinsics: `rot` maps camera axes to world axes and
/// `trans` is the camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            rot: Rotation::identity(),
            trans: Vec3::zeros(),
        }
    }

    /// Pose with the optical axis (-z) pointing from `eye` toward `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let z_cam = -forward;
        let x_cam = up.cross(&z_cam).normalize();
        let y_cam = z_cam.cross(&x_cam);
        let m = Mat3::from_columns(&[x_cam, y_cam, z_cam]);
        CameraPose {
            rot: Rotation::from_matrix_unchecked(m),
            trans: eye,
        }
    }

    /// Composes a trainable 6-dof increment onto this pose: the rotation is
    /// pre-multiplied by the Rodrigues map of `delta.a`, the translation is
    /// shifted by `delta.b`.
    pub fn with_delta(&self, delta: &PoseDelta) -> Result<CameraPose> {
        let incr = rodrigues(&delta.a)?;
        Ok(CameraPose {
            rot: incr.compose(&self.rot),
            trans: self.trans + delta.b,
        })
    }
}

/// Trainable pose increment: axis-angle `a` plus translation increment `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta {
    pub a: Vec3,
    pub b: Vec3,
}

impl PoseDelta {
    pub fn zero() -> Self {
        PoseDelta {
            a: Vec3::zeros(),
            b: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from axis-angle to SO(3).
///
/// Below `theta = 1e-8` the second-order Taylor expansion is used so the
/// sin(theta)/theta terms stay finite.
pub fn rodrigues(a: &Vec3) -> Result<Rotation> {
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("non-finite axis-angle vector"));
    }
    let theta = a.norm();
    let k = skew(a);
    let k2 = k * k;
    let m = if theta < 1e-8 {
        Mat3::identity() + k + k2 * 0.5
    } else {
        let s = theta.sin() / theta;
        let c = (1.0 - theta.cos()) / (theta * theta);
        Mat3::identity() + k * s + k2 * c
    };
    Ok(Rotation(m))
}

/// Partial derivatives of `rodrigues(a)` with respect to each component of
/// `a`, via the closed form of Gallego & Yezzi. Near zero the limit
/// `dR/da_k = [e_k]x` is used.
pub fn rodrigues_jacobian(a: &Vec3) -> [Mat3; 3] {
    let theta2 = a.norm_squared();
    if theta2 < 1e-16 {
        return [
            skew(&Vec3::x()),
            skew(&Vec3::y()),
            skew(&Vec3::z()),
        ];
    }
    let r = rodrigues(a).expect("finite input").0;
    let mut out = [Mat3::zeros(); 3];
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = 1.0;
        let v = a.cross(&((Mat3::identity() - r) * e));
        out[k] = (skew(a) * a[k] + skew(&v)) * (1.0 / theta2) * r;
    }
    out
}

/// Nearest rotation in the Frobenius norm, via SVD.
pub fn so3_project(m: &Mat3) -> Result<Rotation> {
    let svd = SVD::new(*m, true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::DegenerateInput("SVD failed".into()))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::DegenerateInput("SVD failed".into()))?;
    let min_sv = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
    if min_sv < 1e-12 {
        return Err(Error::DegenerateInput(
            "singular matrix cannot be projected to SO(3)".into(),
        ));
    }
    let det = (u * vt).determinant();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
    Ok(Rotation(u * fix * vt))
}

/// Ray through pixel (u, v). `u`/`v` may be fractional; the +0.5 pixel-center
/// offset is applied here.
pub fn camera_ray(pose: &CameraPose, k: &Intrinsics, u: f64, v: f64) -> Result<Ray> {
    if !(u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64) {
        return Err(Error::invalid(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            k.width, k.height
        )));
    }
    let d_cam = Vec3::new(
        (u + 0.5 - k.cx) / k.fx,
        -(v + 0.5 - k.cy) / k.fy,
        -1.0,
    );
    let dir = (pose.rot.apply(&d_cam)).normalize();
    Ok(Ray {
        origin: pose.trans,
        dir,
    })
}

/// Geodesic angle between two rotations, in [0, pi].
pub fn rotation_geodesic(r1: &Rotation, r2: &Rotation) -> f64 {
    let m = r1.matrix().transpose() * r2.matrix();
    let c = (m.trace() - 1.0) / 2.0;
    // atan2 of the antisymmetric part keeps full precision near identity,
    // where acos((tr-1)/2) bottoms out around 1e-8.
    let v = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    (v.norm() / 2.0).atan2(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_axis_angle(rng: &mut impl Rng, norm: f64) -> Vec3 {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        v.normalize() * norm
    }

    #[test]
    fn rodrigues_zero_is_identity() {
        let r = rodrigues(&Vec3::zeros()).unwrap();
        assert!((r.matrix() - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let mapped = r.apply(&Vec3::x());
        assert!((mapped - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn rodrigues_inverse_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_axis_angle(&mut rng, 1.0);
            let r = rodrigues(&a).unwrap();
            let rinv = rodrigues(&-a).unwrap();
            assert!((r.matrix() * rinv.matrix() - Mat3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn rodrigues_output_valid_up_to_norm_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let norm = rng.gen_range(0.0..10.0);
            let r = rodrigues(&random_axis_angle(&mut rng, norm)).unwrap();
            assert!(r.is_valid(1e-9));
        }
    }

    #[test]
    fn rodrigues_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let norm = rng.gen_range(0.1..3.0);
            let a = random_axis_angle(&mut rng, norm);
            let shifted = a + a.normalize() * (2.0 * std::f64::consts::PI);
            let r1 = rodrigues(&a).unwrap();
            let r2 = rodrigues(&shifted).unwrap();
            assert!((r1.matrix() - r2.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn rodrigues_rejects_non_finite() {
        assert!(rodrigues(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rodrigues_jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for trial in 0..30 {
            let a = if trial == 0 {
                Vec3::zeros()
            } else {
                let norm = rng.gen_range(1e-4..2.0);
                random_axis_angle(&mut rng, norm)
            };
            let jac = rodrigues_jacobian(&a);
            for k in 0..3 {
                let mut ap = a;
                let mut am = a;
                ap[k] += h;
                am[k] -= h;
                let fd = (rodrigues(&ap).unwrap().0 - rodrigues(&am).unwrap().0) / (2.0 * h);
                assert!(
                    (fd - jac[k]).norm() < 1e-6,
                    "jacobian mismatch at a={a:?} k={k}"
                );
            }
        }
    }

    #[test]
    fn project_fixes_member_of_so3() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = rodrigues(&random_axis_angle(&mut rng, 0.8)).unwrap();
        let p = so3_project(r.matrix()).unwrap();
        assert!((p.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn project_removes_uniform_scale() {
        let p = so3_project(&(Mat3::identity() * 2.0)).unwrap();
        assert!((p.matrix() - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn project_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            if let Ok(p1) = so3_project(&m) {
                let p2 = so3_project(p1.matrix()).unwrap();
                assert!((p1.matrix() - p2.matrix()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn project_mean_of_nearby_rotations_stays_close() {
        // Monte-Carlo: the projected mean of {R, R*Omega(eps*ez)} lies within
        // O(eps) geodesic distance of R.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let r = rodrigues(&random_axis_angle(&mut rng, 1.2)).unwrap();
            let eps = 1e-3;
            let r2 = r.compose(&rodrigues(&Vec3::new(0.0, 0.0, eps)).unwrap());
            let mean = (r.matrix() + r2.matrix()) * 0.5;
            let p = so3_project(&mean).unwrap();
            assert!(rotation_geodesic(&r, &p) < 2.0 * eps);
        }
    }

    #[test]
    fn project_rejects_singular() {
        let mut m = Mat3::zeros();
        m[(0, 0)] = 1.0;
        assert!(matches!(so3_project(&m), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn ray_at_principal_point_is_optical_axis() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
        };
        let ray = camera_ray(&CameraPose::identity(), &k, 49.5, 49.5).unwrap();
        assert!((ray.dir - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_flips_with_half_turn_about_y() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
        };
        let pose = CameraPose {
            rot: rodrigues(&Vec3::new(0.0, std::f64::consts::PI, 0.0)).unwrap(),
            trans: Vec3::zeros(),
        };
        let ray = camera_ray(&pose, &k, 49.5, 49.5).unwrap();
        assert!((ray.dir - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn ray_corner_pixel_direction() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
        };
        let ray = camera_ray(&CameraPose::identity(), &k, 99.5, 99.5).unwrap();
        let expected = Vec3::new(0.5, -0.5, -1.0).normalize();
        assert!((ray.dir - expected).norm() < 1e-12);
    }

    #[test]
    fn ray_rejects_out_of_range_pixel() {
        let k = Intrinsics::centered(10, 10, 5.0);
        assert!(camera_ray(&CameraPose::identity(), &k, 10.0, 0.0).is_err());
        assert!(camera_ray(&CameraPose::identity(), &k, -0.1, 0.0).is_err());
    }

    #[test]
    fn rays_mirror_about_principal_point() {
        let k = Intrinsics::centered(64, 64, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let du = rng.gen_range(0.0..30.0);
            let dv = rng.gen_range(0.0..30.0);
            let r1 = camera_ray(&CameraPose::identity(), &k, 31.5 + du, 31.5 + dv).unwrap();
            let r2 = camera_ray(&CameraPose::identity(), &k, 31.5 - du, 31.5 - dv).unwrap();
            assert!((r1.dir.x + r2.dir.x).abs() < 1e-12);
            assert!((r1.dir.y + r2.dir.y).abs() < 1e-12);
            assert!((r1.dir.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geodesic_basics() {
        let i = Rotation::identity();
        assert_eq!(rotation_geodesic(&i, &i), 0.0);
        let q = rodrigues(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        assert!((rotation_geodesic(&i, &q) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_axis_angle(&mut rng, 0.3);
        let r = rodrigues(&a).unwrap();
        assert!((rotation_geodesic(&i, &r) - 0.3).abs() < 1e-10);
    }
}
