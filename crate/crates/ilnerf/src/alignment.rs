//! Rigid transfer-transform estimation between the coordinate system of a
//! freshly estimated pose set and the reference system, plus its application.

use crate::error::{Error, Result};
use crate::geometry::{so3_project, CameraPose, Mat3, Rotation, Vec3};

/// Rigid gauge mapping new-coordinate poses into the reference system.
#[derive(Debug, Clone, Copy)]
pub struct TransferTransform {
    pub d_rot: Rotation,
    pub d_trans: Vec3,
}

impl TransferTransform {
    pub fn identity() -> Self {
        TransferTransform {
            d_rot: Rotation::identity(),
            d_trans: Vec3::zeros(),
        }
    }
}

/// A reference camera seen in both coordinate systems.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub old_pose: CameraPose,
    pub new_pose: CameraPose,
}

/// Estimates the transfer transform from corresponding poses:
/// the rotation is the SO(3)-projected mean of `old.rot * new.rot^T`, the
/// translation the mean of `old.trans - d_rot * new.trans`. The projection
/// repairs the matrix mean, which is generally not orthogonal under noise,
/// and is the identity in the noiseless case.
pub fn compute_transfer(corr: &[Correspondence]) -> Result<TransferTransform> {
    if corr.is_empty() {
        return Err(Error::invalid("no correspondences"));
    }
    let mut acc = Mat3::zeros();
    for c in corr {
        acc += c.old_pose.rot.matrix() * c.new_pose.rot.matrix().transpose();
    }
    acc /= corr.len() as f64;
    let d_rot = so3_project(&acc)?;
    let mut t = Vec3::zeros();
    for c in corr {
        t += c.old_pose.trans - d_rot.apply(&c.new_pose.trans);
    }
    t /= corr.len() as f64;
    Ok(TransferTransform { d_rot, d_trans: t })
}

/// Maps each pose into the reference system: rotation pre-multiplied by the
/// transfer rotation, translation rotated and shifted.
pub fn apply_transfer(tf: &TransferTransform, poses: &[CameraPose]) -> Vec<CameraPose> {
    poses
        .iter()
        .map(|p| CameraPose {
            rot: tf.d_rot.compose(&p.rot),
            trans: tf.d_rot.apply(&p.trans) + tf.d_trans,
        })
        .collect()
}

/// Least-squares intersection point of the cameras' optical axes: the point
/// minimizing the summed squared distances to the viewing rays. Used to
/// normalize the arbitrary gauge of the first reconstruction so the observed
/// scene sits at the origin of the modeling volume. Falls back to the
/// camera centroid when the axes are (numerically) parallel.
pub fn scene_center(poses: &[CameraPose]) -> Result<Vec3> {
    if poses.is_empty() {
        return Err(Error::invalid("no poses to center"));
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for p in poses {
        let d = p.rot.apply(&Vec3::new(0.0, 0.0, -1.0));
        let m = Mat3::identity() - d * d.transpose();
        a += m;
        b += m * p.trans;
    }
    match a.try_inverse() {
        Some(inv) if a.determinant().abs() > 1e-9 => Ok(inv * b),
        _ => {
            let mut c = Vec3::zeros();
            for p in poses {
                c += p.trans;
            }
            Ok(c / poses.len() as f64)
        }
    }
}

/// Translates every pose so `scene_center` lands at the origin.
pub fn recenter_poses(poses: &[CameraPose]) -> Result<Vec<CameraPose>> {
    let c = scene_center(poses)?;
    Ok(poses
        .iter()
        .map(|p| CameraPose {
            rot: p.rot,
            trans: p.trans - c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rodrigues, rotation_geodesic};

    #[test]
    fn scene_center_recovers_common_look_at_point() {
        let target = Vec3::new(0.4, -0.2, 0.7);
        let poses: Vec<CameraPose> = [
            Vec3::new(3.0, 0.0, 1.0),
            Vec3::new(0.0, 3.0, -1.0),
            Vec3::new(-2.0, 2.0, 0.5),
        ]
        .iter()
        .map(|eye| CameraPose::look_at(*eye, target, Vec3::z()))
        .collect();
        let c = scene_center(&poses).unwrap();
        assert!((c - target).norm() < 1e-9, "center {c:?}");
        let shifted = recenter_poses(&poses).unwrap();
        let c2 = scene_center(&shifted).unwrap();
        assert!(c2.norm() < 1e-9);
    }

    #[test]
    fn scene_center_parallel_axes_falls_back_to_centroid() {
        let poses: Vec<CameraPose> = [0.0, 1.0, 2.0]
            .iter()
            .map(|x| CameraPose {
                rot: Rotation::identity(),
                trans: Vec3::new(*x, 0.0, 3.0),
            })
            .collect();
        let c = scene_center(&poses).unwrap();
        assert!((c - Vec3::new(1.0, 0.0, 3.0)).norm() < 1e-9);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> CameraPose {
        let a = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        CameraPose {
            rot: rodrigues(&a).unwrap(),
            trans: Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
        }
    }

    /// Builds correspondences where old = Q * new + t holds exactly.
    pub(crate) fn gauge_pair(
        rng: &mut impl Rng,
        q: &Rotation,
        t: &Vec3,
        d: usize,
    ) -> Vec<Correspondence> {
        (0..d)
            .map(|_| {
                let old = random_pose(rng);
                let qi = q.transpose();
                let new = CameraPose {
                    rot: qi.compose(&old.rot),
                    trans: qi.apply(&(old.trans - t)),
                };
                Correspondence {
                    old_pose: old,
                    new_pose: new,
                }
            })
            .collect()
    }

    #[test]
    fn identity_when_systems_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corr: Vec<Correspondence> = (0..4)
            .map(|_| {
                let p = random_pose(&mut rng);
                Correspondence {
                    old_pose: p,
                    new_pose: p,
                }
            })
            .collect();
        let tf = compute_transfer(&corr).unwrap();
        assert!(rotation_geodesic(&tf.d_rot, &Rotation::identity()) < 1e-12);
        assert!(tf.d_trans.norm() < 1e-12);
    }

    #[test]
    fn recovers_consistent_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rodrigues(&Vec3::new(0.4, -0.8, 0.3)).unwrap();
        let t = Vec3::new(1.0, -2.0, 0.5);
        let corr = gauge_pair(&mut rng, &q, &t, 5);
        let tf = compute_transfer(&corr).unwrap();
        assert!(rotation_geodesic(&tf.d_rot, &q) < 1e-9);
        assert!((tf.d_trans - t).norm() < 1e-9);
    }

    #[test]
    fn pure_translation_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Vec3::new(0.3, 0.1, -0.7);
        let corr = gauge_pair(&mut rng, &Rotation::identity(), &t, 4);
        let tf = compute_transfer(&corr).unwrap();
        assert!(rotation_geodesic(&tf.d_rot, &Rotation::identity()) < 1e-12);
        assert!((tf.d_trans - t).norm() < 1e-12);
    }

    #[test]
    fn empty_correspondences_rejected() {
        assert!(compute_transfer(&[]).is_err());
    }

    #[test]
    fn apply_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses: Vec<CameraPose> = (0..3).map(|_| random_pose(&mut rng)).collect();
        let out = apply_transfer(&TransferTransform::identity(), &poses);
        assert_eq!(out, poses);
    }

    #[test]
    fn apply_round_trips_consistent_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = rodrigues(&Vec3::new(-0.2, 0.9, 0.1)).unwrap();
        let t = Vec3::new(-0.4, 0.2, 1.1);
        let corr = gauge_pair(&mut rng, &q, &t, 6);
        let tf = compute_transfer(&corr).unwrap();
        let news: Vec<CameraPose> = corr.iter().map(|c| c.new_pose).collect();
        let mapped = apply_transfer(&tf, &news);
        for (m, c) in mapped.iter().zip(&corr) {
            assert!(rotation_geodesic(&m.rot, &c.old_pose.rot) < 1e-9);
            assert!((m.trans - c.old_pose.trans).norm() < 1e-9);
        }
    }

    #[test]
    fn pure_translation_moves_origin() {
        let tf = TransferTransform {
            d_rot: Rotation::identity(),
            d_trans: Vec3::new(1.0, 2.0, 3.0),
        };
        let out = apply_transfer(&tf, &[CameraPose::identity()]);
        assert_eq!(out[0].trans, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn apply_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let poses: Vec<CameraPose> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let tf = TransferTransform {
            d_rot: rodrigues(&Vec3::new(0.7, 0.2, -0.5)).unwrap(),
            d_trans: Vec3::new(2.0, -1.0, 0.3),
        };
        let mapped = apply_transfer(&tf, &poses);
        for i in 0..poses.len() {
            for j in (i + 1)..poses.len() {
                let before = (poses[i].trans - poses[j].trans).norm();
                let after = (mapped[i].trans - mapped[j].trans).norm();
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noisy_rotation_average_stays_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = rodrigues(&Vec3::new(0.3, 0.3, 0.3)).unwrap();
        let t = Vec3::zeros();
        let mut corr = gauge_pair(&mut rng, &q, &t, 8);
        for c in &mut corr {
            let noise = rodrigues(&Vec3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            ))
            .unwrap();
            c.new_pose.rot = noise.compose(&c.new_pose.rot);
        }
        let tf = compute_transfer(&corr).unwrap();
        assert!(tf.d_rot.is_valid(1e-9));
    }
}
