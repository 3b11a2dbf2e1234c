//! Synthetic ground-truth scenes, sequential orbit trajectories chunked into
//! image groups, and the simulated pose oracle that stands in for an SfM run:
//! every call returns poses in a fresh random rigid gauge plus small per-pose
//! noise, which is exactly the property that makes alignment necessary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{compute_transfer, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{rodrigues, CameraPose, Intrinsics, Vec3};
use crate::metrics::Image;
use crate::radiance::{logit, render_image, softplus_inv, Aabb, VoxelRadianceField};

/// Procedurally generated ground-truth scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub gt_field: VoxelRadianceField,
    pub seed: u64,
}

/// Sequential image chunks with their hidden ground-truth poses.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub images: Vec<Image>,
    pub gt_poses: Vec<CameraPose>,
}

#[derive(Debug, Clone)]
pub struct ChunkStream {
    pub chunks: Vec<Chunk>,
    pub intrinsics: Intrinsics,
    pub near: f64,
    pub far: f64,
}

impl ChunkStream {
    pub fn total_cameras(&self) -> usize {
        self.chunks.iter().map(|c| c.gt_poses.len()).sum()
    }
}

/// Magnitude of the simulated calibration noise. The gauge itself is always
/// drawn fresh per call from `gauge_seed`.
#[derive(Debug, Clone, Copy)]
pub struct GaugeNoise {
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub gauge_seed: u64,
}

impl Default for GaugeNoise {
    fn default() -> Self {
        GaugeNoise {
            sigma_rot: 0.005,
            sigma_trans: 0.005,
            gauge_seed: 0,
        }
    }
}

const SCENE_RESOLUTION: usize = 64;

/// Deterministic procedural scene: 4-7 colored soft blobs inside the unit
/// box on an empty background.
pub fn generate_scene(seed: u64) -> SyntheticScene {
    generate_scene_with_resolution(seed, SCENE_RESOLUTION)
}

pub fn generate_scene_with_resolution(seed: u64, resolution: usize) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e5ee);
    let bounds = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
    let n_blobs = rng.gen_range(4..=7);
    struct Blob {
        center: Vec3,
        radius: f64,
        color: [f64; 3],
        peak: f64,
    }
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            center: Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ),
            radius: rng.gen_range(0.28..0.5),
            color: [
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
            ],
            peak: rng.gen_range(25.0..60.0),
        })
        .collect();
    let mut field = VoxelRadianceField::new(
        [resolution; 3],
        bounds,
        softplus_inv(1e-4),
        0.0,
    );
    for iz in 0..resolution {
        for iy in 0..resolution {
            for ix in 0..resolution {
                let p = field.point_pos(ix, iy, iz);
                let idx = field.point_index(ix, iy, iz);
                let mut best_sigma = 0.0;
                let mut color = [0.5; 3];
                for blob in &blobs {
                    let d = (p - blob.center).norm() / blob.radius;
                    if d < 1.0 {
                        let sigma = blob.peak * (1.0 - d * d);
                        if sigma > best_sigma {
                            best_sigma = sigma;
                            color = blob.color;
                        }
                    }
                }
                if best_sigma > 1e-4 {
                    field.density_raw[idx] = softplus_inv(best_sigma);
                    for ch in 0..3 {
                        field.color_raw[3 * idx + ch] = logit(color[ch].clamp(0.02, 0.98));
                    }
                }
            }
        }
    }
    SyntheticScene {
        gt_field: field,
        seed,
    }
}

/// Orbit parameters for [`generate_stream`].
#[derive(Debug, Clone, Copy)]
pub struct OrbitConfig {
    pub radius: f64,
    pub height: f64,
    pub arc_degrees: f64,
    pub near: f64,
    pub far: f64,
    pub samples_per_ray: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            radius: 3.0,
            height: 0.9,
            arc_degrees: 180.0,
            near: 1.0,
            far: 5.5,
            samples_per_ray: 96,
        }
    }
}

/// Cameras on an orbit arc with equal angular steps, partitioned in order
/// into T chunks of N images; images are rendered from the ground truth.
pub fn generate_stream(
    scene: &SyntheticScene,
    t_chunks: usize,
    n_per_chunk: usize,
    k: &Intrinsics,
    orbit: &OrbitConfig,
) -> Result<ChunkStream> {
    if t_chunks == 0 || n_per_chunk == 0 {
        return Err(Error::invalid("need at least one chunk and one image"));
    }
    k.validate()?;
    let total = t_chunks * n_per_chunk;
    let arc = orbit.arc_degrees.to_radians();
    let mut chunks = Vec::with_capacity(t_chunks);
    let mut poses_all = Vec::with_capacity(total);
    for i in 0..total {
        let theta = if total == 1 {
            0.0
        } else {
            arc * i as f64 / (total - 1) as f64
        };
        let eye = Vec3::new(
            orbit.radius * theta.cos(),
            orbit.radius * theta.sin(),
            orbit.height,
        );
        poses_all.push(CameraPose::look_at(eye, Vec3::zeros(), Vec3::z()));
    }
    for t in 0..t_chunks {
        let gt_poses: Vec<CameraPose> =
            poses_all[t * n_per_chunk..(t + 1) * n_per_chunk].to_vec();
        let images = gt_poses
            .iter()
            .map(|pose| {
                render_image(
                    &scene.gt_field,
                    pose,
                    k,
                    orbit.near,
                    orbit.far,
                    orbit.samples_per_ray,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        chunks.push(Chunk { images, gt_poses });
    }
    Ok(ChunkStream {
        chunks,
        intrinsics: *k,
        near: orbit.near,
        far: orbit.far,
    })
}

fn gaussian3(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    // Box-Muller; two draws per component keeps it simple and deterministic.
    let mut sample = || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * sigma
    };
    Vec3::new(sample(), sample(), sample())
}

/// Simulated SfM/SLAM pose estimation: one random rigid gauge (Q, t) per
/// call, shared by all poses, plus independent per-pose noise. Each pose maps
/// to (Q^T rot J_noise, Q^T (trans - t) + noise).
pub fn simulate_sfm(gt: &[CameraPose], noise: &GaugeNoise, call_seed: u64) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.gauge_seed ^ call_seed.wrapping_mul(0x9e3779b9));
    let (q, t) = if noise.gauge_seed == 0 && call_seed == 0 {
        // Forced identity gauge, used by tests.
        (crate::geometry::Rotation::identity(), Vec3::zeros())
    } else {
        let axis = gaussian3(&mut rng, 1.0).normalize();
        let angle = rng.gen_range(0.2..1.4);
        let q = rodrigues(&(axis * angle)).expect("finite");
        let t = Vec3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        (q, t)
    };
    let qi = q.transpose();
    gt.iter()
        .map(|pose| {
            let j = rodrigues(&gaussian3(&mut rng, noise.sigma_rot)).expect("finite");
            let tn = gaussian3(&mut rng, noise.sigma_trans);
            CameraPose {
                rot: qi.compose(&pose.rot).compose(&j),
                trans: qi.apply(&(pose.trans - t)) + tn,
            }
        })
        .collect()
}

/// Holds the hidden ground-truth poses and answers pose-estimation requests
/// the way an SfM run over the merged image group would: consistent relative
/// geometry, arbitrary global gauge.
pub struct PoseOracle {
    gt_poses: Vec<Vec<CameraPose>>,
    pub noise: GaugeNoise,
}

impl PoseOracle {
    pub fn new(stream: &ChunkStream, noise: GaugeNoise) -> Self {
        PoseOracle {
            gt_poses: stream.chunks.iter().map(|c| c.gt_poses.clone()).collect(),
            noise,
        }
    }

    /// Stage-0 call: estimates the first chunk in isolation.
    pub fn estimate_chunk(&self, chunk: usize, call_seed: u64) -> Vec<CameraPose> {
        simulate_sfm(&self.gt_poses[chunk], &self.noise, call_seed)
    }

    /// Stage-t call on the merged group {rendered reference views, new chunk}.
    ///
    /// The reference views were rendered at `ref_stored` (reference-frame
    /// coordinates), so the scene an SfM run reconstructs is the world scene
    /// carried into that frame; the new chunk's true poses in the same frame
    /// are obtained through the gauge implied by the reference
    /// correspondences. Output is the whole group re-expressed in a fresh
    /// random gauge with per-pose noise: (estimated refs, estimated news).
    pub fn estimate_merged(
        &self,
        ref_stored: &[CameraPose],
        ref_ids: &[(usize, usize)],
        new_chunk: usize,
        call_seed: u64,
    ) -> Result<(Vec<CameraPose>, Vec<CameraPose>)> {
        let ref_gt: Vec<CameraPose> = ref_ids
            .iter()
            .map(|&(c, i)| self.gt_poses[c][i])
            .collect();
        let corr: Vec<Correspondence> = ref_stored
            .iter()
            .zip(&ref_gt)
            .map(|(s, g)| Correspondence {
                old_pose: *s,
                new_pose: *g,
            })
            .collect();
        let world_to_ref = compute_transfer(&corr)?;
        let mut group: Vec<CameraPose> = ref_stored.to_vec();
        group.extend(crate::alignment::apply_transfer(
            &world_to_ref,
            &self.gt_poses[new_chunk],
        ));
        let est = simulate_sfm(&group, &self.noise, call_seed);
        let (refs, news) = est.split_at(ref_stored.len());
        Ok((refs.to_vec(), news.to_vec()))
    }

    pub fn chunk_gt(&self, chunk: usize) -> &[CameraPose] {
        &self.gt_poses[chunk]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{apply_transfer, compute_transfer, Correspondence};
    use crate::geometry::rotation_geodesic;

    fn field_checksum(f: &VoxelRadianceField) -> u64 {
        let mut h = 1469598103934665603u64;
        for v in f.density_raw.iter().chain(f.color_raw.iter()) {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(1099511628211);
            }
        }
        h
    }

    #[test]
    fn scene_is_deterministic_per_seed() {
        let a = generate_scene_with_resolution(7, 16);
        let b = generate_scene_with_resolution(7, 16);
        assert_eq!(field_checksum(&a.gt_field), field_checksum(&b.gt_field));
        let c = generate_scene_with_resolution(8, 16);
        assert_ne!(field_checksum(&a.gt_field), field_checksum(&c.gt_field));
    }

    #[test]
    fn scene_has_content_inside_bounds() {
        let s = generate_scene_with_resolution(3, 24);
        let occupied = s
            .gt_field
            .density_raw
            .iter()
            .filter(|&&d| d > 0.0)
            .count();
        assert!(occupied > 100, "scene too empty: {occupied}");
    }

    fn small_stream(seed: u64) -> ChunkStream {
        let scene = generate_scene_with_resolution(seed, 16);
        let k = Intrinsics::centered(12, 12, 10.0);
        let orbit = OrbitConfig {
            samples_per_ray: 24,
            ..Default::default()
        };
        generate_stream(&scene, 4, 8, &k, &orbit).unwrap()
    }

    #[test]
    fn stream_has_monotone_contiguous_arc() {
        let stream = small_stream(1);
        assert_eq!(stream.total_cameras(), 32);
        let all: Vec<&CameraPose> = stream.chunks.iter().flat_map(|c| c.gt_poses.iter()).collect();
        let mut last_angle = f64::NEG_INFINITY;
        for p in &all {
            let angle = p.trans.y.atan2(p.trans.x);
            assert!(angle > last_angle);
            last_angle = angle;
        }
        // Chunk boundaries are adjacent in angle: the boundary step equals
        // the in-chunk step.
        let step = (all[1].trans - all[0].trans).norm();
        let boundary = (all[8].trans - all[7].trans).norm();
        assert!((step - boundary).abs() < 1e-9);
    }

    #[test]
    fn stream_images_are_renders_of_gt() {
        let stream = small_stream(2);
        let scene = generate_scene_with_resolution(2, 16);
        let img = render_image(
            &scene.gt_field,
            &stream.chunks[1].gt_poses[3],
            &stream.intrinsics,
            stream.near,
            stream.far,
            24,
        )
        .unwrap();
        assert_eq!(stream.chunks[1].images[3], img);
        for c in &stream.chunks {
            for img in &c.images {
                assert!(img
                    .pixels
                    .iter()
                    .all(|p| p.iter().all(|&x| (0.0..=1.0).contains(&x))));
            }
        }
    }

    #[test]
    fn sfm_identity_gauge_zero_noise_is_identity() {
        let stream = small_stream(3);
        let noise = GaugeNoise {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            gauge_seed: 0,
        };
        let est = simulate_sfm(&stream.chunks[0].gt_poses, &noise, 0);
        for (e, g) in est.iter().zip(&stream.chunks[0].gt_poses) {
            assert!(rotation_geodesic(&e.rot, &g.rot) < 1e-12);
            assert!((e.trans - g.trans).norm() < 1e-12);
        }
    }

    #[test]
    fn sfm_is_deterministic() {
        let stream = small_stream(4);
        let noise = GaugeNoise {
            sigma_rot: 0.01,
            sigma_trans: 0.01,
            gauge_seed: 9,
        };
        let a = simulate_sfm(&stream.chunks[0].gt_poses, &noise, 5);
        let b = simulate_sfm(&stream.chunks[0].gt_poses, &noise, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn sfm_alignment_closes_the_loop_noiselessly() {
        let stream = small_stream(5);
        let noise = GaugeNoise {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            gauge_seed: 77,
        };
        let gt = &stream.chunks[0].gt_poses;
        let est = simulate_sfm(gt, &noise, 3);
        let corr: Vec<Correspondence> = gt
            .iter()
            .zip(&est)
            .map(|(g, e)| Correspondence {
                old_pose: *g,
                new_pose: *e,
            })
            .collect();
        let tf = compute_transfer(&corr).unwrap();
        let recovered = apply_transfer(&tf, &est);
        for (r, g) in recovered.iter().zip(gt) {
            assert!(rotation_geodesic(&r.rot, &g.rot) < 1e-9);
            assert!((r.trans - g.trans).norm() < 1e-9);
        }
    }

    #[test]
    fn sfm_preserves_relative_geometry() {
        let stream = small_stream(6);
        let noise = GaugeNoise {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            gauge_seed: 123,
        };
        let gt = &stream.chunks[0].gt_poses;
        let est = simulate_sfm(gt, &noise, 1);
        for i in 0..gt.len() {
            for j in (i + 1)..gt.len() {
                let rel_gt = gt[i].rot.transpose().compose(&gt[j].rot);
                let rel_est = est[i].rot.transpose().compose(&est[j].rot);
                assert!(rotation_geodesic(&rel_gt, &rel_est) < 1e-9);
                let d_gt = (gt[i].trans - gt[j].trans).norm();
                let d_est = (est[i].trans - est[j].trans).norm();
                assert!((d_gt - d_est).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_merged_group_aligns_back_noiselessly() {
        let stream = small_stream(7);
        let noise = GaugeNoise {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            gauge_seed: 31,
        };
        let oracle = PoseOracle::new(&stream, noise);
        // Pretend stage 0 stored the chunk-0 poses in some reference gauge.
        let stored = simulate_sfm(&stream.chunks[0].gt_poses, &noise, 11);
        let ref_ids: Vec<(usize, usize)> = (0..5).map(|i| (0, i)).collect();
        let ref_stored: Vec<CameraPose> = (0..5).map(|i| stored[i]).collect();
        let (est_ref, est_new) = oracle
            .estimate_merged(&ref_stored, &ref_ids, 1, 17)
            .unwrap();
        let corr: Vec<Correspondence> = ref_stored
            .iter()
            .zip(&est_ref)
            .map(|(s, e)| Correspondence {
                old_pose: *s,
                new_pose: *e,
            })
            .collect();
        let tf = compute_transfer(&corr).unwrap();
        let aligned = apply_transfer(&tf, &est_new);
        // Aligned news must agree with the gauge that maps chunk-1 gt into
        // the stored reference frame.
        let gt_corr: Vec<Correspondence> = stream.chunks[0]
            .gt_poses
            .iter()
            .take(5)
            .zip(&ref_stored)
            .map(|(g, s)| Correspondence {
                old_pose: *s,
                new_pose: *g,
            })
            .collect();
        let world_to_ref = compute_transfer(&gt_corr).unwrap();
        let expected = apply_transfer(&world_to_ref, &stream.chunks[1].gt_poses);
        for (a, e) in aligned.iter().zip(&expected) {
            assert!(rotation_geodesic(&a.rot, &e.rot) < 1e-9);
            assert!((a.trans - e.trans).norm() < 1e-9);
        }
    }
}
