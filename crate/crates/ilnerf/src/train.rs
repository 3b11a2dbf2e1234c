//! Losses, replay-based distillation, Adam optimization of field and pose
//! deltas, and the incremental training loop over sequential chunks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{apply_transfer, compute_transfer, recenter_poses, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{camera_ray, rotation_geodesic, CameraPose, Intrinsics, PoseDelta, Vec3};
use crate::metrics::{psnr, ssim, Image};
use crate::pose_graph::{build_graph, greedy_select, SelectionConfig};
use crate::radiance::{
    render_image, render_ray, render_ray_with_grad, sample_ray, VoxelRadianceField,
};
use crate::scene_sim::{ChunkStream, PoseOracle};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub iters_per_stage: usize,
    pub rays_per_iter: usize,
    pub lr_field: f64,
    pub lr_pose: f64,
    /// Per-iteration multiplier on the field learning rate.
    pub field_decay: f64,
    /// Multiplier on the pose learning rate, applied every `pose_decay_every`
    /// iterations.
    pub pose_decay: f64,
    pub pose_decay_every: usize,
    /// Number of reference poses selected per stage (D).
    pub d_select: usize,
    pub s_th: f64,
    pub lambda: f64,
    pub seed: u64,
    pub grid_resolution: usize,
    pub samples_per_ray: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters_per_stage: 1000,
            rays_per_iter: 1024,
            lr_field: 0.01,
            lr_pose: 0.005,
            field_decay: 0.9954,
            pose_decay: 0.9,
            pose_decay_every: 100,
            d_select: 5,
            s_th: 0.0,
            lambda: 1.0,
            seed: 1,
            grid_resolution: 64,
            samples_per_ray: 96,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_iter == 0 {
            return Err(Error::invalid("rays_per_iter must be positive"));
        }
        if !(self.lr_field >= 0.0 && self.lr_pose >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        for (name, d) in [("field_decay", self.field_decay), ("pose_decay", self.pose_decay)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1]")));
            }
        }
        if self.pose_decay_every == 0 {
            return Err(Error::invalid("pose_decay_every must be positive"));
        }
        if self.d_select == 0 {
            return Err(Error::invalid("d_select must be positive"));
        }
        if self.grid_resolution < 2 || self.samples_per_ray < 2 {
            return Err(Error::invalid("grid and ray sampling need at least 2 points"));
        }
        Ok(())
    }
}

/// Ablation switches of the incremental loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    /// No distillation of past rays: classic sequential fine-tuning.
    NoReplay,
    /// New chunk poses are used in the oracle's fresh gauge, unaligned.
    NoTransfer,
    /// Pose deltas frozen at zero.
    NoRefine,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoReplay => "no_replay",
            Mode::NoTransfer => "no_transfer",
            Mode::NoRefine => "no_refine",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "full" => Ok(Mode::Full),
            "no_replay" => Ok(Mode::NoReplay),
            "no_transfer" => Ok(Mode::NoTransfer),
            "no_refine" => Ok(Mode::NoRefine),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

/// Sum over rays of the squared L2 color error.
pub fn photometric_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "photometric loss needs equal non-empty lists, got {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (0..3).map(|ch| (p[ch] - t[ch]).powi(2)).sum::<f64>())
        .sum())
}

/// Standard bias-corrected Adam moments for one parameter block.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Per-parameter step counts, so sparse updates stay bias-corrected.
    pub t: Vec<u32>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0; n],
        }
    }

    fn update_one(&mut self, i: usize, g: f64, lr: f64) -> f64 {
        self.t[i] += 1;
        self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
        self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let t = self.t[i] as i32;
        let m_hat = self.m[i] / (1.0 - ADAM_BETA1.powi(t));
        let v_hat = self.v[i] / (1.0 - ADAM_BETA2.powi(t));
        -lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
    }
}

/// One dense Adam step over a parameter block.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut AdamMoments, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    for i in 0..params.len() {
        params[i] += moments.update_one(i, grads[i], lr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaySource {
    Current,
    Replay,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainRay {
    /// Index into the tracked camera list.
    pub cam: usize,
    pub u: f64,
    pub v: f64,
    pub target: [f64; 3],
    pub source: RaySource,
}

#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    pub rays: Vec<TrainRay>,
}

/// Renders `count` randomly sampled past rays from the frozen teacher as
/// pseudo ground truth. Past camera index i maps to tracked camera i (past
/// cameras always form the prefix of the tracked list).
pub fn distill_targets(
    teacher: &VoxelRadianceField,
    past_poses: &[CameraPose],
    k: &Intrinsics,
    near: f64,
    far: f64,
    m: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RayBatch> {
    let mut rays = Vec::with_capacity(if past_poses.is_empty() { 0 } else { count });
    if past_poses.is_empty() {
        return Ok(RayBatch { rays });
    }
    for _ in 0..count {
        let cam = rng.gen_range(0..past_poses.len());
        let u = rng.gen_range(0..k.width) as f64;
        let v = rng.gen_range(0..k.height) as f64;
        let ray = camera_ray(&past_poses[cam], k, u, v)?;
        let samples = sample_ray(&ray, near, far, m)?;
        let target = render_ray(teacher, &samples).color;
        rays.push(TrainRay {
            cam,
            u,
            v,
            target,
            source: RaySource::Replay,
        });
    }
    Ok(RayBatch { rays })
}

/// One tracked camera: current best pose estimate plus its last reward
/// R_k = -(training loss); no image data is retained.
#[derive(Debug, Clone)]
pub struct TrackedCamera {
    pub pose: CameraPose,
    pub reward: f64,
    /// (chunk, index within chunk) of the image this camera took.
    pub source: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub field: VoxelRadianceField,
    pub cams: Vec<TrackedCamera>,
    pub deltas: Vec<PoseDelta>,
    pub adam_density: AdamMoments,
    pub adam_color: AdamMoments,
    pub adam_pose: AdamMoments,
    pub iter: usize,
}

impl TrainState {
    pub fn new(field: VoxelRadianceField) -> Self {
        let n = field.num_points();
        TrainState {
            field,
            cams: Vec::new(),
            deltas: Vec::new(),
            adam_density: AdamMoments::new(n),
            adam_color: AdamMoments::new(3 * n),
            adam_pose: AdamMoments::new(0),
            iter: 0,
        }
    }

    fn push_cameras(&mut self, poses: &[CameraPose], chunk: usize) {
        for (i, p) in poses.iter().enumerate() {
            self.cams.push(TrackedCamera {
                pose: *p,
                reward: 0.0,
                source: (chunk, i),
            });
            self.deltas.push(PoseDelta::zero());
        }
    }

    /// Per-stage optimizer reset; learning-rate schedules restart too.
    fn reset_optimizers(&mut self) {
        let n = self.field.num_points();
        self.adam_density = AdamMoments::new(n);
        self.adam_color = AdamMoments::new(3 * n);
        self.adam_pose = AdamMoments::new(6 * self.cams.len());
        self.iter = 0;
    }

    pub fn effective_pose(&self, cam: usize) -> Result<CameraPose> {
        self.cams[cam].pose.with_delta(&self.deltas[cam])
    }
}

/// Inputs for one stage of joint optimization.
pub struct StageInput<'a> {
    /// Current chunk images; camera j of the chunk is tracked camera
    /// `current_start + j`.
    pub images: &'a [Image],
    pub current_start: usize,
    pub replay: &'a RayBatch,
    pub intrinsics: &'a Intrinsics,
    pub near: f64,
    pub far: f64,
}

/// Sparse accumulator over a dense parameter block: only touched entries are
/// (re)set, tracked by an iteration stamp.
struct SparseGrad {
    dense: Vec<f64>,
    stamp: Vec<u32>,
    touched: Vec<usize>,
    cur: u32,
}

impl SparseGrad {
    fn new(n: usize) -> Self {
        SparseGrad {
            dense: vec![0.0; n],
            stamp: vec![0; n],
            touched: Vec::new(),
            cur: 0,
        }
    }

    fn begin(&mut self) {
        self.cur += 1;
        self.touched.clear();
    }

    fn add(&mut self, i: usize, g: f64) {
        if self.stamp[i] != self.cur {
            self.stamp[i] = self.cur;
            self.dense[i] = 0.0;
            self.touched.push(i);
        }
        self.dense[i] += g;
    }
}

/// Runs `cfg.iters_per_stage` Adam iterations of the joint loss over current
/// and replay rays, then refreshes per-camera rewards, folds pose deltas into
/// the stored poses, and quantizes the field to checkpoint precision.
pub fn train_stage(
    state: &mut TrainState,
    input: &StageInput,
    cfg: &TrainConfig,
    refine: bool,
    stage: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if input.images.is_empty() {
        return Err(Error::invalid("stage needs at least one current image"));
    }
    if cfg.iters_per_stage == 0 {
        return Ok(());
    }
    state.reset_optimizers();
    let k = input.intrinsics;
    let n_current = input.images.len();
    let n_replay_per_iter = if input.replay.rays.is_empty() {
        0
    } else {
        cfg.rays_per_iter / 2
    };
    let n_current_per_iter = cfg.rays_per_iter - n_replay_per_iter;

    let mut dgrad = SparseGrad::new(state.field.num_points());
    let mut cgrad = SparseGrad::new(3 * state.field.num_points());
    let mut pose_grads = vec![0.0; 6 * state.cams.len()];
    let mut batch = Vec::with_capacity(cfg.rays_per_iter);

    for iter in 0..cfg.iters_per_stage {
        let lr_f = cfg.lr_field * cfg.field_decay.powi(iter as i32);
        let lr_p = cfg.lr_pose * cfg.pose_decay.powi((iter / cfg.pose_decay_every) as i32);

        batch.clear();
        for _ in 0..n_current_per_iter {
            let local = rng.gen_range(0..n_current);
            let u = rng.gen_range(0..k.width);
            let v = rng.gen_range(0..k.height);
            batch.push(TrainRay {
                cam: input.current_start + local,
                u: u as f64,
                v: v as f64,
                target: input.images[local].pixel(u, v),
                source: RaySource::Current,
            });
        }
        for _ in 0..n_replay_per_iter {
            batch.push(input.replay.rays[rng.gen_range(0..input.replay.rays.len())]);
        }

        dgrad.begin();
        cgrad.begin();
        pose_grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let inv_batch = 1.0 / cfg.rays_per_iter as f64;
        for ray in &batch {
            let g = render_ray_with_grad(
                &state.field,
                &state.deltas[ray.cam],
                &state.cams[ray.cam].pose,
                k,
                ray.u,
                ray.v,
                input.near,
                input.far,
                cfg.samples_per_ray,
                &ray.target,
            )?;
            loss += g.loss;
            for &(i, gd) in &g.density_grad {
                dgrad.add(i, gd * inv_batch);
            }
            for &(i, gc) in &g.color_grad {
                for ch in 0..3 {
                    cgrad.add(3 * i + ch, gc[ch] * inv_batch);
                }
            }
            for c in 0..6 {
                pose_grads[6 * ray.cam + c] += g.pose_grad[c] * inv_batch;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { stage, iter });
        }

        for &i in &dgrad.touched {
            state.field.density_raw[i] += state.adam_density.update_one(i, dgrad.dense[i], lr_f);
        }
        for &i in &cgrad.touched {
            state.field.color_raw[i] += state.adam_color.update_one(i, cgrad.dense[i], lr_f);
        }
        // Pose refinement waits out the first third of the stage: gradients
        // through a still-blurry field carry almost no pose information and
        // would only random-walk the estimates.
        if refine && iter >= cfg.iters_per_stage / 3 {
            // Only the freshly added cameras are refined. Past cameras carry
            // no independent signal (their replay targets were rendered at
            // the stored poses, so zero delta is already optimal); updating
            // them would only diffuse the estimates.
            for ci in input.current_start..state.cams.len() {
                let d = &mut state.deltas[ci];
                let mut p = [d.a.x, d.a.y, d.a.z, d.b.x, d.b.y, d.b.z];
                for (c, v) in p.iter_mut().enumerate() {
                    let idx = 6 * ci + c;
                    *v += state.adam_pose.update_one(idx, pose_grads[idx], lr_p);
                }
                d.a = Vec3::new(p[0], p[1], p[2]);
                d.b = Vec3::new(p[3], p[4], p[5]);
            }
        }
        state.iter = iter + 1;
    }

    update_rewards(state, input, cfg)?;

    // Fold the optimized deltas into the stored poses so the tracked list
    // always holds the current best estimates.
    for i in 0..state.cams.len() {
        state.cams[i].pose = state.cams[i].pose.with_delta(&state.deltas[i])?;
        state.deltas[i] = PoseDelta::zero();
    }
    // Checkpoint precision, so a reloaded checkpoint reproduces every number
    // computed from here on.
    state.field.quantize_f32();
    Ok(())
}

/// Deterministic post-stage reward pass: current cameras are scored against
/// their chunk images (full render), past cameras against their cached replay
/// targets. R_k = -(mean squared photometric error per ray).
fn update_rewards(state: &mut TrainState, input: &StageInput, cfg: &TrainConfig) -> Result<()> {
    let k = input.intrinsics;
    for (local, img) in input.images.iter().enumerate() {
        let cam = input.current_start + local;
        let pose = state.effective_pose(cam)?;
        let rendered = render_image(&state.field, &pose, k, input.near, input.far, cfg.samples_per_ray)?;
        let mse: f64 = rendered
            .pixels
            .iter()
            .zip(&img.pixels)
            .map(|(p, t)| (0..3).map(|ch| (p[ch] - t[ch]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / rendered.pixels.len() as f64;
        state.cams[cam].reward = -mse;
    }
    let mut err = vec![0.0; state.cams.len()];
    let mut cnt = vec![0usize; state.cams.len()];
    for ray in &input.replay.rays {
        let pose = state.effective_pose(ray.cam)?;
        let r = camera_ray(&pose, k, ray.u, ray.v)?;
        let samples = sample_ray(&r, input.near, input.far, cfg.samples_per_ray)?;
        let pred = render_ray(&state.field, &samples).color;
        err[ray.cam] += (0..3).map(|ch| (pred[ch] - ray.target[ch]).powi(2)).sum::<f64>();
        cnt[ray.cam] += 1;
    }
    for i in 0..state.cams.len() {
        if cnt[i] > 0 {
            state.cams[i].reward = -err[i] / cnt[i] as f64;
        }
    }
    Ok(())
}

/// One metrics row: quality of the current model on one already-seen chunk.
#[derive(Debug, Clone)]
pub struct ChunkMetrics {
    pub stage: usize,
    pub chunk: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mean_rot_err_deg: f64,
    pub mean_trans_err: f64,
}

pub struct FitResult {
    pub state: TrainState,
    pub metrics: Vec<ChunkMetrics>,
}

pub fn incremental_fit(
    stream: &ChunkStream,
    oracle: &PoseOracle,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<FitResult> {
    incremental_fit_with(stream, oracle, cfg, mode, |_, _| Ok(()))
}

/// Full incremental loop; `on_stage(stage, state)` runs after each stage
/// (checkpointing hook).
pub fn incremental_fit_with(
    stream: &ChunkStream,
    oracle: &PoseOracle,
    cfg: &TrainConfig,
    mode: Mode,
    mut on_stage: impl FnMut(usize, &TrainState) -> Result<()>,
) -> Result<FitResult> {
    cfg.validate()?;
    if stream.chunks.is_empty() {
        return Err(Error::invalid("stream has no chunks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bounds = stream_bounds();
    let field = VoxelRadianceField::new(
        [cfg.grid_resolution; 3],
        bounds,
        crate::radiance::softplus_inv(0.01),
        0.0,
    );
    let mut state = TrainState::new(field);
    let mut metrics = Vec::new();

    for stage in 0..stream.chunks.len() {
        // Production call seeds are forced odd so the all-zero identity-gauge
        // test hook can never trigger.
        let call_seed = rng.gen::<u64>() | 1;
        let chunk = &stream.chunks[stage];
        let current_start = state.cams.len();
        let replay;
        if stage == 0 {
            // The first reconstruction arrives in an arbitrary gauge; shift
            // it so the observed scene sits at the origin of the modeling
            // volume. Later chunks are aligned to this frame by the transfer
            // transform.
            let est = recenter_poses(&oracle.estimate_chunk(0, call_seed))
                .map_err(|e| e.at_stage(stage))?;
            state.push_cameras(&est, 0);
            replay = RayBatch::default();
        } else {
            // Frozen teacher for this stage's pseudo ground truth.
            let teacher = state.field.clone();
            let sel_cfg = SelectionConfig {
                d: cfg.d_select.min(state.cams.len()),
                s_th: cfg.s_th,
                lambda: cfg.lambda,
            };
            let poses: Vec<CameraPose> = state.cams.iter().map(|c| c.pose).collect();
            let rewards: Vec<f64> = state.cams.iter().map(|c| c.reward).collect();
            let graph = build_graph(&poses, &rewards).map_err(|e| e.at_stage(stage))?;
            let sel = greedy_select(&graph, &sel_cfg).map_err(|e| e.at_stage(stage))?;
            let ref_stored: Vec<CameraPose> = sel.nodes.iter().map(|&i| poses[i]).collect();
            let ref_ids: Vec<(usize, usize)> =
                sel.nodes.iter().map(|&i| state.cams[i].source).collect();
            let (est_refs, est_news) = oracle
                .estimate_merged(&ref_stored, &ref_ids, stage, call_seed)
                .map_err(|e| e.at_stage(stage))?;
            let aligned = if mode == Mode::NoTransfer {
                est_news
            } else {
                let corr: Vec<Correspondence> = ref_stored
                    .iter()
                    .zip(&est_refs)
                    .map(|(s, e)| Correspondence {
                        old_pose: *s,
                        new_pose: *e,
                    })
                    .collect();
                let tf = compute_transfer(&corr).map_err(|e| e.at_stage(stage))?;
                apply_transfer(&tf, &est_news)
            };
            state.push_cameras(&aligned, stage);
            replay = if mode == Mode::NoReplay {
                RayBatch::default()
            } else {
                distill_targets(
                    &teacher,
                    &poses,
                    &stream.intrinsics,
                    stream.near,
                    stream.far,
                    cfg.samples_per_ray,
                    32 * cfg.rays_per_iter,
                    &mut rng,
                )
                .map_err(|e| e.at_stage(stage))?
            };
        }
        let input = StageInput {
            images: &chunk.images,
            current_start,
            replay: &replay,
            intrinsics: &stream.intrinsics,
            near: stream.near,
            far: stream.far,
        };
        train_stage(&mut state, &input, cfg, mode != Mode::NoRefine, stage, &mut rng)
            .map_err(|e| e.at_stage(stage))?;
        stage_metrics(&state, stream, oracle, stage, cfg, &mut metrics)
            .map_err(|e| e.at_stage(stage))?;
        on_stage(stage, &state)?;
    }
    Ok(FitResult { state, metrics })
}

fn stream_bounds() -> crate::radiance::Aabb {
    crate::radiance::Aabb::new(
        crate::geometry::Vec3::new(-1.0, -1.0, -1.0),
        crate::geometry::Vec3::new(1.0, 1.0, 1.0),
    )
}

/// PSNR/SSIM per covered chunk plus gauge-aligned pose errors: the whole
/// pose set is rigidly aligned to ground truth first, then per-chunk means
/// taken. Shared by in-training metrics and offline evaluation so both
/// report identical numbers. `poses_by_chunk[c]` holds the model's poses for
/// stream chunk `c` (a prefix of the stream is allowed).
pub fn evaluate_model(
    field: &VoxelRadianceField,
    poses_by_chunk: &[Vec<CameraPose>],
    gt_by_chunk: &[&[CameraPose]],
    stream: &ChunkStream,
    samples_per_ray: usize,
) -> Result<Vec<ChunkMetrics>> {
    if poses_by_chunk.is_empty() || poses_by_chunk.len() > stream.chunks.len() {
        return Err(Error::invalid("pose set does not match the stream"));
    }
    let mut corr = Vec::new();
    for (chunk, poses) in poses_by_chunk.iter().enumerate() {
        if poses.len() != gt_by_chunk[chunk].len() {
            return Err(Error::invalid("pose/ground-truth count mismatch"));
        }
        for (p, g) in poses.iter().zip(gt_by_chunk[chunk]) {
            corr.push(Correspondence {
                old_pose: *g,
                new_pose: *p,
            });
        }
    }
    let tf = compute_transfer(&corr)?;
    let stage = poses_by_chunk.len() - 1;

    let mut out = Vec::new();
    for (chunk, poses) in poses_by_chunk.iter().enumerate() {
        let aligned = apply_transfer(&tf, poses);
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        let mut rot_sum = 0.0;
        let mut trans_sum = 0.0;
        for (i, pose) in poses.iter().enumerate() {
            let rendered = render_image(
                field,
                pose,
                &stream.intrinsics,
                stream.near,
                stream.far,
                samples_per_ray,
            )?;
            let target = &stream.chunks[chunk].images[i];
            psnr_sum += psnr(&rendered, target)?;
            ssim_sum += ssim(&rendered, target)?;
            let gt = gt_by_chunk[chunk][i];
            rot_sum += rotation_geodesic(&aligned[i].rot, &gt.rot).to_degrees();
            trans_sum += (aligned[i].trans - gt.trans).norm();
        }
        let n = poses.len() as f64;
        out.push(ChunkMetrics {
            stage,
            chunk,
            psnr: psnr_sum / n,
            ssim: ssim_sum / n,
            mean_rot_err_deg: rot_sum / n,
            mean_trans_err: trans_sum / n,
        });
    }
    Ok(out)
}

fn stage_metrics(
    state: &TrainState,
    stream: &ChunkStream,
    oracle: &PoseOracle,
    stage: usize,
    cfg: &TrainConfig,
    out: &mut Vec<ChunkMetrics>,
) -> Result<()> {
    let mut poses_by_chunk: Vec<Vec<CameraPose>> = vec![Vec::new(); stage + 1];
    for cam in &state.cams {
        poses_by_chunk[cam.source.0].push(cam.pose);
    }
    let gt_by_chunk: Vec<&[CameraPose]> = (0..=stage).map(|c| oracle.chunk_gt(c)).collect();
    let rows = evaluate_model(
        &state.field,
        &poses_by_chunk,
        &gt_by_chunk,
        stream,
        cfg.samples_per_ray,
    )?;
    out.extend(rows);
    Ok(())
}

/// CSV header matching [`ChunkMetrics`] rows.
pub fn metrics_csv_header() -> &'static str {
    "stage,mode,chunk,psnr,ssim,mean_rot_err_deg,mean_trans_err"
}

pub fn metrics_csv_row(m: &ChunkMetrics, mode: Mode) -> String {
    format!(
        "{},{},{},{:.6},{:.6},{:.6},{:.6}",
        m.stage,
        mode.as_str(),
        m.chunk,
        m.psnr,
        m.ssim,
        m.mean_rot_err_deg,
        m.mean_trans_err
    )
}
