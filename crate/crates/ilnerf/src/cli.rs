//! Command implementations behind the `ilnerf` binary: simulate, train,
//! bench, eval. Every command echoes its configuration next to its outputs.

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::io::{
    export_stream, import_stream, pose_to_record, prepare_out_file, read_pose_file,
    record_to_pose, write_pose_file, PoseFile,
};
use crate::pose_graph::{bench_csv_header, bench_solvers, SelectionConfig};
use crate::radiance::{read_checkpoint, write_checkpoint};
use crate::scene_sim::{generate_scene_with_resolution, generate_stream, ChunkStream, PoseOracle};
use crate::train::{
    evaluate_model, incremental_fit_with, metrics_csv_header, metrics_csv_row, ChunkMetrics,
    Mode, TrainState,
};

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = prepare_out_file(dir, name)?;
    std::fs::write(&path, text).map_err(|e| Error::IoAt {
        path: path.clone(),
        source: e,
    })
}

/// Generates the synthetic chunk stream and exports it as PPM + JSON.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let scene = generate_scene_with_resolution(cfg.scene_seed, cfg.train.grid_resolution);
    let stream = generate_stream(
        &scene,
        cfg.t_chunks,
        cfg.n_per_chunk,
        &cfg.intrinsics(),
        &cfg.orbit,
    )?;
    export_stream(&stream, out_dir)?;
    write_text(out_dir, "config.txt", &cfg.echo())?;
    let manifest = serde_json::json!({
        "scene_seed": cfg.scene_seed,
        "t_chunks": cfg.t_chunks,
        "n_per_chunk": cfg.n_per_chunk,
        "image_size": cfg.image_size,
        "config": cfg.echo(),
    });
    write_text(out_dir, "manifest.json", &manifest.to_string())
}

fn state_pose_file(state: &TrainState, stream: &ChunkStream) -> PoseFile {
    let mut chunk_sizes = Vec::new();
    for cam in &state.cams {
        while chunk_sizes.len() <= cam.source.0 {
            chunk_sizes.push(0);
        }
        chunk_sizes[cam.source.0] += 1;
    }
    PoseFile {
        cameras: state
            .cams
            .iter()
            .enumerate()
            .map(|(id, c)| pose_to_record(id, &c.pose, c.reward))
            .collect(),
        intrinsics: (&stream.intrinsics).into(),
        near: stream.near,
        far: stream.far,
        chunk_sizes,
    }
}

/// Runs the incremental loop on an exported stream; writes per-stage
/// checkpoints and pose files, plus one metrics CSV row per (stage, chunk).
pub fn cmd_train(cfg: &RunConfig, stream_dir: &Path, mode: Mode, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let stream = import_stream(stream_dir)?;
    let oracle = PoseOracle::new(&stream, cfg.noise);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::IoAt {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let fit = incremental_fit_with(&stream, &oracle, &cfg.train, mode, |stage, state| {
        write_checkpoint(
            &state.field,
            &out_dir.join(format!("field_stage_{stage}.ilnf")),
        )?;
        write_pose_file(
            &state_pose_file(state, &stream),
            &out_dir.join(format!("poses_stage_{stage}.json")),
        )
    })?;
    let mut csv = String::from(metrics_csv_header());
    csv.push('\n');
    for row in &fit.metrics {
        csv.push_str(&metrics_csv_row(row, mode));
        csv.push('\n');
    }
    write_text(out_dir, "metrics.csv", &csv)?;
    write_text(out_dir, "config.txt", &cfg.echo())
}

/// Benchmarks the reference-selection solvers on random graphs.
pub fn cmd_bench(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let sel = SelectionConfig {
        d: cfg.train.d_select,
        s_th: cfg.train.s_th,
        lambda: cfg.train.lambda,
    };
    let seeds: Vec<u64> = (0..cfg.bench_trials as u64)
        .map(|i| cfg.train.seed.wrapping_add(i))
        .collect();
    let records = bench_solvers(&cfg.bench_sizes, &sel, &seeds);
    let mut csv = String::from(bench_csv_header());
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(out_dir, "solver_bench.csv", &csv)?;
    write_text(out_dir, "config.txt", &cfg.echo())
}

pub fn eval_csv_header() -> &'static str {
    "chunk,psnr,ssim,mean_rot_err_deg,mean_trans_err"
}

pub fn eval_csv_row(m: &ChunkMetrics) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        m.chunk, m.psnr, m.ssim, m.mean_rot_err_deg, m.mean_trans_err
    )
}

/// Renders all training views of a checkpoint from its stored aligned poses
/// and reports image quality plus gauge-aligned pose errors vs ground truth.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    poses_path: &Path,
    stream_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    let field = read_checkpoint(checkpoint)?;
    let poses = read_pose_file(poses_path)?;
    let stream = import_stream(stream_dir)?;
    let gt_file = read_pose_file(&stream_dir.join("poses_gt.json"))?;

    let mut poses_by_chunk: Vec<Vec<CameraPose>> = Vec::new();
    let mut offset = 0;
    for &size in &poses.chunk_sizes {
        poses_by_chunk.push(
            poses.cameras[offset..offset + size]
                .iter()
                .map(record_to_pose)
                .collect(),
        );
        offset += size;
    }
    if offset != poses.cameras.len() {
        return Err(Error::Parse(format!(
            "{}: chunk_sizes cover {offset} cameras but file has {}",
            poses_path.display(),
            poses.cameras.len()
        )));
    }
    let gt_all: Vec<CameraPose> = gt_file.cameras.iter().map(record_to_pose).collect();
    let mut gt_by_chunk: Vec<&[CameraPose]> = Vec::new();
    let mut gt_offset = 0;
    for poses in &poses_by_chunk {
        gt_by_chunk.push(&gt_all[gt_offset..gt_offset + poses.len()]);
        gt_offset += poses.len();
    }

    let rows = evaluate_model(
        &field,
        &poses_by_chunk,
        &gt_by_chunk,
        &stream,
        cfg.train.samples_per_ray,
    )?;
    let mut csv = String::from(eval_csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&eval_csv_row(row));
        csv.push('\n');
    }
    write_text(out_dir, "eval.csv", &csv)
}
