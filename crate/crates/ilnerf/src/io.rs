//! On-disk formats: P6 PPM images, the pose JSON schema, and chunk-stream
//! export/import.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, Rotation, Vec3};
use crate::metrics::Image;
use crate::scene_sim::{Chunk, ChunkStream};

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes a P6 PPM with maxval 255.
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        for ch in 0..3 {
            buf.push((p[ch].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::File::create(path)
        .map_err(io_at(path))?
        .write_all(&buf)
        .map_err(io_at(path))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.to_path_buf()))?
        .read_to_end(&mut bytes)
        .map_err(io_at(path))?;
    let fail = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    // Header: three whitespace-separated tokens after the magic.
    if !bytes.starts_with(b"P6") {
        return Err(fail("not a P6 PPM"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("bad header"))?;
    }
    pos += 1; // single whitespace after maxval
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fail("only maxval 255 supported"));
    }
    if bytes.len() - pos != width * height * 3 {
        return Err(fail("pixel data size mismatch"));
    }
    let mut img = Image::new(width, height);
    for (i, px) in img.pixels.iter_mut().enumerate() {
        for ch in 0..3 {
            px[ch] = bytes[pos + 3 * i + ch] as f64 / 255.0;
        }
    }
    Ok(img)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: usize,
    pub rot: [f64; 9],
    pub trans: [f64; 3],
    pub reward: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// The pose JSON schema shared by exported streams and trainer output.
#[derive(Debug, Serialize, Deserialize)]
pub struct PoseFile {
    pub cameras: Vec<CameraRecord>,
    pub intrinsics: IntrinsicsRecord,
    #[serde(default)]
    pub near: f64,
    #[serde(default)]
    pub far: f64,
    /// Number of cameras per chunk, in stream order.
    #[serde(default)]
    pub chunk_sizes: Vec<usize>,
}

impl From<&Intrinsics> for IntrinsicsRecord {
    fn from(k: &Intrinsics) -> Self {
        IntrinsicsRecord {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsRecord {
    pub fn to_intrinsics(&self) -> Result<Intrinsics> {
        let k = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        k.validate()?;
        Ok(k)
    }
}

pub fn pose_to_record(id: usize, pose: &CameraPose, reward: f64) -> CameraRecord {
    let m = pose.rot.matrix();
    let mut rot = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            rot[3 * r + c] = m[(r, c)];
        }
    }
    CameraRecord {
        id,
        rot,
        trans: [pose.trans.x, pose.trans.y, pose.trans.z],
        reward,
    }
}

pub fn record_to_pose(rec: &CameraRecord) -> CameraPose {
    let m = nalgebra::Matrix3::new(
        rec.rot[0], rec.rot[1], rec.rot[2], rec.rot[3], rec.rot[4], rec.rot[5], rec.rot[6],
        rec.rot[7], rec.rot[8],
    );
    CameraPose {
        rot: Rotation::from_matrix_unchecked(m),
        trans: Vec3::new(rec.trans[0], rec.trans[1], rec.trans[2]),
    }
}

pub fn write_pose_file(file: &PoseFile, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(file)
        .map_err(|e| Error::Parse(format!("pose serialization: {e}")))?;
    std::fs::write(path, json).map_err(io_at(path))
}

pub fn read_pose_file(path: &Path) -> Result<PoseFile> {
    let text =
        std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes `dir/chunk_t/img_n.ppm` plus `poses_gt.json` holding the hidden
/// ground-truth poses (consumed only by the pose oracle and evaluation).
pub fn export_stream(stream: &ChunkStream, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut cameras = Vec::new();
    let mut id = 0;
    for (t, chunk) in stream.chunks.iter().enumerate() {
        let cdir = dir.join(format!("chunk_{t}"));
        std::fs::create_dir_all(&cdir).map_err(io_at(&cdir))?;
        for (n, img) in chunk.images.iter().enumerate() {
            write_ppm(img, &cdir.join(format!("img_{n}.ppm")))?;
        }
        for pose in &chunk.gt_poses {
            cameras.push(pose_to_record(id, pose, 0.0));
            id += 1;
        }
    }
    let file = PoseFile {
        cameras,
        intrinsics: (&stream.intrinsics).into(),
        near: stream.near,
        far: stream.far,
        chunk_sizes: stream.chunks.iter().map(|c| c.gt_poses.len()).collect(),
    };
    write_pose_file(&file, &dir.join("poses_gt.json"))
}

pub fn import_stream(dir: &Path) -> Result<ChunkStream> {
    let file = read_pose_file(&dir.join("poses_gt.json"))?;
    let intrinsics = file.intrinsics.to_intrinsics()?;
    if file.chunk_sizes.is_empty() {
        return Err(Error::Parse(format!(
            "{}: poses_gt.json missing chunk_sizes",
            dir.display()
        )));
    }
    let mut chunks = Vec::new();
    let mut offset = 0;
    for (t, &size) in file.chunk_sizes.iter().enumerate() {
        let cdir = dir.join(format!("chunk_{t}"));
        let mut images = Vec::with_capacity(size);
        let mut gt_poses = Vec::with_capacity(size);
        for n in 0..size {
            images.push(read_ppm(&cdir.join(format!("img_{n}.ppm")))?);
            gt_poses.push(record_to_pose(&file.cameras[offset + n]));
        }
        offset += size;
        chunks.push(Chunk { images, gt_poses });
    }
    Ok(ChunkStream {
        chunks,
        intrinsics,
        near: file.near,
        far: file.far,
    })
}

/// Creates the directory (if needed) and returns `dir/name`.
pub fn prepare_out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    Ok(dir.join(name))
}
