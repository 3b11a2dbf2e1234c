//! Dense voxel radiance field with trilinear interpolation, volume rendering,
//! and analytic gradients with respect to both field parameters and 6-dof
//! camera pose deltas.
//!
//! Raw parameters are unconstrained; density goes through softplus and color
//! through sigmoid. Values live on an nx*ny*nz lattice spanning the bounds
//! inclusively, x-fastest in memory. Queries outside the bounds are empty
//! space (sigma = 0, black).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    camera_ray, rodrigues, rodrigues_jacobian, CameraPose, Intrinsics, PoseDelta, Ray, Vec3,
};
use crate::metrics::Image;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus; input must be positive.
pub fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Inverse of sigmoid; input must be in (0, 1).
pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// The scene representation: a dense grid of raw (density, color) values.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelRadianceField {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub density_raw: Vec<f64>,
    /// 3 values (rgb) per lattice point, point-major.
    pub color_raw: Vec<f64>,
}

/// Interpolation footprint of one query point: the 8 cell corners with their
/// trilinear weights and the spatial gradient of each weight.
pub struct CellSample {
    pub corners: [usize; 8],
    pub weights: [f64; 8],
    pub dweights: [Vec3; 8],
}

impl VoxelRadianceField {
    pub fn new(resolution: [usize; 3], bounds: Aabb, density_init: f64, color_init: f64) -> Self {
        let n = resolution[0] * resolution[1] * resolution[2];
        VoxelRadianceField {
            resolution,
            bounds,
            density_raw: vec![density_init; n],
            color_raw: vec![color_init; 3 * n],
        }
    }

    pub fn num_points(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    pub fn point_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.resolution[0] * (iy + self.resolution[1] * iz)
    }

    /// World position of lattice point (ix, iy, iz).
    pub fn point_pos(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let f = |i: usize, axis: usize| {
            self.bounds.min[axis]
                + (self.bounds.max[axis] - self.bounds.min[axis]) * i as f64
                    / (self.resolution[axis] - 1) as f64
        };
        Vec3::new(f(ix, 0), f(iy, 1), f(iz, 2))
    }

    /// Trilinear footprint at `p`, or `None` outside the bounds.
    pub fn cell_at(&self, p: &Vec3) -> Option<CellSample> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut i0 = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut scale = [0.0f64; 3];
        for axis in 0..3 {
            let n = self.resolution[axis];
            let extent = self.bounds.max[axis] - self.bounds.min[axis];
            scale[axis] = (n - 1) as f64 / extent;
            let g = (p[axis] - self.bounds.min[axis]) * scale[axis];
            let cell = (g.floor() as usize).min(n - 2);
            i0[axis] = cell;
            frac[axis] = g - cell as f64;
        }
        let mut corners = [0usize; 8];
        let mut weights = [0.0f64; 8];
        let mut dweights = [Vec3::zeros(); 8];
        for corner in 0..8 {
            let dx = corner & 1;
            let dy = (corner >> 1) & 1;
            let dz = (corner >> 2) & 1;
            corners[corner] = self.point_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[corner] = wx * wy * wz;
            let sx = if dx == 1 { 1.0 } else { -1.0 } * scale[0];
            let sy = if dy == 1 { 1.0 } else { -1.0 } * scale[1];
            let sz = if dz == 1 { 1.0 } else { -1.0 } * scale[2];
            dweights[corner] = Vec3::new(sx * wy * wz, wx * sy * wz, wx * wy * sz);
        }
        Some(CellSample {
            corners,
            weights,
            dweights,
        })
    }

    fn interp_density_raw(&self, cell: &CellSample) -> f64 {
        cell.corners
            .iter()
            .zip(&cell.weights)
            .map(|(&c, &w)| w * self.density_raw[c])
            .sum()
    }

    fn interp_color_raw(&self, cell: &CellSample) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (&c, &w) in cell.corners.iter().zip(&cell.weights) {
            for ch in 0..3 {
                out[ch] += w * self.color_raw[3 * c + ch];
            }
        }
        out
    }

    /// Activated density and color at a world point.
    pub fn query(&self, p: &Vec3) -> (f64, [f64; 3]) {
        match self.cell_at(p) {
            None => (0.0, [0.0; 3]),
            Some(cell) => {
                let sigma = softplus(self.interp_density_raw(&cell));
                let craw = self.interp_color_raw(&cell);
                (sigma, [sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])])
            }
        }
    }

    /// Rounds every raw parameter through f32 so that an in-memory field and
    /// its checkpoint agree exactly.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.density_raw {
            *v = *v as f32 as f64;
        }
        for v in &mut self.color_raw {
            *v = *v as f32 as f64;
        }
    }
}

/// Free-function form of [`VoxelRadianceField::query`].
pub fn field_query(f: &VoxelRadianceField, p: &Vec3) -> (f64, [f64; 3]) {
    f.query(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub points: Vec<Vec3>,
}

/// Deterministic midpoint depths: z_i = near + (i + 0.5) * (far - near) / m.
pub fn sample_ray(ray: &Ray, near: f64, far: f64, m: usize) -> Result<RaySamples> {
    if !(near >= 0.0 && near < far) {
        return Err(Error::invalid(format!("bad depth range [{near}, {far}]")));
    }
    if m < 2 {
        return Err(Error::invalid("need at least 2 samples per ray"));
    }
    let step = (far - near) / m as f64;
    let ts: Vec<f64> = (0..m).map(|i| near + (i as f64 + 0.5) * step).collect();
    let points = ts.iter().map(|&t| ray.origin + ray.dir * t).collect();
    Ok(RaySamples { ts, points })
}

#[derive(Debug, Clone)]
pub struct RenderResult {
    pub color: [f64; 3],
    /// w_i = alpha_i * (1 - delta_i)
    pub weights: Vec<f64>,
    /// alpha_i = prod_{j<i} delta_j, alpha_1 = 1
    pub transmittance: Vec<f64>,
}

fn segment_lengths(ts: &[f64]) -> Vec<f64> {
    let m = ts.len();
    let mut dz = Vec::with_capacity(m);
    // First segment length follows the uniform-spacing convention: equal to
    // the gap between the first two samples.
    dz.push(ts[1] - ts[0]);
    for i in 1..m {
        dz.push(ts[i] - ts[i - 1]);
    }
    dz
}

/// Volume rendering along one ray: color = sum_i alpha_i (1 - delta_i) c_i
/// with delta_i = exp(-(z_i - z_{i-1}) * sigma(x_i)).
pub fn render_ray(f: &VoxelRadianceField, samples: &RaySamples) -> RenderResult {
    let m = samples.ts.len();
    let dz = segment_lengths(&samples.ts);
    let mut color = [0.0; 3];
    let mut weights = Vec::with_capacity(m);
    let mut transmittance = Vec::with_capacity(m);
    let mut alpha = 1.0;
    for i in 0..m {
        let (sigma, c) = f.query(&samples.points[i]);
        let delta = (-dz[i] * sigma).exp();
        let w = alpha * (1.0 - delta);
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
        weights.push(w);
        transmittance.push(alpha);
        alpha *= delta;
    }
    RenderResult {
        color,
        weights,
        transmittance,
    }
}

/// Renders a full image pixel by pixel.
pub fn render_image(
    f: &VoxelRadianceField,
    pose: &CameraPose,
    k: &Intrinsics,
    near: f64,
    far: f64,
    m: usize,
) -> Result<Image> {
    k.validate()?;
    let mut img = Image::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let ray = camera_ray(pose, k, u as f64, v as f64)?;
            let samples = sample_ray(&ray, near, far, m)?;
            img.set_pixel(u, v, render_ray(f, &samples).color);
        }
    }
    Ok(img)
}

/// Per-ray loss and exact gradients. Field gradients are sparse over the
/// lattice points the ray touched; entries for the same point may repeat and
/// are meant to be summed by the caller.
#[derive(Debug, Clone)]
pub struct RayGradient {
    pub loss: f64,
    pub predicted: [f64; 3],
    pub density_grad: Vec<(usize, f64)>,
    pub color_grad: Vec<(usize, [f64; 3])>,
    /// d loss / d [a, b]
    pub pose_grad: [f64; 6],
}

/// Squared-error loss of one pixel rendered through the delta-composed pose,
/// differentiated analytically through volume rendering, trilinear
/// interpolation, the activations, ray generation, and the Rodrigues map.
#[allow(clippy::too_many_arguments)]
pub fn render_ray_with_grad(
    f: &VoxelRadianceField,
    pose_delta: &PoseDelta,
    base_pose: &CameraPose,
    k: &Intrinsics,
    u: f64,
    v: f64,
    near: f64,
    far: f64,
    m: usize,
    target: &[f64; 3],
) -> Result<RayGradient> {
    let incr = rodrigues(&pose_delta.a)?;
    let jac = rodrigues_jacobian(&pose_delta.a);
    let origin = base_pose.trans + pose_delta.b;
    if !(u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64) {
        return Err(Error::invalid(format!("pixel ({u}, {v}) out of range")));
    }
    let d_cam = Vec3::new((u + 0.5 - k.cx) / k.fx, -(v + 0.5 - k.cy) / k.fy, -1.0);
    let v_base = base_pose.rot.apply(&d_cam);
    let w_vec = incr.apply(&v_base);
    let w_norm = w_vec.norm();
    let dir = w_vec / w_norm;
    // d(dir)/d(a_k): normalize-jacobian applied to dOmega/da_k * v_base.
    let proj = (nalgebra::Matrix3::identity() - dir * dir.transpose()) / w_norm;
    let ddir_da: [Vec3; 3] = [
        proj * (jac[0] * v_base),
        proj * (jac[1] * v_base),
        proj * (jac[2] * v_base),
    ];

    let ray = Ray { origin, dir };
    let samples = sample_ray(&ray, near, far, m)?;
    let dz = segment_lengths(&samples.ts);

    struct SampleInfo {
        cell: Option<CellSample>,
        draw: f64,
        color: [f64; 3],
        delta: f64,
        alpha: f64,
        weight: f64,
    }

    let mut infos: Vec<SampleInfo> = Vec::with_capacity(m);
    let mut alpha = 1.0;
    let mut predicted = [0.0; 3];
    for i in 0..m {
        let cell = f.cell_at(&samples.points[i]);
        let (draw, craw) = match &cell {
            Some(c) => (f.interp_density_raw(c), f.interp_color_raw(c)),
            None => (0.0, [0.0; 3]),
        };
        let (sigma, color) = match &cell {
            Some(_) => (
                softplus(draw),
                [sigmoid(craw[0]), sigmoid(craw[1]), sigmoid(craw[2])],
            ),
            None => (0.0, [0.0; 3]),
        };
        let delta = (-dz[i] * sigma).exp();
        let weight = alpha * (1.0 - delta);
        for ch in 0..3 {
            predicted[ch] += weight * color[ch];
        }
        infos.push(SampleInfo {
            cell,
            draw,
            color,
            delta,
            alpha,
            weight,
        });
        alpha *= delta;
    }

    let mut loss = 0.0;
    let mut g_color_out = [0.0; 3];
    for ch in 0..3 {
        let d = predicted[ch] - target[ch];
        loss += d * d;
        g_color_out[ch] = 2.0 * d;
    }

    // Suffix sums S_i = sum_{j>i} w_j c_j, built backward.
    let mut density_grad = Vec::new();
    let mut color_grad = Vec::new();
    let mut pose_grad = [0.0; 6];
    let mut suffix = [0.0; 3];
    let mut dl_dsigma = vec![0.0; m];
    for i in (0..m).rev() {
        let info = &infos[i];
        // dC_ch/dsigma_i = dz_i * (alpha_i * delta_i * c_i - S_i)
        let mut g = 0.0;
        for ch in 0..3 {
            g += g_color_out[ch]
                * dz[i]
                * (info.alpha * info.delta * info.color[ch] - suffix[ch]);
        }
        dl_dsigma[i] = g;
        for ch in 0..3 {
            suffix[ch] += info.weight * info.color[ch];
        }
    }
    for i in 0..m {
        let info = &infos[i];
        let Some(cell) = &info.cell else { continue };
        let dsig_draw = sigmoid(info.draw);
        let dl_draw = dl_dsigma[i] * dsig_draw;
        let mut dl_dc = [0.0; 3];
        let mut dl_dcraw = [0.0; 3];
        for ch in 0..3 {
            dl_dc[ch] = g_color_out[ch] * info.weight;
            let s = info.color[ch];
            dl_dcraw[ch] = dl_dc[ch] * s * (1.0 - s);
        }
        // Scatter to corners and accumulate the spatial gradient.
        let mut dl_dpoint = Vec3::zeros();
        for corner in 0..8 {
            let idx = cell.corners[corner];
            let w = cell.weights[corner];
            let dw = cell.dweights[corner];
            if dl_draw != 0.0 {
                density_grad.push((idx, dl_draw * w));
            }
            dl_dpoint += dw * (dl_draw * f.density_raw[idx]);
            let mut cg = [0.0; 3];
            let mut any = false;
            for ch in 0..3 {
                cg[ch] = dl_dcraw[ch] * w;
                if cg[ch] != 0.0 {
                    any = true;
                }
                dl_dpoint += dw * (dl_dcraw[ch] * f.color_raw[3 * idx + ch]);
            }
            if any {
                color_grad.push((idx, cg));
            }
        }
        // x_i = origin + z_i * dir: origin depends on b, dir on a.
        let z = samples.ts[i];
        for axis in 0..3 {
            pose_grad[axis] += dl_dpoint.dot(&ddir_da[axis]) * z;
            pose_grad[3 + axis] += dl_dpoint[axis];
        }
    }

    Ok(RayGradient {
        loss,
        predicted,
        density_grad,
        color_grad,
        pose_grad,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ILNF";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the field checkpoint: magic "ILNF", version u32, resolution as
/// 3 u32, bounds as 6 f64, then the raw density and color arrays as f32,
/// x-fastest, all little-endian.
pub fn write_checkpoint(field: &VoxelRadianceField, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for r in field.resolution {
        buf.extend_from_slice(&(r as u32).to_le_bytes());
    }
    for axis in 0..3 {
        buf.extend_from_slice(&field.bounds.min[axis].to_le_bytes());
    }
    for axis in 0..3 {
        buf.extend_from_slice(&field.bounds.max[axis].to_le_bytes());
    }
    for &v in &field.density_raw {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &field.color_raw {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::IoAt {
        path: path.to_path_buf(),
        source: e,
    })?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<VoxelRadianceField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.to_path_buf()))?
        .read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 + 4 + 12 + 48 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("not an ILNF checkpoint"));
    }
    let mut off = 4;
    let take_u32 = |bytes: &[u8], off: &mut usize| {
        let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
        *off += 4;
        v
    };
    let version = take_u32(&bytes, &mut off);
    if version != CHECKPOINT_VERSION {
        return Err(fail("unsupported checkpoint version"));
    }
    let resolution = [
        take_u32(&bytes, &mut off) as usize,
        take_u32(&bytes, &mut off) as usize,
        take_u32(&bytes, &mut off) as usize,
    ];
    let take_f64 = |off: &mut usize| {
        let v = f64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
        *off += 8;
        v
    };
    let min = Vec3::new(take_f64(&mut off), take_f64(&mut off), take_f64(&mut off));
    let max = Vec3::new(take_f64(&mut off), take_f64(&mut off), take_f64(&mut off));
    let n = resolution[0] * resolution[1] * resolution[2];
    if bytes.len() != off + 4 * n + 12 * n {
        return Err(fail("checkpoint size does not match resolution"));
    }
    let mut density_raw = Vec::with_capacity(n);
    for _ in 0..n {
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        density_raw.push(v as f64);
        off += 4;
    }
    let mut color_raw = Vec::with_capacity(3 * n);
    for _ in 0..3 * n {
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        color_raw.push(v as f64);
        off += 4;
    }
    Ok(VoxelRadianceField {
        resolution,
        bounds: Aabb::new(min, max),
        density_raw,
        color_raw,
    })
}
