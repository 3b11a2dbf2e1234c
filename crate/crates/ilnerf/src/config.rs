//! Run configuration: a flat `key = value` file with strict unknown-key
//! checking, echoed next to every output for reproducibility.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::scene_sim::{GaugeNoise, OrbitConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub noise: GaugeNoise,
    pub scene_seed: u64,
    pub t_chunks: usize,
    pub n_per_chunk: usize,
    pub image_size: usize,
    pub focal: f64,
    pub orbit: OrbitConfig,
    /// Graph sizes for the solver benchmark.
    pub bench_sizes: Vec<usize>,
    pub bench_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            noise: GaugeNoise::default(),
            scene_seed: 7,
            t_chunks: 4,
            n_per_chunk: 8,
            image_size: 48,
            focal: 70.0,
            orbit: OrbitConfig::default(),
            bench_sizes: vec![8, 10, 12],
            bench_trials: 5,
        }
    }
}

impl RunConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.image_size, self.image_size, self.focal)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.noise.sigma_rot >= 0.0 && self.noise.sigma_trans >= 0.0) {
            return Err(Error::invalid("noise sigmas must be non-negative"));
        }
        if self.t_chunks == 0 || self.n_per_chunk == 0 {
            return Err(Error::invalid("need at least one chunk and one image"));
        }
        if self.image_size < 11 {
            return Err(Error::invalid(
                "image_size must be at least 11 (SSIM window)",
            ));
        }
        if !(self.orbit.near >= 0.0 && self.orbit.near < self.orbit.far) {
            return Err(Error::invalid("need 0 <= near < far"));
        }
        if !(self.focal > 0.0 && self.orbit.radius > 0.0) {
            return Err(Error::invalid("focal and orbit radius must be positive"));
        }
        self.intrinsics().validate()
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value '{v}' for key '{key}'")))
        }
        match key {
            "iters_per_stage" => self.train.iters_per_stage = num(key, value)?,
            "rays_per_iter" => self.train.rays_per_iter = num(key, value)?,
            "lr_field" => self.train.lr_field = num(key, value)?,
            "lr_pose" => self.train.lr_pose = num(key, value)?,
            "field_decay" => self.train.field_decay = num(key, value)?,
            "pose_decay" => self.train.pose_decay = num(key, value)?,
            "pose_decay_every" => self.train.pose_decay_every = num(key, value)?,
            "d_select" => self.train.d_select = num(key, value)?,
            "s_th" => self.train.s_th = num(key, value)?,
            "lambda" => self.train.lambda = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "grid_resolution" => self.train.grid_resolution = num(key, value)?,
            "samples_per_ray" => {
                self.train.samples_per_ray = num(key, value)?;
                self.orbit.samples_per_ray = self.train.samples_per_ray;
            }
            "sigma_rot" => self.noise.sigma_rot = num(key, value)?,
            "sigma_trans" => self.noise.sigma_trans = num(key, value)?,
            "gauge_seed" => self.noise.gauge_seed = num(key, value)?,
            "scene_seed" => self.scene_seed = num(key, value)?,
            "t_chunks" => self.t_chunks = num(key, value)?,
            "n_per_chunk" => self.n_per_chunk = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "focal" => self.focal = num(key, value)?,
            "orbit_radius" => self.orbit.radius = num(key, value)?,
            "orbit_height" => self.orbit.height = num(key, value)?,
            "arc_degrees" => self.orbit.arc_degrees = num(key, value)?,
            "near" => self.orbit.near = num(key, value)?,
            "far" => self.orbit.far = num(key, value)?,
            "bench_trials" => self.bench_trials = num(key, value)?,
            "bench_sizes" => {
                self.bench_sizes = value
                    .split(',')
                    .map(|s| num::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            other => {
                return Err(Error::invalid(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set_key(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        RunConfig::parse(&text)
    }

    /// Full echo in parseable form; `RunConfig::parse(echo)` round-trips.
    pub fn echo(&self) -> String {
        let t = &self.train;
        let sizes: Vec<String> = self.bench_sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "iters_per_stage = {}\nrays_per_iter = {}\nlr_field = {}\nlr_pose = {}\n\
             field_decay = {}\npose_decay = {}\npose_decay_every = {}\nd_select = {}\n\
             s_th = {}\nlambda = {}\nseed = {}\ngrid_resolution = {}\nsamples_per_ray = {}\n\
             sigma_rot = {}\nsigma_trans = {}\ngauge_seed = {}\nscene_seed = {}\n\
             t_chunks = {}\nn_per_chunk = {}\nimage_size = {}\nfocal = {}\n\
             orbit_radius = {}\norbit_height = {}\narc_degrees = {}\nnear = {}\nfar = {}\n\
             bench_sizes = {}\nbench_trials = {}\n",
            t.iters_per_stage,
            t.rays_per_iter,
            t.lr_field,
            t.lr_pose,
            t.field_decay,
            t.pose_decay,
            t.pose_decay_every,
            t.d_select,
            t.s_th,
            t.lambda,
            t.seed,
            t.grid_resolution,
            t.samples_per_ray,
            self.noise.sigma_rot,
            self.noise.sigma_trans,
            self.noise.gauge_seed,
            self.scene_seed,
            self.t_chunks,
            self.n_per_chunk,
            self.image_size,
            self.focal,
            self.orbit.radius,
            self.orbit.height,
            self.orbit.arc_degrees,
            self.orbit.near,
            self.orbit.far,
            sizes.join(","),
            self.bench_trials,
        )
    }
}
