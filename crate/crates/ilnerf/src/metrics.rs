//! Image container and the PSNR/SSIM quality metrics.

use crate::error::{Error, Result};

/// Row-major RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels, capped at 100 for
/// identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let mut sum = 0.0;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for ch in 0..3 {
            let d = pa[ch] - pb[ch];
            sum += d * d;
        }
    }
    let mse = sum / (a.pixels.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// computed per channel where the full window fits, then averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.width, a.height
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1; // L = 1
    let c2 = SSIM_K2 * SSIM_K2;
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    for ch in 0..3 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for cy in half..(a.height - half) {
            for cx in half..(a.width - half) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for (wy, ky) in kernel.iter().enumerate() {
                    let y = cy + wy - half;
                    for (wx, kx) in kernel.iter().enumerate() {
                        let x = cx + wx - half;
                        let w = ky * kx;
                        let va = a.pixel(x, y)[ch];
                        let vb = b.pixel(x, y)[ch];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                acc += s;
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / 3.0)
}
