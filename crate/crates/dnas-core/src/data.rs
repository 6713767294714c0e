//! Clean/noisy patch datasets and image quality metrics.
//!
//! Patches are flat `[C,H,W]` vectors with values in `[0,1]`. The procedural
//! generator synthesizes structured content (gradients, checkerboards,
//! low-pass-filtered noise) so that denoising is actually learnable;
//! directory mode crops patches out of 8-bit PNGs. Noise intensity follows
//! the 0-255 convention: `sigma_255 = 25` adds Gaussian noise of standard
//! deviation 25/255 to unit-range data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::Real;

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub clean: Vec<Real>,
    pub noisy: Vec<Real>,
    pub sigma_255: Real,
    /// Identifier of the source patch (index or file stem + crop index).
    pub id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    /// Synthesized patches; `count` is the number of distinct clean patches.
    Procedural { count: usize },
    /// 8-bit PNGs cropped into patches, `per_image` crops from each file.
    Directory { path: PathBuf, per_image: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub channels: usize,
    /// Square patch edge; must be divisible by 16 so four downsampling
    /// stages stay lossless.
    pub patch: usize,
    /// Noise levels on the 0-255 scale.
    pub sigmas: Vec<Real>,
    /// Fraction of clean patches assigned to the training split.
    pub split: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch % 16 != 0 {
            return Err(Error::InvalidArg(format!(
                "patch size must be a positive multiple of 16, got {}",
                self.patch
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidArg("channels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.split) {
            return Err(Error::InvalidArg(format!(
                "split must be in [0,1], got {}",
                self.split
            )));
        }
        if self.sigmas.is_empty() {
            return Err(Error::InvalidArg("at least one noise level required".into()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| **s < 0.0) {
            return Err(Error::InvalidArg(format!("negative noise level {s}")));
        }
        Ok(())
    }
}

/// Clean patches paired with noisy versions at every configured noise
/// level, split into disjoint train and held-out sets at the clean-patch
/// level.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub channels: usize,
    pub patch: usize,
    pub train: Vec<ImagePair>,
    pub held_out: Vec<ImagePair>,
}

/// Adds per-element Gaussian noise of standard deviation `sigma_255 / 255`
/// and clips back to `[0,1]`. Deterministic per seed.
pub fn add_gaussian_noise(clean: &[Real], sigma_255: Real, seed: u64) -> Result<Vec<Real>> {
    if sigma_255 < 0.0 {
        return Err(Error::InvalidArg(format!(
            "noise level must be non-negative, got {sigma_255}"
        )));
    }
    if sigma_255 == 0.0 {
        return Ok(clean.to_vec());
    }
    let normal = Normal::new(0.0, sigma_255 as f64 / 255.0)
        .map_err(|e| Error::InvalidArg(format!("bad noise level {sigma_255}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean
        .iter()
        .map(|v| (v + normal.sample(&mut rng) as Real).clamp(0.0, 1.0))
        .collect())
}

/// Peak signal-to-noise ratio in dB; identical inputs report infinity.
pub fn psnr(a: &[Real], b: &[Real], peak: Real) -> Result<Real> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "psnr",
            format!("{} vs {} elements", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::InvalidArg("psnr of empty images".into()));
    }
    let mse: Real = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<Real>()
        / a.len() as Real;
    if mse == 0.0 {
        return Ok(Real::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Horizontal then vertical weighted sums over valid positions: the 2-D
/// Gaussian window factorizes, so each axis is filtered independently.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * img[y * w + x + k];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Structural similarity, channel-averaged, Gaussian-windowed at the usual
/// constants, over valid window positions.
pub fn ssim(a: &[Real], b: &[Real], channels: usize, h: usize, w: usize) -> Result<Real> {
    let n = channels * h * w;
    if a.len() != n || b.len() != n {
        return Err(Error::shape(
            "ssim",
            format!("expected {n} elements for {channels}x{h}x{w}"),
        ));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArg(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..channels {
        let xa: Vec<f64> = a[c * h * w..(c + 1) * h * w].iter().map(|v| *v as f64).collect();
        let xb: Vec<f64> = b[c * h * w..(c + 1) * h * w].iter().map(|v| *v as f64).collect();
        let sq_a: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&xa, h, w, &win);
        let mu_b = filter_valid(&xb, h, w, &win);
        let m_aa = filter_valid(&sq_a, h, w, &win);
        let m_bb = filter_valid(&sq_b, h, w, &win);
        let m_ab = filter_valid(&ab, h, w, &win);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok((total / channels as f64) as Real)
}

// ---- procedural generator ----

fn stats(v: &[Real]) -> (Real, Real) {
    let mean = v.iter().sum::<Real>() / v.len() as Real;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / v.len() as Real;
    (mean, var.sqrt())
}

/// Rescales around the mean so flat patches still carry usable contrast.
fn ensure_contrast(v: &mut [Real]) {
    let (mean, std) = stats(v);
    if std >= 0.06 {
        return;
    }
    let gain = if std > 1e-9 { 0.15 / std } else { 0.0 };
    for x in v.iter_mut() {
        *x = (mean + (*x - mean) * gain).clamp(0.0, 1.0);
    }
}

fn gradient_patch(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Real> {
    let gx: Real = rng.gen_range(-0.8..0.8);
    let gy: Real = rng.gen_range(-0.8..0.8);
    let base: Real = rng.gen_range(0.2..0.8);
    let freq: Real = rng.gen_range(2.0..6.0);
    let amp: Real = rng.gen_range(0.05..0.2);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = x as Real / w as Real;
            let v = y as Real / h as Real;
            let val = base + gx * (u - 0.5) + gy * (v - 0.5)
                + amp * (freq * std::f64::consts::TAU as Real * (u + v)).sin();
            out.push(val.clamp(0.0, 1.0));
        }
    }
    out
}

fn checker_patch(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Real> {
    let cell = rng.gen_range(2usize..=8);
    let lo: Real = rng.gen_range(0.05..0.4);
    let hi: Real = rng.gen_range(0.6..0.95);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let on = (x / cell + y / cell) % 2 == 0;
            out.push(if on { hi } else { lo });
        }
    }
    out
}

fn filtered_noise_patch(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Real> {
    let mut field: Vec<Real> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    // a few box-blur passes leave smooth low-frequency texture
    for _ in 0..3 {
        let mut next = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let ny = y as isize + dy;
                        let nx = x as isize + dx;
                        if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                            sum += field[ny as usize * w + nx as usize];
                            cnt += 1.0;
                        }
                    }
                }
                next[y * w + x] = sum / cnt;
            }
        }
        field = next;
    }
    // stretch back to a healthy range; blurring compresses contrast
    let (mean, std) = stats(&field);
    let gain = if std > 1e-9 { 0.2 / std } else { 0.0 };
    for v in &mut field {
        *v = (0.5 + (*v - mean) * gain).clamp(0.0, 1.0);
    }
    field
}

/// One multi-channel clean patch with non-degenerate content in every
/// channel.
pub fn procedural_patch(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize) -> Vec<Real> {
    let mut out = Vec::with_capacity(channels * h * w);
    let kind = rng.gen_range(0u8..3);
    for _ in 0..channels {
        let mut plane = match kind {
            0 => gradient_patch(rng, h, w),
            1 => checker_patch(rng, h, w),
            _ => filtered_noise_patch(rng, h, w),
        };
        ensure_contrast(&mut plane);
        out.extend(plane);
    }
    out
}

fn load_directory_patches(
    path: &PathBuf,
    per_image: usize,
    channels: usize,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(String, Vec<Real>)>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArg(format!(
            "no png files in {}",
            path.display()
        )));
    }
    let mut patches = Vec::new();
    for file in &files {
        let img = image::open(file)
            .map_err(|e| Error::Malformed {
                path: file.display().to_string(),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (iw, ih) = (img.width() as usize, img.height() as usize);
        if iw < patch || ih < patch {
            return Err(Error::Malformed {
                path: file.display().to_string(),
                detail: format!("image {iw}x{ih} smaller than patch size {patch}"),
            });
        }
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for k in 0..per_image {
            let x0 = rng.gen_range(0..=iw - patch);
            let y0 = rng.gen_range(0..=ih - patch);
            let mut data = Vec::with_capacity(channels * patch * patch);
            for c in 0..channels {
                for y in 0..patch {
                    for x in 0..patch {
                        let px = img.get_pixel((x0 + x) as u32, (y0 + y) as u32);
                        // replicate the last channel when the net wants
                        // more than rgb provides
                        let ch = c.min(2);
                        data.push(px.0[ch] as Real / 255.0);
                    }
                }
            }
            patches.push((format!("{stem}-{k}"), data));
        }
    }
    Ok(patches)
}

/// Builds the full dataset: clean patches from the configured source, a
/// seed-deterministic disjoint train/held-out split, and one noisy version
/// per configured noise level.
pub fn make_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = config.patch;
    let clean: Vec<(String, Vec<Real>)> = match &config.source {
        DataSource::Procedural { count } => {
            if *count == 0 {
                return Err(Error::InvalidArg("procedural count must be positive".into()));
            }
            (0..*count)
                .map(|i| {
                    (
                        format!("patch{i:04}"),
                        procedural_patch(&mut rng, config.channels, p, p),
                    )
                })
                .collect()
        }
        DataSource::Directory { path, per_image } => {
            load_directory_patches(path, *per_image, config.channels, p, &mut rng)?
        }
    };
    let mut order: Vec<usize> = (0..clean.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n_train = (clean.len() as f64 * config.split).round() as usize;
    let mut dataset = Dataset {
        channels: config.channels,
        patch: p,
        train: Vec::new(),
        held_out: Vec::new(),
    };
    for (rank, &idx) in order.iter().enumerate() {
        let (id, data) = &clean[idx];
        for &sigma in &config.sigmas {
            let noise_seed = rng.gen::<u64>();
            let pair = ImagePair {
                clean: data.clone(),
                noisy: add_gaussian_noise(data, sigma, noise_seed)?,
                sigma_255: sigma,
                id: id.clone(),
            };
            if rank < n_train {
                dataset.train.push(pair);
            } else {
                dataset.held_out.push(pair);
            }
        }
    }
    Ok(dataset)
}

impl Dataset {
    /// Training pairs as flat (noisy, clean) tuples for the optimizers.
    pub fn train_pairs(&self) -> Vec<(Vec<Real>, Vec<Real>)> {
        self.train
            .iter()
            .map(|p| (p.noisy.clone(), p.clean.clone()))
            .collect()
    }
}
