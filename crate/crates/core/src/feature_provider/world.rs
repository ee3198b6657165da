//! Deterministic synthetic segmentation worlds: grayscale or RGB images with
//! smooth random blobs, their ground-truth masks, and patch features drawn
//! around two class centres.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    load_manifest, pnm, DatasetManifest, FeatureMap, ManifestFile, Mask, RecordEntry, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    #[serde(default = "defaults::name")]
    pub name: String,
    pub image_size: usize,
    pub patch_size: usize,
    /// Inclusive range of blob counts per image.
    pub blob_count_range: [usize; 2],
    pub feature_dim: usize,
    /// `1 − cos(fg_centre, bg_centre)`, in [0, 2].
    pub fg_bg_separation: f64,
    /// Per-component standard deviation of the feature noise.
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "defaults::channels")]
    pub channels: usize,
    /// Blob base radius as a fraction of `image_size`.
    #[serde(default = "defaults::blob_radius")]
    pub blob_radius_range: [f64; 2],
    /// Standard deviation of per-pixel image noise.
    #[serde(default = "defaults::pixel_noise")]
    pub pixel_noise: f64,
}

mod defaults {
    pub fn name() -> String {
        "synthetic".into()
    }
    pub fn channels() -> usize {
        1
    }
    pub fn blob_radius() -> [f64; 2] {
        [0.14, 0.26]
    }
    pub fn pixel_noise() -> f64 {
        0.08
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        let [lo, hi] = self.blob_count_range;
        if lo == 0 || lo > hi {
            return bad(format!("blob_count_range {lo}..={hi} must satisfy 1 ≤ lo ≤ hi"));
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        if !(0.0..=2.0).contains(&self.fg_bg_separation) {
            return bad("fg_bg_separation must lie in [0, 2]".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.pixel_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3".into());
        }
        let [rlo, rhi] = self.blob_radius_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi < 0.5) {
            return bad("blob_radius_range must satisfy 0 < lo ≤ hi < 0.5".into());
        }
        Ok(())
    }
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Unit foreground and background centres with `cos = 1 − separation`.
pub fn class_centers(config: &SyntheticWorldConfig) -> (Vec<f64>, Vec<f64>) {
    let dim = config.feature_dim;
    let mut rng = stream(config.seed, u64::MAX);
    let mut gauss = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let u = normalize(gauss());
    let mut v = gauss();
    let proj: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(x, b)| *x -= proj * b);
    let v = normalize(v);
    let cos = 1.0 - config.fg_bg_separation;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let bg = u.iter().zip(&v).map(|(a, b)| cos * a + sin * b).collect();
    (u, bg)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// One generated sample, in memory.
pub struct WorldSample {
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub features: FeatureMap<f32>,
}

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let theta = dy.atan2(dx);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(amp, phase))| amp * ((k as f64 + 2.0) * theta + phase).sin())
            .sum();
        (dy * dy + dx * dx).sqrt() <= self.radius * (1.0 + wobble)
    }
}

/// Generates sample `index` of the world; independent of other indices.
pub fn generate_sample(config: &SyntheticWorldConfig, index: u64) -> Result<WorldSample> {
    config.validate()?;
    let size = config.image_size;
    let sf = size as f64;
    let mut rng = stream(config.seed, index);
    let [lo, hi] = config.blob_count_range;
    let count = rng.random_range(lo..=hi);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let [rlo, rhi] = config.blob_radius_range;
            let radius = rng.random_range(rlo..=rhi) * sf;
            let reach = radius * 1.36;
            let (cmin, cmax) = (reach.min(sf / 2.0), (sf - reach).max(sf / 2.0));
            Blob {
                cy: rng.random_range(cmin..=cmax),
                cx: rng.random_range(cmin..=cmax),
                radius,
                harmonics: std::array::from_fn(|_| {
                    (
                        rng.random_range(0.0..0.12),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                }),
            }
        })
        .collect();
    let mask = Mask::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        blobs.iter().any(|b| b.contains(y, x))
    });

    let channels = config.channels;
    let pixel_noise = Normal::new(0.0, config.pixel_noise).map_err(|e| Error::Config(e.to_string()))?;
    let tint = [1.0, 0.85, 0.7];
    let mut data = vec![0f32; channels * size * size];
    for r in 0..size {
        for c in 0..size {
            let base = if mask.get(r, c) { 0.68 } else { 0.32 };
            let shade = 0.06 * ((r as f64 / sf) - 0.5);
            for ch in 0..channels {
                let v = (base + shade) * tint[ch] + pixel_noise.sample(&mut rng);
                data[ch * size * size + r * size + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    // quantize so the in-memory image equals what the PGM file decodes to
    data.iter_mut()
        .for_each(|v| *v = (*v * 255.0).round() / 255.0);
    let image = Tensor::new(vec![channels, size, size], data)?;

    let (fg, bg) = class_centers(config);
    let ps = config.patch_size;
    let grid = size / ps;
    let labels = mask.patch_majority(ps);
    let feat_noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let dim = config.feature_dim;
    let mut raw = Vec::with_capacity(grid * grid * dim);
    for &is_fg in &labels {
        let centre = if is_fg { &fg } else { &bg };
        let v: Vec<f64> = centre.iter().map(|&m| m + feat_noise.sample(&mut rng)).collect();
        raw.extend(normalize(v).into_iter().map(|x| x as f32));
    }
    let features = FeatureMap::normalized(Tensor::new(vec![grid, grid, dim], raw)?)?;
    Ok(WorldSample {
        image,
        mask,
        features,
    })
}

pub fn record_id(index: usize) -> String {
    format!("img_{index:04}")
}

/// Writes `n` samples plus `manifest.json` and `world.json` under `out`,
/// then loads the manifest back through the validating loader.
pub fn generate_world(config: &SyntheticWorldConfig, n: usize, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    for sub in ["images", "masks", "features"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let ext = if config.channels == 3 { "ppm" } else { "pgm" };
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = record_id(i);
        let sample = generate_sample(config, i as u64)?;
        let entry = RecordEntry {
            id: id.clone(),
            image: format!("images/{id}.{ext}").into(),
            gt_mask: Some(format!("masks/{id}.pgm").into()),
            features: format!("features/{id}.pft").into(),
        };
        pnm::write_image(&out.join(&entry.image), &sample.image)?;
        pnm::write_mask(&out.join(entry.gt_mask.as_ref().unwrap()), &sample.mask)?;
        sample.features.save(&out.join(&entry.features))?;
        records.push(entry);
    }
    let manifest = ManifestFile {
        name: config.name.clone(),
        patch_size: config.patch_size,
        records,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("world.json"), config)?;
    load_manifest(&out.join("manifest.json"))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
