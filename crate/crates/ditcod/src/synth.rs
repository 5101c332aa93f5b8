//! Synthetic camouflage dataset: a band-passed noise texture for the
//! background, and an object region filled with the same texture shifted by
//! a small luminance delta. Deterministic per seed; samples derive their own
//! RNG from `seed ^ index` so generation can fan out across threads.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canny::canny_default;
use crate::error::{Error, Result};
use crate::pnm::{load_image, save_image};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipse,
    Blob,
    Mixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub image_size: usize,
    pub octaves: usize,
    pub base_freq: f64,
    /// Luminance shift of the object region, in (0, 0.2].
    pub contrast_delta: f64,
    pub shape: ShapeFamily,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 16,
            image_size: 64,
            octaves: 4,
            base_freq: 4.0,
            contrast_delta: 0.15,
            shape: ShapeFamily::Mixed,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_delta > 0.0 && self.contrast_delta <= 0.2) {
            return Err(Error::invalid(format!(
                "contrast_delta must be in (0, 0.2], got {}",
                self.contrast_delta
            )));
        }
        if self.n_samples == 0 || self.image_size < 8 {
            return Err(Error::invalid("need n_samples >= 1 and image_size >= 8"));
        }
        if self.octaves == 0 || self.base_freq < 1.0 {
            return Err(Error::invalid("need octaves >= 1 and base_freq >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f64>,
    pub gt: Tensor<f64>,
    pub boundary: Tensor<f64>,
}

/// Multi-octave value noise on [0,1], min-max normalized to [0.25, 0.75] so
/// a luminance shift of up to 0.2 never clips.
fn texture(rng: &mut ChaCha8Rng, size: usize, base_freq: f64, octaves: usize) -> Vec<f64> {
    let mut acc = vec![0.0; size * size];
    let mut amp = 1.0;
    for o in 0..octaves {
        let freq = base_freq * (1 << o) as f64;
        let g = freq.ceil() as usize + 1;
        let grid: Vec<f64> = (0..(g + 1) * (g + 1)).map(|_| rng.gen::<f64>()).collect();
        for y in 0..size {
            for x in 0..size {
                let fy = y as f64 / size as f64 * g as f64;
                let fx = x as f64 / size as f64 * g as f64;
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let (y1, x1) = ((y0 + 1).min(g), (x0 + 1).min(g));
                let v = (1.0 - ty) * ((1.0 - tx) * grid[y0 * (g + 1) + x0] + tx * grid[y0 * (g + 1) + x1])
                    + ty * ((1.0 - tx) * grid[y1 * (g + 1) + x0] + tx * grid[y1 * (g + 1) + x1]);
                acc[y * size + x] += amp * v;
            }
        }
        amp *= 0.5;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &acc {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-12);
    for v in &mut acc {
        *v = 0.25 + 0.5 * (*v - lo) / span;
    }
    acc
}

fn ellipse_mask(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let cx = rng.gen_range(0.3..0.7) * s;
    let cy = rng.gen_range(0.3..0.7) * s;
    let rx = rng.gen_range(0.10..0.40) * s;
    let ry = rng.gen_range(0.10..0.40) * s;
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (ct, st) = (theta.cos(), theta.sin());
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 + 0.5 - cy, (i % size) as f64 + 0.5 - cx);
            let u = ct * x + st * y;
            let v = -st * x + ct * y;
            if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Star-convex blob: a smoothed random-walk radius profile around a center.
fn blob_mask(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let cx = rng.gen_range(0.35..0.65) * s;
    let cy = rng.gen_range(0.35..0.65) * s;
    let r0 = rng.gen_range(0.12..0.32) * s;
    const K: usize = 16;
    let mut radii = [0.0f64; K];
    let mut walk = 0.0f64;
    for r in radii.iter_mut() {
        walk = (walk + rng.gen_range(-0.25..0.25)).clamp(-0.5, 0.5);
        *r = r0 * (1.0 + walk);
    }
    // close the loop smoothly
    let seam = (radii[0] + radii[K - 1]) / 2.0;
    radii[0] = seam;
    radii[K - 1] = seam;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 + 0.5 - cy, (i % size) as f64 + 0.5 - cx);
            let d = (x * x + y * y).sqrt();
            let a = y.atan2(x).rem_euclid(std::f64::consts::TAU);
            let fa = a / std::f64::consts::TAU * K as f64;
            let k0 = fa.floor() as usize % K;
            let t = fa - fa.floor();
            let r = (1.0 - t) * radii[k0] + t * radii[(k0 + 1) % K];
            if d <= r {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// GT mask with area between 2% and 60% of the image (resampled until the
/// contract holds).
fn gt_mask(rng: &mut ChaCha8Rng, size: usize, family: ShapeFamily) -> Vec<f64> {
    for _ in 0..200 {
        let pick = match family {
            ShapeFamily::Ellipse => ShapeFamily::Ellipse,
            ShapeFamily::Blob => ShapeFamily::Blob,
            ShapeFamily::Mixed => {
                if rng.gen::<bool>() {
                    ShapeFamily::Ellipse
                } else {
                    ShapeFamily::Blob
                }
            }
        };
        let mask = match pick {
            ShapeFamily::Ellipse => ellipse_mask(rng, size),
            _ => blob_mask(rng, size),
        };
        let frac = mask.iter().sum::<f64>() / (size * size) as f64;
        if (0.02..=0.60).contains(&frac) {
            return mask;
        }
    }
    unreachable!("mask area contract not satisfiable at this image size")
}

pub fn gen_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let n = cfg.image_size;
    let lum = texture(&mut rng, n, cfg.base_freq, cfg.octaves);
    let mask = gt_mask(&mut rng, n, cfg.shape);
    // fixed per-channel tints keep the image 3-channel without changing the
    // camouflage structure
    let tint = [1.0, 0.92, 0.85];
    let image = Tensor::from_fn(&[3, n, n], |i| {
        let (c, p) = (i / (n * n), i % (n * n));
        let v = lum[p] + cfg.contrast_delta * mask[p];
        (v * tint[c]).clamp(0.0, 1.0)
    });
    let gt = Tensor::new(vec![1, n, n], mask)?;
    let boundary = canny_default(&gt)?;
    Ok(Sample { id: format!("{index:04}"), image, gt, boundary })
}

fn worker_count(n: usize) -> usize {
    let cap = std::env::var("DITCOD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1));
    cap.min(n).max(1)
}

/// Generate the dataset under `out_dir`: `img/{id}.ppm`, `gt/{id}.pgm`,
/// `bnd/{id}.pgm`, plus a `manifest.json` recording the config.
pub fn gen_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<String>> {
    cfg.validate()?;
    for sub in ["img", "gt", "bnd"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }
    let workers = worker_count(cfg.n_samples);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let write_one = |index: usize| -> Result<()> {
        let s = gen_sample(cfg, index)?;
        save_image(&out_dir.join("img").join(format!("{}.ppm", s.id)), &s.image)?;
        save_image(&out_dir.join("gt").join(format!("{}.pgm", s.id)), &s.gt)?;
        save_image(&out_dir.join("bnd").join(format!("{}.pgm", s.id)), &s.boundary)?;
        Ok(())
    };
    if workers == 1 {
        for i in 0..cfg.n_samples {
            write_one(i)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| -> Result<()> {
                        loop {
                            let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                            if i >= cfg.n_samples {
                                return Ok(());
                            }
                            write_one(i)?;
                        }
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("generator worker panicked")?;
            }
            Ok(())
        })?;
    }
    let ids: Vec<String> = (0..cfg.n_samples).map(|i| format!("{i:04}")).collect();
    let manifest = serde_json::json!({ "config": cfg, "ids": ids });
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(ids)
}

pub fn dataset_ids(dir: &Path) -> Result<Vec<String>> {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest["ids"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .ok_or_else(|| Error::data("dataset manifest has no id list"))
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let read = |sub: &str, ext: &str| -> Result<Tensor<f64>> {
        let p: PathBuf = dir.join(sub).join(format!("{id}.{ext}"));
        load_image(&p)
    };
    let image = read("img", "ppm")?;
    // binarize against 8-bit quantization noise
    let gt = read("gt", "pgm")?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let boundary = read("bnd", "pgm")?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    if image.shape()[1..] != gt.shape()[1..] || gt.shape() != boundary.shape() {
        return Err(Error::data(format!(
            "sample {id}: inconsistent shapes {:?} / {:?} / {:?}",
            image.shape(),
            gt.shape(),
            boundary.shape()
        )));
    }
    Ok(Sample { id: id.to_string(), image, gt, boundary })
}
