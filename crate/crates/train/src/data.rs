//! Toy image datasets. Images are `[H, W, 3]` row-major with values in [-1, 1].

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wingan_tensor::{Real, Tensor};

use crate::config::DatasetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// One circle (even classes) or axis-aligned rectangle (odd classes) on
    /// black, coloured by class.
    Shapes,
    /// Stationary blurred noise with a per-class colour and length scale.
    GaussTexture,
    /// PNG files, labelled by sorted subdirectory.
    ImageDir,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("decoding {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{0}")]
    Invalid(String),
}

/// Base colours; class `k` uses entry `k mod 8`.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.9, -0.7, -0.7],
    [-0.7, -0.4, 0.9],
    [-0.7, 0.9, -0.7],
    [0.9, 0.9, -0.7],
    [0.9, -0.7, 0.9],
    [-0.7, 0.9, 0.9],
    [0.9, 0.3, -0.7],
    [0.3, -0.7, 0.9],
];

const BACKGROUND: f64 = -1.0;
/// Pixels whose brightest channel exceeds this count as foreground.
pub const FOREGROUND_THRESHOLD: f64 = -0.5;

pub fn palette(class: usize) -> [f64; 3] {
    PALETTE[class % PALETTE.len()]
}

/// An in-memory image with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub resolution: usize,
    pub classes: usize,
    seed: u64,
    files: Vec<Sample>,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl Dataset {
    pub fn new(cfg: &DatasetConfig, seed: u64) -> Result<Self, DataError> {
        if cfg.resolution < 4 || cfg.classes == 0 {
            return Err(DataError::Invalid(format!("resolution {} with {} classes", cfg.resolution, cfg.classes)));
        }
        let mut ds = Self {
            kind: cfg.kind,
            resolution: cfg.resolution,
            classes: cfg.classes,
            seed,
            files: Vec::new(),
        };
        if cfg.kind == DatasetKind::ImageDir {
            let path = cfg.path.as_deref().ok_or_else(|| DataError::Invalid("image_dir needs a path".into()))?;
            let (files, classes) = load_dir(path, cfg.resolution)?;
            ds.files = files;
            ds.classes = classes;
        }
        Ok(ds)
    }

    /// Number of distinct stored images; procedural sets are unbounded.
    pub fn len(&self) -> Option<usize> {
        (self.kind == DatasetKind::ImageDir).then_some(self.files.len())
    }

    pub fn sample(&self, index: u64) -> Sample {
        let r = self.resolution;
        match self.kind {
            DatasetKind::Shapes => {
                let label = (index % self.classes as u64) as usize;
                shape_image(r, label, &mut sample_rng(self.seed, index))
            }
            DatasetKind::GaussTexture => {
                let label = (index % self.classes as u64) as usize;
                texture_image(r, label, &mut sample_rng(self.seed, index))
            }
            DatasetKind::ImageDir => self.files[(index % self.files.len() as u64) as usize].clone(),
        }
    }

    /// Stacks samples into `[B, H, W, 3]`.
    pub fn batch<T: Real>(&self, indices: &[u64]) -> (Tensor<T>, Vec<usize>) {
        let r = self.resolution;
        let mut data = Vec::with_capacity(indices.len() * r * r * 3);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.sample(i);
            data.extend(s.pixels.iter().map(|&v| T::of(v)));
            labels.push(s.label);
        }
        (Tensor::new(&[indices.len(), r, r, 3], data).expect("batch shape"), labels)
    }
}

fn shape_image<R: Rng>(r: usize, label: usize, rng: &mut R) -> Sample {
    let rf = r as f64;
    let bright = rng.random_range(0.8..=1.0);
    let base = palette(label);
    let colour = base.map(|c| (c + 1.0) * bright - 1.0);
    let mut pixels = vec![BACKGROUND; r * r * 3];
    let cy = rng.random_range(0.3..0.7) * rf;
    let cx = rng.random_range(0.3..0.7) * rf;
    let (hy, hx) = if label % 2 == 0 {
        let rad = rng.random_range(0.18..0.3) * rf;
        (rad, rad)
    } else {
        (rng.random_range(0.12..0.3) * rf, rng.random_range(0.12..0.3) * rf)
    };
    for i in 0..r {
        for j in 0..r {
            let dy = i as f64 + 0.5 - cy;
            let dx = j as f64 + 0.5 - cx;
            let inside = if label % 2 == 0 {
                dy * dy + dx * dx <= hy * hy
            } else {
                dy.abs() <= hy && dx.abs() <= hx
            };
            if inside {
                pixels[(i * r + j) * 3..(i * r + j) * 3 + 3].copy_from_slice(&colour);
            }
        }
    }
    Sample { pixels, label }
}

/// Circular Gaussian blur along one axis of an `r × r` field.
fn blur_axis(field: &[f64], r: usize, kernel: &[f64], rows: bool) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; field.len()];
    for i in 0..r {
        for j in 0..r {
            let mut acc = 0.0;
            for (t, &k) in kernel.iter().enumerate() {
                let o = t as isize - half;
                let (ii, jj) = if rows {
                    ((i as isize + o).rem_euclid(r as isize) as usize, j)
                } else {
                    (i, (j as isize + o).rem_euclid(r as isize) as usize)
                };
                acc += k * field[ii * r + jj];
            }
            out[i * r + j] = acc;
        }
    }
    out
}

/// Length scale of class `k` in pixels.
pub fn texture_scale(label: usize) -> f64 {
    1.0 + 1.5 * label as f64
}

fn texture_image<R: Rng>(r: usize, label: usize, rng: &mut R) -> Sample {
    let sigma = texture_scale(label);
    let half = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|t| {
            let d = t as f64 - half as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    // Unit-variance output for white-noise input.
    let norm = kernel.iter().map(|k| k * k).sum::<f64>();
    let base = palette(label);
    let normal = rand_distr::StandardNormal;
    let mut pixels = vec![0.0; r * r * 3];
    for c in 0..3 {
        let noise: Vec<f64> = (0..r * r).map(|_| rng.sample::<f64, _>(normal)).collect();
        let f = blur_axis(&blur_axis(&noise, r, &kernel, true), r, &kernel, false);
        for (p, v) in f.iter().enumerate() {
            pixels[p * 3 + c] = (0.5 * base[c] + 0.35 * v / norm).clamp(-1.0, 1.0);
        }
    }
    Sample { pixels, label }
}

fn load_image(path: &Path, r: usize) -> Result<Vec<f64>, DataError> {
    let img = image::open(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = image::imageops::resize(&img.to_rgb8(), r as u32, r as u32, image::imageops::FilterType::Triangle);
    Ok(rgb.into_raw().into_iter().map(|v| v as f64 / 127.5 - 1.0).collect())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let io = |source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(io)? {
        out.push(e.map_err(io)?.path());
    }
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn load_dir(dir: &Path, r: usize) -> Result<(Vec<Sample>, usize), DataError> {
    let entries = sorted_entries(dir)?;
    let subdirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    let mut files = Vec::new();
    let classes = if subdirs.is_empty() {
        for p in entries.iter().filter(|p| is_png(p)) {
            files.push(Sample {
                pixels: load_image(p, r)?,
                label: 0,
            });
        }
        1
    } else {
        for (label, d) in subdirs.iter().enumerate() {
            for p in sorted_entries(d)?.iter().filter(|p| is_png(p)) {
                files.push(Sample {
                    pixels: load_image(p, r)?,
                    label,
                });
            }
        }
        subdirs.len()
    };
    if files.is_empty() {
        return Err(DataError::Invalid(format!("no PNG files under {}", dir.display())));
    }
    Ok((files, classes))
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Largest absolute difference over the six statistics.
    pub fn max_gap(&self, other: &ChannelStats) -> f64 {
        (0..3)
            .map(|c| (self.mean[c] - other.mean[c]).abs().max((self.std[c] - other.std[c]).abs()))
            .fold(0.0, f64::max)
    }
}

/// Statistics of `[.., 3]`-interleaved pixel values.
pub fn channel_stats<T: Real>(pixels: &[T]) -> ChannelStats {
    let n = (pixels.len() / 3).max(1) as f64;
    let mut mean = [0.0; 3];
    for (i, v) in pixels.iter().enumerate() {
        mean[i % 3] += v.as_f64();
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 3];
    for (i, v) in pixels.iter().enumerate() {
        let d = v.as_f64() - mean[i % 3];
        var[i % 3] += d * d;
    }
    ChannelStats {
        mean,
        std: var.map(|v| (v / n).sqrt()),
    }
}

impl Dataset {
    /// Statistics over samples `0..n`.
    pub fn stats(&self, n: u64) -> ChannelStats {
        let mut all = Vec::new();
        for i in 0..n {
            all.extend(self.sample(i).pixels);
        }
        channel_stats(&all)
    }
}

/// Colour-rule classifier for SHAPES images: the mean foreground colour's
/// nearest palette entry. `None` when no pixel is foreground.
pub fn classify_by_colour<T: Real>(pixels: &[T], classes: usize) -> Option<usize> {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for px in pixels.chunks_exact(3) {
        let v = [px[0].as_f64(), px[1].as_f64(), px[2].as_f64()];
        if v.iter().cloned().fold(f64::MIN, f64::max) > FOREGROUND_THRESHOLD {
            for c in 0..3 {
                sum[c] += v[c];
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let mean = sum.map(|s| s / count as f64);
    (0..classes.min(PALETTE.len())).min_by(|&a, &b| {
        let d = |k: usize| palette(k).iter().zip(&mean).map(|(p, m)| (p - m) * (p - m)).sum::<f64>();
        d(a).total_cmp(&d(b))
    })
}
