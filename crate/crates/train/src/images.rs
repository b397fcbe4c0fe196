//! PNG sample grids.

use std::path::Path;

use image::{Rgb, RgbImage};
use wingan_tensor::{Real, Tensor};

/// Maps a generator output in [-1, 1] to a byte: `round((clamp(x) + 1)·127.5)`.
pub fn to_byte<T: Real>(x: T) -> u8 {
    let v = x.as_f64();
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    ((v + 1.0) * 127.5).round() as u8
}

/// Tiles `[B, H, W, 3]` row-major into `ceil(√B)` columns; empty cells stay black.
pub fn grid<T: Real>(images: &Tensor<T>) -> RgbImage {
    let s = images.shape();
    assert!(s.len() == 4 && s[3] == 3, "expected [B, H, W, 3], got {s:?}");
    let (b, h, w) = (s[0], s[1], s[2]);
    let cols = (b as f64).sqrt().ceil().max(1.0) as usize;
    let rows = b.div_ceil(cols).max(1);
    let mut out = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    let d = images.data();
    for n in 0..b {
        let (gy, gx) = (n / cols, n % cols);
        for i in 0..h {
            for j in 0..w {
                let o = ((n * h + i) * w + j) * 3;
                let px = Rgb([to_byte(d[o]), to_byte(d[o + 1]), to_byte(d[o + 2])]);
                out.put_pixel((gx * w + j) as u32, (gy * h + i) as u32, px);
            }
        }
    }
    out
}

pub fn save_grid<T: Real>(images: &Tensor<T>, path: &Path) -> Result<(), image::ImageError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    grid(images).save_with_format(path, image::ImageFormat::Png)
}
