//! Binary PPM (`P6`) grids of synthetic images.

use std::fs;
use std::path::Path;

use crate::data::ChannelStats;
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

impl Ppm {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// One row per class, one column per image. Pixels are mapped back through
/// `stats`, clamped to `[0,1]` and scaled to bytes; single-channel images
/// are replicated to RGB. Tiles are separated by `gutter` black pixels.
pub fn image_grid(set: &SyntheticSet, stats: &ChannelStats, gutter: usize) -> Result<Ppm> {
    let c = set.channels();
    if c != 1 && c != 3 {
        return Err(Error::Config(format!("cannot render {c}-channel images")));
    }
    if stats.channels() != c {
        return Err(Error::Config(format!("{} channel stats for {c}-channel images", stats.channels())));
    }
    let (h, w) = (set.images.shape()[2], set.images.shape()[3]);
    let cols = set.ipc;
    let rows = set.num_classes;
    let width = cols * w + cols.saturating_sub(1) * gutter;
    let height = rows * h + rows.saturating_sub(1) * gutter;
    let mut rgb = vec![0u8; 3 * width * height];

    let mut pixels = set.images.data().to_vec();
    stats.denormalize(&mut pixels, c, h * w);
    let to_byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;

    for (i, img) in pixels.chunks(c * h * w).enumerate() {
        let (row, col) = (i / set.ipc, i % set.ipc);
        let (oy, ox) = (row * (h + gutter), col * (w + gutter));
        for y in 0..h {
            for x in 0..w {
                let dst = 3 * ((oy + y) * width + ox + x);
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    rgb[dst + ch] = to_byte(img[src * h * w + y * w + x]);
                }
            }
        }
    }
    Ok(Ppm { width, height, rgb })
}
