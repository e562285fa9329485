//! Siamese differentiable augmentation.
//!
//! One set of transform parameters is drawn per class and iteration and
//! applied identically to the real and the synthetic batch. Flip and
//! shift-crop are pixel permutations with zero fill and cutout zeroes a
//! square, so all three compose into a single gather whose backward pass is
//! a scatter-add.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip: bool,
    pub crop: bool,
    pub cutout: bool,
    pub flip_prob: f64,
    pub crop_pad_ratio: f64,
    pub cutout_ratio: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip: true,
            crop: true,
            cutout: true,
            flip_prob: 0.5,
            crop_pad_ratio: 0.125,
            cutout_ratio: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn none() -> Self {
        AugmentSpec {
            flip: false,
            crop: false,
            cutout: false,
            ..Default::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.flip || self.crop || self.cutout
    }

    /// Parses `none` or a comma list drawn from `flip,crop,cutout`.
    pub fn parse_list(list: &str) -> std::result::Result<Self, String> {
        let mut spec = AugmentSpec::none();
        if list.trim() == "none" {
            return Ok(spec);
        }
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "flip" => spec.flip = true,
                "crop" => spec.crop = true,
                "cutout" => spec.cutout = true,
                other => return Err(format!("unknown augmentation `{other}` (expected flip, crop, cutout or none)")),
            }
        }
        Ok(spec)
    }

    pub fn crop_pad(&self, size: usize) -> usize {
        (self.crop_pad_ratio * size as f64).round() as usize
    }

    pub fn cutout_side(&self, size: usize) -> usize {
        ((self.cutout_ratio * size as f64).round() as usize).min(size)
    }

    /// Draws one parameter set for `height x width` images.
    pub fn sample(&self, rng: &mut Rng, height: usize, width: usize) -> AugmentDraw {
        let mut draw = AugmentDraw::identity();
        if self.flip {
            draw.flip = rng.random::<f64>() < self.flip_prob;
        }
        if self.crop {
            let (py, px) = (self.crop_pad(height) as i64, self.crop_pad(width) as i64);
            draw.shift = (rng.random_range(-py..=py), rng.random_range(-px..=px));
        }
        if self.cutout {
            let (sy, sx) = (self.cutout_side(height), self.cutout_side(width));
            if sy > 0 && sx > 0 {
                let y = rng.random_range(0..=height - sy);
                let x = rng.random_range(0..=width - sx);
                draw.cutout = Some(Cutout { y, x, height: sy, width: sx });
            }
        }
        draw
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutout {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

/// Concrete transform parameters shared by both branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub flip: bool,
    /// Translation `(dy, dx)`: output pixel `(y, x)` reads input `(y+dy, x+dx)`.
    pub shift: (i64, i64),
    pub cutout: Option<Cutout>,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            flip: false,
            shift: (0, 0),
            cutout: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Source pixel within one `height x width` plane, or `None` for zero.
    fn source(&self, y: usize, x: usize, height: usize, width: usize) -> Option<usize> {
        if let Some(c) = self.cutout {
            if (c.y..c.y + c.height).contains(&y) && (c.x..c.x + c.width).contains(&x) {
                return None;
            }
        }
        let sy = y as i64 + self.shift.0;
        let sx = x as i64 + self.shift.1;
        if sy < 0 || sx < 0 || sy >= height as i64 || sx >= width as i64 {
            return None;
        }
        let sx = if self.flip { width as i64 - 1 - sx } else { sx };
        Some(sy as usize * width + sx as usize)
    }

    /// Gather map for a whole `[N,C,H,W]` batch.
    pub fn index_map(&self, shape: &[usize]) -> Vec<Option<usize>> {
        let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
        let plane_map: Vec<Option<usize>> =
            (0..h * w).map(|i| self.source(i / w, i % w, h, w)).collect();
        (0..planes)
            .flat_map(|p| plane_map.iter().map(move |s| s.map(|s| p * h * w + s)))
            .collect()
    }

    /// Applies the transform to one batch inside `g`.
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, batch: Var) -> Result<Var> {
        if self.is_identity() {
            return Ok(batch);
        }
        let shape = g.shape(batch).to_vec();
        let map = self.index_map(&shape);
        g.gather(batch, map, shape)
    }
}

/// Applies the same draw to the real and the synthetic batch.
pub fn siamese_augment<T: Real>(
    g: &mut Graph<T>,
    real: Var,
    syn: Var,
    draw: &AugmentDraw,
) -> Result<(Var, Var)> {
    Ok((draw.apply(g, real)?, draw.apply(g, syn)?))
}
