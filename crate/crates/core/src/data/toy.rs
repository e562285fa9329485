//! Deterministic toy benchmark: one random template per class, samples are
//! the template plus i.i.d. Gaussian pixel noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ChannelStats, DatasetIndex};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            num_classes: 4,
            train_per_class: 64,
            test_per_class: 50,
            channels: 3,
            image_size: 8,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub train: DatasetIndex,
    pub test: DatasetIndex,
    /// Class templates `[K,C,H,W]`, normalised with the train statistics.
    pub templates: Tensor<f32>,
}

fn draw_split(
    templates: &[f32],
    spec: &ToySpec,
    per_class: usize,
    stream: u64,
) -> (Vec<f32>, Vec<usize>) {
    let len = templates.len() / spec.num_classes;
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite noise std");
    let mut r = rng::stream(spec.seed, Stream::Toy, stream);
    let mut pixels = Vec::with_capacity(spec.num_classes * per_class * len);
    let mut labels = Vec::with_capacity(spec.num_classes * per_class);
    // Interleave classes so labels are not sorted.
    for _ in 0..per_class {
        for k in 0..spec.num_classes {
            let t = &templates[k * len..(k + 1) * len];
            pixels.extend(t.iter().map(|&v| {
                if spec.noise_std > 0.0 {
                    v + noise.sample(&mut r) as f32
                } else {
                    v
                }
            }));
            labels.push(k);
        }
    }
    (pixels, labels)
}

pub fn gen_toy(spec: &ToySpec) -> Result<ToyDataset> {
    if spec.num_classes == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 || spec.channels == 0 || spec.image_size == 0 {
        return Err(Error::Config(format!("toy extents must be positive: {spec:?}")));
    }
    if !spec.noise_std.is_finite() || spec.noise_std < 0.0 {
        return Err(Error::Config(format!("toy noise std must be >= 0, got {}", spec.noise_std)));
    }
    let len = spec.channels * spec.image_size * spec.image_size;
    let mut r = rng::stream(spec.seed, Stream::Toy, 0);
    let templates: Vec<f32> = (0..spec.num_classes * len).map(|_| r.random::<f32>()).collect();

    let shape = |n| [n, spec.channels, spec.image_size, spec.image_size];
    let (px, labels) = draw_split(&templates, spec, spec.train_per_class, 1);
    let train = DatasetIndex::from_pixels(px, shape(spec.num_classes * spec.train_per_class), labels, spec.num_classes, None)?;
    let (px, labels) = draw_split(&templates, spec, spec.test_per_class, 2);
    let test = DatasetIndex::from_pixels(
        px,
        shape(spec.num_classes * spec.test_per_class),
        labels,
        spec.num_classes,
        Some(&train.stats),
    )?;
    let mut normalized = templates;
    train.stats.normalize(&mut normalized, spec.channels, spec.image_size * spec.image_size);
    Ok(ToyDataset {
        train,
        test,
        templates: Tensor::new(shape(spec.num_classes), normalized)?,
    })
}

impl ToyDataset {
    pub fn stats(&self) -> &ChannelStats {
        &self.train.stats
    }
}
