//! Real training data: readers, per-class indexing and normalisation.

mod cifar;
mod mnist;
mod toy;

pub use cifar::{load_cifar10, load_cifar10_dir, parse_cifar10, CIFAR_LABEL_COUNT, CIFAR_RECORD_BYTES};
pub use mnist::{load_mnist, load_mnist_dir, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use toy::{gen_toy, ToyDataset, ToySpec};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-channel standardisation statistics, in `[0,1]` pixel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and std per channel of an `[N,C,H,W]` buffer.
    pub fn compute(data: &[f32], shape: &[usize]) -> Self {
        let (n, c) = (shape[0], shape[1]);
        let plane = shape[2..].iter().product::<usize>();
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..n {
                for &v in &data[(i * c + ch) * plane..][..plane] {
                    s += v as f64;
                    s2 += v as f64 * v as f64;
                }
            }
            let count = (n * plane) as f64;
            let m = s / count;
            let var = (s2 / count - m * m).max(0.0);
            mean[ch] = m as f32;
            std[ch] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
        ChannelStats { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, data: &mut [f32], channels: usize, plane: usize) {
        for (i, block) in data.chunks_mut(plane).enumerate() {
            let c = i % channels;
            block.iter_mut().for_each(|v| *v = (*v - self.mean[c]) / self.std[c]);
        }
    }

    pub fn denormalize(&self, data: &mut [f32], channels: usize, plane: usize) {
        for (i, block) in data.chunks_mut(plane).enumerate() {
            let c = i % channels;
            block.iter_mut().for_each(|v| *v = *v * self.std[c] + self.mean[c]);
        }
    }
}

/// A labelled, normalised image set with per-class sample indices.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub per_class: Vec<Vec<usize>>,
    pub num_classes: usize,
    pub stats: ChannelStats,
}

impl DatasetIndex {
    /// Builds the index from `[0,1]` pixels. Statistics are computed from
    /// these pixels unless `stats` is given (e.g. train stats for a test split).
    pub fn from_pixels(
        mut pixels: Vec<f32>,
        shape: [usize; 4],
        labels: Vec<usize>,
        num_classes: usize,
        stats: Option<&ChannelStats>,
    ) -> Result<Self> {
        let stats = stats.cloned().unwrap_or_else(|| ChannelStats::compute(&pixels, &shape));
        if stats.channels() != shape[1] {
            return Err(Error::shape(
                "dataset",
                format!("{} channel stats for {} channels", stats.channels(), shape[1]),
            ));
        }
        stats.normalize(&mut pixels, shape[1], shape[2] * shape[3]);
        Self::from_normalized(Tensor::new(shape, pixels)?, labels, num_classes, stats)
    }

    pub fn from_normalized(
        images: Tensor<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        stats: ChannelStats,
    ) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        let mut per_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: num_classes,
                });
            }
            per_class[l].push(i);
        }
        Ok(DatasetIndex {
            images,
            labels,
            per_class,
            num_classes,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn image_len(&self) -> usize {
        self.images.numel() / self.len()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        self.images.select_rows(indices)
    }

    /// Up to `n` distinct indices of `class`, drawn uniformly.
    pub fn sample_class(&self, class: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
        let pool = &self.per_class[class];
        let n = n.min(pool.len());
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    }
}
