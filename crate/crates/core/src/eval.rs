//! Scoring a synthetic set: train fresh classifiers on it from scratch and
//! report test accuracy over several random initialisations.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::data::DatasetIndex;
use crate::distill::{init_synthetic, InitStrategy, SyntheticSet};
use crate::encoder::{sample_params, EncoderConfig, EncoderParams, DEFAULT_WIDTH};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{sgd_momentum_step, StepLr};
use crate::rng::{self, derive_seed, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_NUM_MODELS: usize = 5;
pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub num_models: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub batch_size: usize,
    /// Training-time augmentation, drawn independently per sample.
    pub augment: AugmentSpec,
    pub width: usize,
    pub depth: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            num_models: DEFAULT_NUM_MODELS,
            epochs: DEFAULT_EPOCHS,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: 0.5,
            lr_step_epochs: 15,
            batch_size: DEFAULT_BATCH_SIZE,
            augment: AugmentSpec::default(),
            width: DEFAULT_WIDTH,
            depth: None,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_models == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 || self.width == 0 {
            return Err(Error::Config(
                "models, batch size, step size and width must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight decay", self.weight_decay),
            ("lr decay", self.lr_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base_lr: self.lr,
            gamma: self.lr_decay,
            step_size: self.lr_step_epochs,
        }
    }

    pub fn encoder_config(&self, channels: usize, image_size: usize, num_classes: usize) -> EncoderConfig {
        let mut cfg = EncoderConfig::for_input(channels, image_size, num_classes).with_width(self.width);
        if let Some(d) = self.depth {
            cfg = cfg.with_depth(d);
        }
        cfg
    }

    /// Seed of model `index` in a run.
    pub fn model_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, Stream::EvalModel, index as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn from_accuracies(accuracies: Vec<f64>, config: EvalConfig) -> Self {
        let (mean, std) = mean_std(&accuracies);
        EvalReport {
            accuracies,
            mean,
            std,
            config,
        }
    }

    /// `mean ± std` in percent.
    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fraction of rows whose arg-max (lowest index on ties) equals the label.
pub fn accuracy_from_logits(logits: &[f32], num_classes: usize, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .chunks(num_classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Logits of `params` on `images`, computed in chunks of `batch` rows.
pub fn predict(params: &EncoderParams<f32>, images: &Tensor<f32>, batch: usize) -> Result<Vec<f32>> {
    let n = images.shape()[0];
    let mut out = Vec::with_capacity(n * params.config.num_classes);
    for start in (0..n).step_by(batch.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(images.slice_rows(start, batch.min(n - start))?);
        let trace = params.forward(&mut g, x)?;
        out.extend_from_slice(g.value(trace.logits).data());
    }
    Ok(out)
}

pub fn test_accuracy(params: &EncoderParams<f32>, test: &DatasetIndex) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let logits = predict(params, &test.images, DEFAULT_BATCH_SIZE)?;
    Ok(accuracy_from_logits(&logits, params.config.num_classes, &test.labels))
}

/// Gather map applying one fresh draw of `spec` to each sample of a batch.
fn per_sample_map(spec: &AugmentSpec, shape: &[usize], r: &mut rng::Rng) -> Vec<Option<usize>> {
    let sample_len: usize = shape[1..].iter().product();
    let one = [1, shape[1], shape[2], shape[3]];
    (0..shape[0])
        .flat_map(|n| {
            let draw = spec.sample(r, shape[2], shape[3]);
            draw.index_map(&one)
                .into_iter()
                .map(move |s| s.map(|s| n * sample_len + s))
        })
        .collect()
}

/// Trains a fresh classifier with full parameter gradients on `images`.
/// The model with seed `seed` is trained deterministically.
pub fn train_on(
    images: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    config: &EvalConfig,
    seed: u64,
) -> Result<EncoderParams<f32>> {
    config.validate()?;
    let n = images.shape()[0];
    if n == 0 || labels.len() != n {
        return Err(Error::Config(format!("{n} training images with {} labels", labels.len())));
    }
    let (c, size) = (images.shape()[1], images.shape()[2]);
    let enc = config.encoder_config(c, size, num_classes);
    let mut params = sample_params::<f32>(&enc, seed)?;
    let mut velocity: Vec<Tensor<f32>> = params
        .tensors_mut()
        .into_iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let schedule = config.schedule();
    let mut shuffle_rng = rng::stream(seed, Stream::EvalShuffle, 0);
    let mut aug_rng = rng::stream(seed, Stream::Augment, 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let lr = schedule.rate_at(epoch) as f32;
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let mut x = g.constant(images.select_rows(chunk)?);
            if config.augment.is_enabled() {
                let shape = g.shape(x).to_vec();
                let map = per_sample_map(&config.augment, &shape, &mut aug_rng);
                x = g.gather(x, map, shape)?;
            }
            let trace = params.forward_bound(&mut g, &bound, x)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = g.softmax_cross_entropy(trace.logits, &y)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFiniteLoss { iteration: step, class: None });
            }
            g.backward(loss)?;
            for ((t, v), var) in params.tensors_mut().into_iter().zip(&mut velocity).zip(bound.vars()) {
                t.accumulate_grad(&g.grad_or_zeros(var))?;
                sgd_momentum_step(t, v, lr, config.momentum as f32, config.weight_decay as f32)?;
            }
            step += 1;
        }
    }
    Ok(params)
}

/// [`train_on`] applied to a synthetic set.
pub fn train_classifier(syn: &SyntheticSet, config: &EvalConfig, seed: u64) -> Result<EncoderParams<f32>> {
    if syn.is_empty() {
        return Err(Error::Config("synthetic set is empty".into()));
    }
    train_on(&syn.images, &syn.labels, syn.num_classes, config, seed)
}

/// Trains one model per seed, in parallel, and scores each on `test`.
pub fn evaluate_with_seeds(
    syn: &SyntheticSet,
    test: &DatasetIndex,
    config: &EvalConfig,
    seeds: &[u64],
) -> Result<EvalReport> {
    config.validate()?;
    let accuracies = seeds
        .par_iter()
        .map(|&s| test_accuracy(&train_classifier(syn, config, s)?, test))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_accuracies(accuracies, config.clone()))
}

/// `config.num_models` independent train-and-test runs with distinct seeds.
pub fn evaluate_synthetic(syn: &SyntheticSet, test: &DatasetIndex, config: &EvalConfig) -> Result<EvalReport> {
    let seeds: Vec<u64> = (0..config.num_models).map(|m| config.model_seed(m)).collect();
    evaluate_with_seeds(syn, test, config, &seeds)
}

/// Real-image selection without optimisation, the comparison baseline.
pub fn coreset_baseline(dataset: &DatasetIndex, ipc: usize, strategy: InitStrategy, seed: u64) -> Result<SyntheticSet> {
    if strategy == InitStrategy::Noise {
        return Err(Error::Config("coreset strategies are random and kcenter".into()));
    }
    init_synthetic(dataset, ipc, strategy, seed)
}
