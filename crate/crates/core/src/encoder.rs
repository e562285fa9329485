//! The ConvNet feature extractor.
//!
//! `depth` identical blocks of 3x3 conv (`width` kernels) → instance norm →
//! ReLU → 3x3/2 average pooling, followed by a linear classifier over the
//! flattened output of the last block. During distillation a fresh random
//! draw of the weights is used at every iteration and never trained.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::pooled_extent;
use crate::rng;
use crate::tensor::{Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const DEFAULT_WIDTH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub width: usize,
    pub input_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
}

/// 3 blocks up to 32px, 4 up to 64px, 5 beyond.
pub fn default_depth(input_size: usize) -> usize {
    match input_size {
        0..=32 => 3,
        33..=64 => 4,
        _ => 5,
    }
}

impl EncoderConfig {
    pub fn for_input(input_channels: usize, input_size: usize, num_classes: usize) -> Self {
        EncoderConfig {
            depth: default_depth(input_size),
            width: DEFAULT_WIDTH,
            input_channels,
            input_size,
            num_classes,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!("encoder extents must be positive: {self:?}")));
        }
        let mut s = self.input_size;
        for block in 0..self.depth {
            if s < 2 {
                return Err(Error::Config(format!(
                    "input size {} cannot be pooled {} times (block {} sees {s}px)",
                    self.input_size, self.depth, block + 1
                )));
            }
            s = pooled_extent(s);
        }
        Ok(())
    }

    /// Spatial extent of each block's output.
    pub fn feature_sizes(&self) -> Vec<usize> {
        let mut s = self.input_size;
        (0..self.depth)
            .map(|_| {
                s = pooled_extent(s);
                s
            })
            .collect()
    }

    pub fn embedding_dim(&self) -> usize {
        let s = *self.feature_sizes().last().expect("depth >= 1");
        self.width * s * s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub config: EncoderConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub classifier_weight: Tensor<T>,
    pub classifier_bias: Tensor<T>,
    pub seed: u64,
}

fn he_normal<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut rng::Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Draws encoder weights: He-normal conv and classifier weights, zero
/// biases, identity affine norm parameters. Deterministic in `seed`.
pub fn sample_params<T: Real>(config: &EncoderConfig, seed: u64) -> Result<EncoderParams<T>> {
    config.validate()?;
    let mut r = rng::rng(seed);
    let mut in_ch = config.input_channels;
    let mut blocks = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        blocks.push(ConvBlock {
            weight: he_normal(vec![config.width, in_ch, 3, 3], in_ch * 9, &mut r),
            bias: Tensor::zeros([config.width]),
            gamma: Tensor::ones([config.width]),
            beta: Tensor::zeros([config.width]),
        });
        in_ch = config.width;
    }
    let d = config.embedding_dim();
    Ok(EncoderParams {
        config: *config,
        blocks,
        classifier_weight: he_normal(vec![config.num_classes, d], d, &mut r),
        classifier_bias: Tensor::zeros([config.num_classes]),
        seed,
    })
}

/// Per-block features (post-pool) and classifier logits.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub features: Vec<Var>,
    pub logits: Var,
}

impl ForwardTrace {
    pub fn last_feature(&self) -> Var {
        *self.features.last().expect("depth >= 1")
    }
}

/// Parameters recorded into a particular graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub blocks: Vec<[Var; 4]>,
    pub classifier: [Var; 2],
}

impl BoundParams {
    /// Every parameter handle in the order of [`EncoderParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.blocks
            .iter()
            .flat_map(|b| b.iter().copied())
            .chain(self.classifier)
            .collect()
    }
}

impl<T: Real> EncoderParams<T> {
    /// Records the parameters as leaves; `trainable` marks them for gradients.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor<T>| graph.leaf(t.clone().with_requires_grad(trainable));
        let blocks = self
            .blocks
            .iter()
            .map(|b| [leaf(&b.weight), leaf(&b.bias), leaf(&b.gamma), leaf(&b.beta)])
            .collect();
        let classifier = [leaf(&self.classifier_weight), leaf(&self.classifier_bias)];
        BoundParams { blocks, classifier }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            config: self.config,
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    weight: b.weight.cast(),
                    bias: b.bias.cast(),
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                })
                .collect(),
            classifier_weight: self.classifier_weight.cast(),
            classifier_bias: self.classifier_bias.cast(),
            seed: self.seed,
        }
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.input_channels || shape[2] != c.input_size || shape[3] != c.input_size {
            return Err(Error::shape(
                "encoder",
                format!(
                    "images {shape:?} do not match [B,{},{},{}]",
                    c.input_channels, c.input_size, c.input_size
                ),
            ));
        }
        Ok(())
    }

    /// Runs the encoder over `images` inside `graph` using already bound
    /// parameters. Gradients reach `images` if it requires grad.
    pub fn forward_bound(&self, graph: &mut Graph<T>, bound: &BoundParams, images: Var) -> Result<ForwardTrace> {
        self.check_images(graph.shape(images))?;
        let eps = T::of(NORM_EPS);
        let mut h = images;
        let mut features = Vec::with_capacity(self.config.depth);
        for &[w, b, gamma, beta] in &bound.blocks {
            h = graph.conv2d(h, w, b, 1)?;
            h = graph.instance_norm(h, gamma, beta, eps)?;
            h = graph.relu(h);
            h = graph.avgpool(h)?;
            features.push(h);
        }
        let flat = graph.flatten(h);
        let [cw, cb] = bound.classifier;
        let logits = graph.linear(flat, cw, cb)?;
        Ok(ForwardTrace { features, logits })
    }

    /// Forward pass with the parameters held constant.
    pub fn forward(&self, graph: &mut Graph<T>, images: Var) -> Result<ForwardTrace> {
        let bound = self.bind(graph, false);
        self.forward_bound(graph, &bound, images)
    }
}

/// Convenience wrapper: a fresh graph holding `images` as a leaf (tracking
/// gradients when `record_grad`) and the resulting trace.
pub fn encode<T: Real>(
    params: &EncoderParams<T>,
    images: &Tensor<T>,
    record_grad: bool,
) -> Result<(Graph<T>, Var, ForwardTrace)> {
    let mut graph = Graph::new();
    let x = graph.leaf(images.clone().with_requires_grad(record_grad));
    let trace = params.forward(&mut graph, x)?;
    Ok((graph, x, trace))
}
