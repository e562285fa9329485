//! Learning the synthetic set.
//!
//! Each iteration draws a fresh random encoder, samples a real batch per
//! class, applies one shared augmentation draw per class to the real batch
//! and to that class's synthetic images, and takes an SGD-momentum step on
//! the synthetic pixels against the attention- and mean-matching objective.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentDraw, AugmentSpec};
use crate::coreset::k_center;
use crate::data::DatasetIndex;
use crate::encoder::{sample_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{self, matching_objective, ClassSummary, LossBreakdown, MatchSpec, SummaryValues};
use crate::optim::sgd_momentum_step;
use crate::rng::{self, derive_seed, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_ITERATIONS: usize = 8000;
pub const DEFAULT_REAL_BATCH: usize = 256;
pub const DEFAULT_IMAGE_MOMENTUM: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    Random,
    #[serde(rename = "kcenter")]
    KCenter,
    Noise,
}

impl FromStr for InitStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "kcenter" => Ok(Self::KCenter),
            "noise" => Ok(Self::Noise),
            other => Err(format!("unknown init strategy `{other}` (random, kcenter, noise)")),
        }
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::KCenter => "kcenter",
            Self::Noise => "noise",
        })
    }
}

/// Learnable images with fixed, class-blocked labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    /// `[K·ipc, C, H, W]`; class `k` occupies rows `k·ipc .. (k+1)·ipc`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub ipc: usize,
    pub num_classes: usize,
}

impl SyntheticSet {
    pub fn new(images: Tensor<f32>, num_classes: usize, ipc: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != num_classes * ipc {
            return Err(Error::shape(
                "synthetic set",
                format!("{:?} for {num_classes} classes x {ipc}", images.shape()),
            ));
        }
        let images = images.with_requires_grad(true);
        let labels = (0..num_classes).flat_map(|k| std::iter::repeat_n(k, ipc)).collect();
        Ok(SyntheticSet {
            images,
            labels,
            ipc,
            num_classes,
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

    pub fn class_images(&self, class: usize) -> Result<Tensor<f32>> {
        self.images.slice_rows(class * self.ipc, self.ipc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub ipc: usize,
    pub iterations: usize,
    pub lr_images: f64,
    pub image_momentum: f64,
    pub weight_decay_images: f64,
    pub lambda: f64,
    pub p: f64,
    pub real_batch_per_class: usize,
    pub seed: u64,
    pub init: InitStrategy,
    /// 1-based blocks used for attention matching; `None` means all but the last.
    pub layers: Option<Vec<usize>>,
    pub use_sam: bool,
    pub use_mmd: bool,
    pub augment: AugmentSpec,
    pub width: usize,
    /// Overrides the resolution-based depth rule.
    pub depth: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self::for_dataset(10, 32)
    }
}

impl DistillConfig {
    /// Defaults for `ipc` images per class at `image_size` pixels: image
    /// learning rate 1 up to 50 IPC and 10 above; task balance 0.01 up to
    /// 32px and 0.02 above.
    pub fn for_dataset(ipc: usize, image_size: usize) -> Self {
        DistillConfig {
            ipc,
            iterations: DEFAULT_ITERATIONS,
            lr_images: if ipc <= 50 { 1.0 } else { 10.0 },
            image_momentum: DEFAULT_IMAGE_MOMENTUM,
            weight_decay_images: 0.0,
            lambda: if image_size <= 32 {
                losses::DEFAULT_LAMBDA
            } else {
                losses::DEFAULT_LAMBDA_HIGH_RES
            },
            p: losses::DEFAULT_POWER,
            real_batch_per_class: DEFAULT_REAL_BATCH,
            seed: 0,
            init: InitStrategy::Random,
            layers: None,
            use_sam: true,
            use_mmd: true,
            augment: AugmentSpec::default(),
            width: crate::encoder::DEFAULT_WIDTH,
            depth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ipc == 0 || self.real_batch_per_class == 0 || self.width == 0 {
            return bad("ipc, real batch and width must be at least 1".into());
        }
        for (name, v) in [
            ("lr", self.lr_images),
            ("momentum", self.image_momentum),
            ("weight decay", self.weight_decay_images),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return bad(format!("p must be >= 1, got {}", self.p));
        }
        Ok(())
    }

    pub fn encoder_config(&self, channels: usize, image_size: usize, num_classes: usize) -> EncoderConfig {
        let mut cfg = EncoderConfig::for_input(channels, image_size, num_classes).with_width(self.width);
        if let Some(d) = self.depth {
            cfg = cfg.with_depth(d);
        }
        cfg
    }

    pub fn match_spec(&self, depth: usize) -> MatchSpec {
        MatchSpec {
            p: self.p,
            lambda: self.lambda,
            layers: self.layers.clone().unwrap_or_else(|| (1..depth).collect()),
            use_sam: self.use_sam,
            use_mmd: self.use_mmd,
        }
    }
}

/// Initial synthetic images: real samples drawn at random, k-center picks,
/// or standard normal noise.
pub fn init_synthetic(
    dataset: &DatasetIndex,
    ipc: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<SyntheticSet> {
    if ipc == 0 {
        return Err(Error::Config("ipc must be at least 1".into()));
    }
    let mut shape = dataset.images.shape().to_vec();
    shape[0] = dataset.num_classes * ipc;
    let mut r = rng::stream(seed, Stream::Init, 0);
    if strategy == InitStrategy::Noise {
        let images = Tensor::from_fn(shape, |_| StandardNormal.sample(&mut r));
        return SyntheticSet::new(images, dataset.num_classes, ipc);
    }
    let mut picked = Vec::with_capacity(dataset.num_classes * ipc);
    for (k, pool) in dataset.per_class.iter().enumerate() {
        if pool.len() < ipc {
            return Err(Error::InsufficientSamples {
                class: k,
                available: pool.len(),
                needed: ipc,
            });
        }
        match strategy {
            InitStrategy::Random => picked.extend(dataset.sample_class(k, ipc, &mut r)),
            InitStrategy::KCenter => {
                let points = dataset.gather(pool)?;
                let chosen = k_center(points.data(), dataset.image_len(), ipc);
                picked.extend(chosen.into_iter().map(|i| pool[i]));
            }
            InitStrategy::Noise => unreachable!(),
        }
    }
    SyntheticSet::new(dataset.gather(&picked)?, dataset.num_classes, ipc)
}

/// What one iteration reports.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub breakdown: LossBreakdown,
    /// The augmentation draw shared by both branches of each class.
    pub draws: Vec<AugmentDraw>,
}

pub trait ProgressSink {
    fn record(&mut self, record: &StepRecord) -> Result<()>;
}

impl ProgressSink for Vec<StepRecord> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

impl ProgressSink for () {
    fn record(&mut self, _: &StepRecord) -> Result<()> {
        Ok(())
    }
}

/// Wraps a closure as a sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&StepRecord)> ProgressSink for FnSink<F> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        (self.0)(record);
        Ok(())
    }
}

/// Optimisation state: the synthetic set, its momentum buffer and the
/// resolved encoder and objective.
pub struct Distiller<'a> {
    config: DistillConfig,
    dataset: &'a DatasetIndex,
    encoder: EncoderConfig,
    spec: MatchSpec,
    syn: SyntheticSet,
    velocity: Tensor<f32>,
}

impl<'a> Distiller<'a> {
    pub fn new(config: DistillConfig, dataset: &'a DatasetIndex, syn: SyntheticSet) -> Result<Self> {
        config.validate()?;
        if syn.num_classes != dataset.num_classes || syn.images.shape()[1..] != dataset.images.shape()[1..] {
            return Err(Error::shape(
                "distill",
                format!(
                    "synthetic set {:?} ({} classes) vs dataset {:?} ({} classes)",
                    syn.images.shape(),
                    syn.num_classes,
                    dataset.images.shape(),
                    dataset.num_classes
                ),
            ));
        }
        if let Some(k) = dataset.per_class.iter().position(|p| p.is_empty()) {
            return Err(Error::InsufficientSamples { class: k, available: 0, needed: 1 });
        }
        let encoder = config.encoder_config(dataset.channels(), dataset.image_size(), dataset.num_classes);
        encoder.validate()?;
        let spec = config.match_spec(encoder.depth);
        let velocity = Tensor::zeros(syn.images.shape().to_vec());
        Ok(Distiller {
            config,
            dataset,
            encoder,
            spec,
            syn,
            velocity,
        })
    }

    pub fn config(&self) -> &DistillConfig {
        &self.config
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn synthetic(&self) -> &SyntheticSet {
        &self.syn
    }

    pub fn into_synthetic(self) -> SyntheticSet {
        self.syn
    }

    /// The encoder drawn for `iteration`.
    pub fn encoder_for(&self, iteration: usize) -> Result<EncoderParams<f32>> {
        sample_params(&self.encoder, derive_seed(self.config.seed, Stream::Encoder, iteration as u64))
    }

    /// Real-batch indices and augmentation draws for `iteration`, per class.
    pub fn plan(&self, iteration: usize) -> (Vec<Vec<usize>>, Vec<AugmentDraw>) {
        let mut batch_rng = rng::stream(self.config.seed, Stream::RealBatch, iteration as u64);
        let mut aug_rng = rng::stream(self.config.seed, Stream::Augment, iteration as u64);
        let size = self.dataset.image_size();
        let mut batches = Vec::with_capacity(self.dataset.num_classes);
        let mut draws = Vec::with_capacity(self.dataset.num_classes);
        for k in 0..self.dataset.num_classes {
            batches.push(self.dataset.sample_class(k, self.config.real_batch_per_class, &mut batch_rng));
            draws.push(self.config.augment.sample(&mut aug_rng, size, size));
        }
        (batches, draws)
    }

    /// Records the objective of `iteration` against `images` in a fresh graph.
    fn record(&self, iteration: usize, images: &Tensor<f32>) -> Result<Recorded> {
        if let Some(k) = self.non_finite_class() {
            return Err(Error::NonFiniteLoss { iteration, class: Some(k) });
        }
        let params = self.encoder_for(iteration)?;
        let (batches, draws) = self.plan(iteration);
        let p = self.spec.p;

        let real: Vec<SummaryValues<f32>> = batches
            .par_iter()
            .zip(&draws)
            .map(|(idx, draw)| {
                let mut g = Graph::new();
                let x = g.constant(self.dataset.gather(idx)?);
                let x = draw.apply(&mut g, x)?;
                let trace = params.forward(&mut g, x)?;
                Ok(ClassSummary::from_trace(&mut g, &trace, p)?.values(&g))
            })
            .collect::<Result<_>>()?;

        let mut g = Graph::new();
        let leaf = g.param(images.clone());
        let bound = params.bind(&mut g, false);
        let mut real_sums = Vec::with_capacity(real.len());
        let mut syn_sums = Vec::with_capacity(real.len());
        for (k, draw) in draws.iter().enumerate() {
            let slice = g.slice_rows(leaf, k * self.syn.ipc, self.syn.ipc)?;
            let slice = draw.apply(&mut g, slice)?;
            let trace = params.forward_bound(&mut g, &bound, slice)?;
            syn_sums.push(ClassSummary::from_trace(&mut g, &trace, p)?);
            real_sums.push(real[k].constants(&mut g));
        }
        let objective = matching_objective(&mut g, &real_sums, &syn_sums, &self.spec)?;
        if let Some(k) = objective.per_class.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration, class: Some(k) });
        }
        if !objective.breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, class: None });
        }
        Ok(Recorded {
            graph: g,
            leaf,
            objective,
            draws,
        })
    }

    /// The objective `iteration` would see for the current images, without
    /// updating anything.
    pub fn measure(&self, iteration: usize) -> Result<LossBreakdown> {
        Ok(self.record(iteration, &self.syn.images)?.objective.breakdown)
    }

    /// Gradient of the `iteration` objective with respect to the synthetic pixels.
    pub fn image_gradient(&self, iteration: usize) -> Result<(LossBreakdown, Vec<f32>)> {
        let mut r = self.record(iteration, &self.syn.images)?;
        r.graph.backward(r.objective.root)?;
        Ok((r.objective.breakdown, r.graph.grad_or_zeros(r.leaf)))
    }

    /// One optimisation step; the reported losses are those before the update.
    pub fn step(&mut self, iteration: usize) -> Result<StepRecord> {
        let (breakdown, grad, draws) = {
            let mut r = self.record(iteration, &self.syn.images)?;
            r.graph.backward(r.objective.root)?;
            (r.objective.breakdown, r.graph.grad_or_zeros(r.leaf), r.draws)
        };
        self.syn.images.accumulate_grad(&grad)?;
        sgd_momentum_step(
            &mut self.syn.images,
            &mut self.velocity,
            self.config.lr_images as f32,
            self.config.image_momentum as f32,
            self.config.weight_decay_images as f32,
        )?;
        if let Some(k) = self.non_finite_class() {
            return Err(Error::NonFiniteLoss { iteration, class: Some(k) });
        }
        Ok(StepRecord {
            iteration,
            breakdown,
            draws,
        })
    }
}

struct Recorded {
    graph: Graph<f32>,
    leaf: crate::graph::Var,
    objective: crate::losses::Objective,
    draws: Vec<AugmentDraw>,
}

impl Distiller<'_> {
    fn non_finite_class(&self) -> Option<usize> {
        let per_class = self.syn.images.numel() / self.syn.num_classes;
        self.syn
            .images
            .data()
            .chunks(per_class)
            .position(|c| c.iter().any(|v| !v.is_finite()))
    }
}

/// Alias of [`Distiller::step`].
pub fn distill_step(state: &mut Distiller<'_>, iteration: usize) -> Result<StepRecord> {
    state.step(iteration)
}

/// Initialises the synthetic set from `config.init` and runs
/// `config.iterations` steps, reporting each to `sink`.
pub fn run_distillation(
    config: &DistillConfig,
    dataset: &DatasetIndex,
    sink: &mut dyn ProgressSink,
) -> Result<SyntheticSet> {
    let init = init_synthetic(dataset, config.ipc, config.init, config.seed)?;
    run_from(config, dataset, init, sink)
}

/// Like [`run_distillation`] but starting from a given synthetic set.
pub fn run_from(
    config: &DistillConfig,
    dataset: &DatasetIndex,
    init: SyntheticSet,
    sink: &mut dyn ProgressSink,
) -> Result<SyntheticSet> {
    let mut state = Distiller::new(config.clone(), dataset, init)?;
    for i in 0..config.iterations {
        let rec = state.step(i)?;
        sink.record(&rec)?;
    }
    Ok(state.into_synthetic())
}
