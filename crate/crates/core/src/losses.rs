//! Attention matching and mean matching between real and synthetic batches.
//!
//! For every class and every block except the last, a batch is summarised by
//! the mean of its per-sample, unit-normalised spatial attention vectors;
//! real and synthetic summaries are compared by mean squared error. The last
//! block is summarised by the mean of its flattened feature vectors, which is
//! the linear-kernel maximum mean discrepancy. The objective is
//! `sam + lambda * mmd`, summed over classes.

use serde::{Deserialize, Serialize};

use crate::encoder::ForwardTrace;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Guard added to attention-vector norms.
pub const ATTENTION_EPS: f64 = 1e-8;
pub const DEFAULT_POWER: f64 = 4.0;
pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_LAMBDA_HIGH_RES: f64 = 0.02;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sam: f64,
    pub l_mmd: f64,
    pub total: f64,
    /// SAM contribution of each selected layer, summed over classes.
    pub per_layer: Vec<f64>,
}

/// Combines the two terms with task balance `lambda`.
pub fn total_loss(sam: f64, mmd: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        l_sam: sam,
        l_mmd: mmd,
        total: sam + lambda * mmd,
        per_layer: Vec::new(),
    }
}

/// `[B,C,H,W] -> [B,H,W]`: channel sum of `|f|^p`.
pub fn attention_pool<T: Real>(g: &mut Graph<T>, feature: Var, p: f64) -> Result<Var> {
    if p < 1.0 {
        return Err(Error::Config(format!("attention power must be >= 1, got {p}")));
    }
    g.attention_pool(feature, T::of(p))
}

/// Batch mean of the unit-normalised, vectorised attention maps of `feature`.
pub fn attention_summary<T: Real>(g: &mut Graph<T>, feature: Var, p: f64) -> Result<Var> {
    let a = attention_pool(g, feature, p)?;
    let z = g.flatten(a);
    let z = g.normalize_rows(z, T::of(ATTENTION_EPS))?;
    g.mean_rows(z)
}

/// Batch mean of the flattened feature vectors.
pub fn feature_mean<T: Real>(g: &mut Graph<T>, feature: Var) -> Result<Var> {
    let f = g.flatten(feature);
    g.mean_rows(f)
}

/// What the matching objective needs from one batch of one class.
#[derive(Clone, Debug)]
pub struct ClassSummary {
    /// One attention summary per block `1..L-1`, in order.
    pub attention: Vec<Var>,
    pub mean_feature: Var,
}

impl ClassSummary {
    pub fn from_trace<T: Real>(g: &mut Graph<T>, trace: &ForwardTrace, p: f64) -> Result<Self> {
        let depth = trace.features.len();
        let attention = trace.features[..depth - 1]
            .iter()
            .map(|&f| attention_summary(g, f, p))
            .collect::<Result<_>>()?;
        let mean_feature = feature_mean(g, trace.last_feature())?;
        Ok(ClassSummary {
            attention,
            mean_feature,
        })
    }

    /// Copies the summary values out of `g`.
    pub fn values<T: Real>(&self, g: &Graph<T>) -> SummaryValues<T> {
        SummaryValues {
            attention: self.attention.iter().map(|&v| g.value(v).clone()).collect(),
            mean_feature: g.value(self.mean_feature).clone(),
        }
    }
}

/// Detached summary values, e.g. of a real batch computed in a scratch graph.
#[derive(Clone, Debug)]
pub struct SummaryValues<T> {
    pub attention: Vec<Tensor<T>>,
    pub mean_feature: Tensor<T>,
}

impl<T: Real> SummaryValues<T> {
    /// Records the values as constants in `g`.
    pub fn constants(&self, g: &mut Graph<T>) -> ClassSummary {
        ClassSummary {
            attention: self.attention.iter().map(|t| g.constant(t.clone())).collect(),
            mean_feature: g.constant(self.mean_feature.clone()),
        }
    }
}

/// Which parts of the objective are active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub p: f64,
    pub lambda: f64,
    /// 1-based block indices taking part in attention matching.
    pub layers: Vec<usize>,
    pub use_sam: bool,
    pub use_mmd: bool,
}

impl MatchSpec {
    /// Every block except the last, both terms on.
    pub fn full(depth: usize) -> Self {
        MatchSpec {
            p: DEFAULT_POWER,
            lambda: DEFAULT_LAMBDA,
            layers: (1..depth).collect(),
            use_sam: true,
            use_mmd: true,
        }
    }
}

/// The recorded objective plus its scalar parts.
#[derive(Clone, Debug)]
pub struct Objective {
    pub root: Var,
    pub breakdown: LossBreakdown,
    /// Total contribution of each class, for diagnostics.
    pub per_class: Vec<f64>,
}

fn add_opt<T: Real>(g: &mut Graph<T>, acc: Option<Var>, term: Var) -> Result<Var> {
    match acc {
        Some(a) => g.add(a, term),
        None => Ok(term),
    }
}

fn scalar_of<T: Real>(g: &Graph<T>, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.value(v).item().as_f64())
}

/// Attention-matching term of one layer for one class.
pub fn sam_layer_term<T: Real>(g: &mut Graph<T>, real: Var, syn: Var) -> Result<Var> {
    g.mse(real, syn)
}

/// Mean-matching term for one class.
pub fn mmd_class_term<T: Real>(g: &mut Graph<T>, real: Var, syn: Var) -> Result<Var> {
    g.mse(real, syn)
}

/// Baseline without attention pooling or normalisation: MSE between the
/// batch-mean raw feature maps of one layer.
pub fn feature_map_term<T: Real>(g: &mut Graph<T>, real_feature: Var, syn_feature: Var) -> Result<Var> {
    let r = feature_mean(g, real_feature)?;
    let s = feature_mean(g, syn_feature)?;
    g.mse(r, s)
}

/// `sum_k [ sum_l SAM_kl + lambda * MMD_k ]` over paired class summaries.
pub fn matching_objective<T: Real>(
    g: &mut Graph<T>,
    real: &[ClassSummary],
    syn: &[ClassSummary],
    spec: &MatchSpec,
) -> Result<Objective> {
    if real.len() != syn.len() {
        return Err(Error::shape(
            "matching_objective",
            format!("{} real vs {} synthetic classes", real.len(), syn.len()),
        ));
    }
    let depth = real.first().map_or(1, |s| s.attention.len() + 1);
    if let Some(&bad) = spec.layers.iter().find(|&&l| l == 0 || l >= depth) {
        return Err(Error::Config(format!(
            "attention layer {bad} outside 1..{} (the last block is never matched)",
            depth - 1
        )));
    }
    let mut layers = spec.layers.clone();
    layers.sort_unstable();
    layers.dedup();

    let mut sam: Option<Var> = None;
    let mut mmd: Option<Var> = None;
    let mut per_layer = vec![0.0; layers.len()];
    let mut per_class = Vec::with_capacity(real.len());
    for (r, s) in real.iter().zip(syn) {
        let mut class_total = 0.0;
        if spec.use_sam {
            for (slot, &l) in layers.iter().enumerate() {
                let term = sam_layer_term(g, r.attention[l - 1], s.attention[l - 1])?;
                let v = g.value(term).item().as_f64();
                per_layer[slot] += v;
                class_total += v;
                sam = Some(add_opt(g, sam, term)?);
            }
        }
        if spec.use_mmd {
            let term = mmd_class_term(g, r.mean_feature, s.mean_feature)?;
            class_total += spec.lambda * g.value(term).item().as_f64();
            mmd = Some(add_opt(g, mmd, term)?);
        }
        per_class.push(class_total);
    }

    let weighted_mmd = mmd.map(|m| g.scale(m, T::of(spec.lambda)));
    let root = match (sam, weighted_mmd) {
        (Some(a), Some(b)) => g.add(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => g.constant(Tensor::scalar(T::zero())),
    };
    let mut breakdown = total_loss(scalar_of(g, sam), scalar_of(g, mmd), spec.lambda);
    breakdown.per_layer = if spec.use_sam { per_layer } else { Vec::new() };
    Ok(Objective {
        root,
        breakdown,
        per_class,
    })
}

/// Attention-matching loss over per-class traces of real and synthetic batches.
pub fn sam_loss<T: Real>(
    g: &mut Graph<T>,
    real: &[ForwardTrace],
    syn: &[ForwardTrace],
    p: f64,
    layers: &[usize],
) -> Result<Objective> {
    let (r, s) = summarise_pairs(g, real, syn, p)?;
    let spec = MatchSpec {
        p,
        lambda: 0.0,
        layers: layers.to_vec(),
        use_sam: true,
        use_mmd: false,
    };
    matching_objective(g, &r, &s, &spec)
}

/// Linear-kernel MMD over per-class traces of real and synthetic batches.
pub fn mmd_loss<T: Real>(g: &mut Graph<T>, real: &[ForwardTrace], syn: &[ForwardTrace]) -> Result<Objective> {
    let (r, s) = summarise_pairs(g, real, syn, DEFAULT_POWER)?;
    let spec = MatchSpec {
        p: DEFAULT_POWER,
        lambda: 1.0,
        layers: Vec::new(),
        use_sam: false,
        use_mmd: true,
    };
    matching_objective(g, &r, &s, &spec)
}

fn summarise_pairs<T: Real>(
    g: &mut Graph<T>,
    real: &[ForwardTrace],
    syn: &[ForwardTrace],
    p: f64,
) -> Result<(Vec<ClassSummary>, Vec<ClassSummary>)> {
    let r = real.iter().map(|t| ClassSummary::from_trace(g, t, p)).collect::<Result<_>>()?;
    let s = syn.iter().map(|t| ClassSummary::from_trace(g, t, p)).collect::<Result<_>>()?;
    Ok((r, s))
}
