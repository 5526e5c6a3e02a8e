//! Surrogate prediction heads and the multi-layer extraction objective.

mod checkpoint;
mod loss;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Backbone;
use crate::matrix::{gemm, Matrix, Op};
use crate::rng::SplitMix64;
use crate::victim::LayerRepresentations;

pub use checkpoint::{read_loss_trace, write_loss_trace, Checkpoint};
pub use loss::{
    cosine, layer_loss, loss_and_gradient, loss_gradient, neg_log_sigmoid, timestep_terms,
    total_loss, DEFAULT_EPS_NORM,
};
pub use schedule::{lr_at, warmup_steps};

/// One affine head `ĥ = A·f + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.weight.cols() {
            return Err(Error::param(format!(
                "features have {} columns, head expects {}",
                features.cols(),
                self.weight.cols()
            )));
        }
        let mut out = Matrix::zeros(features.rows(), self.weight.rows());
        for t in 0..features.rows() {
            out.row_mut(t).copy_from_slice(&self.bias);
        }
        gemm(1.0, features, Op::N, &self.weight, Op::T, 1.0, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateHeads {
    victim_dim: usize,
    feature_dim: usize,
    heads: BTreeMap<usize, Head>,
}

impl SurrogateHeads {
    /// Weights uniform in `±1/sqrt(feature_dim)`, zero biases.
    pub fn new(layers: &BTreeSet<usize>, victim_dim: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if layers.is_empty() || victim_dim == 0 || feature_dim == 0 {
            return Err(Error::param("heads need at least one layer and non-zero dims"));
        }
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let heads = layers
            .iter()
            .map(|&n| {
                let mut rng = SplitMix64::derive(seed, &format!("head-{n}"));
                let weight = Matrix::from_fn(victim_dim, feature_dim, |_, _| rng.uniform(-scale, scale));
                (n, Head { weight, bias: vec![0.0; victim_dim] })
            })
            .collect();
        Ok(Self {
            victim_dim,
            feature_dim,
            heads,
        })
    }

    pub fn from_heads(heads: BTreeMap<usize, Head>) -> Result<Self> {
        let first = heads.values().next().ok_or_else(|| Error::param("no heads"))?;
        let (victim_dim, feature_dim) = first.weight.shape();
        for (n, h) in &heads {
            if h.weight.shape() != (victim_dim, feature_dim) || h.bias.len() != victim_dim {
                return Err(Error::param(format!("head {n} has inconsistent shape")));
            }
            if !h.weight.is_finite() || !h.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("head {n} has non-finite parameters")));
            }
        }
        Ok(Self {
            victim_dim,
            feature_dim,
            heads,
        })
    }

    pub fn target_layers(&self) -> BTreeSet<usize> {
        self.heads.keys().copied().collect()
    }

    pub fn victim_dim(&self) -> usize {
        self.victim_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn head(&self, layer: usize) -> Option<&Head> {
        self.heads.get(&layer)
    }

    pub fn heads(&self) -> impl Iterator<Item = (usize, &Head)> {
        self.heads.iter().map(|(&n, h)| (n, h))
    }

    pub fn is_finite(&self) -> bool {
        self.heads
            .values()
            .all(|h| h.weight.is_finite() && h.bias.iter().all(|v| v.is_finite()))
    }

    pub fn predict(&self, features: &Matrix) -> Result<LayerRepresentations> {
        let layers = self
            .heads
            .iter()
            .map(|(&n, h)| Ok((n, h.apply(features)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        LayerRepresentations::new(layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub budget_hours: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub eps_norm: f64,
    /// Compute per-clip gradients on the rayon pool; results are identical.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            budget_hours: 0.0,
            steps: 200,
            batch_size: 24,
            peak_lr: 0.0002,
            warmup_fraction: 0.07,
            seed: 0,
            eps_norm: DEFAULT_EPS_NORM,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub const MIN_STEPS: usize = 200;
    pub const STEPS_PER_HOUR: f64 = 10_000.0;

    pub fn for_budget(budget_s: f64, seed: u64) -> Self {
        let budget_hours = budget_s / 3600.0;
        Self {
            budget_hours,
            steps: default_steps(budget_hours),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::param(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(Error::param(format!("bad peak_lr {}", self.peak_lr)));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::param("eps_norm must be positive"));
        }
        Ok(())
    }
}

/// `max(200, ceil(10000·H))` with `H` in hours.
pub fn default_steps(budget_hours: f64) -> usize {
    let raw = (TrainConfig::STEPS_PER_HOUR * budget_hours - 1e-9).ceil();
    (raw.max(0.0) as usize).max(TrainConfig::MIN_STEPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub clip_id: String,
    pub features: Matrix,
    pub targets: LayerRepresentations,
}

impl TrainingPair {
    pub fn new(clip_id: impl Into<String>, features: Matrix, targets: LayerRepresentations) -> Result<Self> {
        let clip_id = clip_id.into();
        if features.rows() != targets.t() {
            return Err(Error::param(format!(
                "clip {clip_id:?}: {} feature frames but {} victim frames",
                features.rows(),
                targets.t()
            )));
        }
        Ok(Self {
            clip_id,
            features,
            targets,
        })
    }

    pub fn from_samples(
        clip_id: impl Into<String>,
        samples: &[f64],
        backbone: &Backbone,
        targets: LayerRepresentations,
    ) -> Result<Self> {
        Self::new(clip_id, backbone.features(samples)?, targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub batch_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub heads: SurrogateHeads,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.batch_loss)
    }
}

struct ClipGrad {
    loss: f64,
    weights: BTreeMap<usize, (Matrix, Vec<f64>)>,
}

fn clip_gradient(heads: &SurrogateHeads, pair: &TrainingPair, eps_norm: f64) -> Result<ClipGrad> {
    let mut loss = 0.0;
    let mut weights = BTreeMap::new();
    let f = &pair.features;
    for (&n, head) in &heads.heads {
        let h = pair
            .targets
            .get(n)
            .ok_or_else(|| Error::param(format!("clip {:?} lacks layer {n}", pair.clip_id)))?;
        let hhat = head.apply(f)?;
        if !hhat.is_finite() {
            return Err(Error::Numeric(format!(
                "layer {n} head output is non-finite for clip {:?}",
                pair.clip_id
            )));
        }
        let (l, g) = loss_and_gradient(h, &hhat, eps_norm)?;
        loss += l;
        let (dv, ds) = head.weight.shape();
        let mut ga = Matrix::zeros(dv, ds);
        gemm(1.0, &g, Op::T, f, Op::N, 0.0, &mut ga);
        let mut gc = vec![0.0; dv];
        for gt in g.row_iter() {
            gc.iter_mut().zip(gt).for_each(|(c, v)| *c += v);
        }
        weights.insert(n, (ga, gc));
    }
    Ok(ClipGrad { loss, weights })
}

/// Plain SGD on the head parameters with the warmup/decay schedule.
///
/// Step `s` (0-based) draws `batch_size` pairs with replacement, records the
/// mean batch loss before updating, and applies learning rate `lr_at(s)`.
pub fn train(heads: SurrogateHeads, pairs: &[TrainingPair], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::param("training needs at least one pair"));
    }
    let layers = heads.target_layers();
    for p in pairs {
        if !p.targets.contains_all(&layers) {
            return Err(Error::param(format!("clip {:?} lacks a target layer", p.clip_id)));
        }
        if p.features.cols() != heads.feature_dim || p.targets.dim() != heads.victim_dim {
            return Err(Error::param(format!("clip {:?} has mismatched dims", p.clip_id)));
        }
    }
    let mut heads = heads;
    let mut rng = SplitMix64::derive(config.seed, "batches");
    let mut trace = Vec::with_capacity(config.steps);
    let scale = 1.0 / config.batch_size as f64;
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.below(pairs.len()))
            .collect();
        let grads: Vec<Result<ClipGrad>> = if config.parallel {
            batch
                .par_iter()
                .map(|&i| clip_gradient(&heads, &pairs[i], config.eps_norm))
                .collect()
        } else {
            batch
                .iter()
                .map(|&i| clip_gradient(&heads, &pairs[i], config.eps_norm))
                .collect()
        };
        let batch_ids = || {
            batch
                .iter()
                .map(|&i| pairs[i].clip_id.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let grads = grads
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}; batch clips: {}", batch_ids())),
                other => other,
            })?;
        let batch_loss = grads.iter().map(|g| g.loss).sum::<f64>() * scale;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step}; batch clips: {}",
                batch_ids()
            )));
        }
        let lr = lr_at(step, config)?;
        trace.push(TraceRow { step, lr, batch_loss });
        if step % 100 == 0 {
            debug!("step {step}: lr {lr:.3e}, batch loss {batch_loss:.6}");
        }
        if lr == 0.0 {
            continue;
        }
        let rate = lr * scale;
        for (n, head) in heads.heads.iter_mut() {
            for g in &grads {
                let (ga, gc) = &g.weights[n];
                head.weight
                    .as_mut_slice()
                    .iter_mut()
                    .zip(ga.as_slice())
                    .for_each(|(w, d)| *w -= rate * d);
                head.bias.iter_mut().zip(gc).for_each(|(b, d)| *b -= rate * d);
            }
        }
    }
    Ok(TrainOutcome { heads, trace })
}

/// Mean over clips of [`total_loss`] for the heads' target layers.
pub fn mean_loss(heads: &SurrogateHeads, pairs: &[TrainingPair], eps_norm: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::param("no pairs to score"));
    }
    let layers = heads.target_layers();
    let losses = pairs
        .par_iter()
        .map(|p| total_loss(&p.targets, &heads.predict(&p.features)?, &layers, eps_norm))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}
