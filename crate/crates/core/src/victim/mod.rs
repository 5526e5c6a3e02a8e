//! The synthetic victim: a seeded tanh network with neighbor mixing that
//! returns per-layer frame representations, plus its budget ledger, wire
//! protocol, HTTP service and the attacker's caching client.

mod client;
mod ledger;
pub mod protocol;
mod service;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use client::{RepresentationCache, RetryPolicy, VictimClient};
pub use ledger::{ChargeOutcome, LedgerEntry, QueryLedger};
pub use service::{serve_until_signal, write_ledger_log, ServiceConfig, VictimService};

use crate::error::{Error, Result};
use crate::framing::Framing;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Layers the extraction targets by default: 4, 8 and 12 of a 12-layer model.
pub const DEFAULT_TARGET_LAYERS: [usize; 3] = [4, 8, 12];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub seed: u64,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            num_layers: 12,
            dim: 64,
            frame_len: 400,
            hop: 320,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    weight: Matrix,
    bias: Vec<f64>,
}

/// Deterministic stand-in for a 12-layer speech encoder.
///
/// `h0_t = tanh(P · frame_t)` and, for `n >= 1`,
/// `hn_t = tanh(Wn · (0.5 h_t + 0.25 h_{t-1} + 0.25 h_{t+1}) + bn)` over the
/// previous layer with edge frames clamped.
#[derive(Debug, Clone)]
pub struct VictimModel {
    config: VictimConfig,
    input_proj: Matrix,
    layers: Vec<Layer>,
}

impl VictimModel {
    pub fn new(config: VictimConfig) -> Result<Self> {
        if config.num_layers == 0 || config.dim == 0 || config.frame_len == 0 || config.hop == 0 {
            return Err(Error::param(format!("degenerate victim config {config:?}")));
        }
        let mut rng = SplitMix64::derive(config.seed, "victim");
        let d = config.dim;
        let proj_scale = 1.0 / (config.frame_len as f64).sqrt();
        let input_proj = Matrix::from_fn(d, config.frame_len, |_, _| {
            rng.uniform(-1.0, 1.0) * proj_scale
        });
        let scale = 1.0 / (d as f64).sqrt();
        let layers = (0..config.num_layers)
            .map(|_| {
                let weight = Matrix::from_fn(d, d, |_, _| rng.uniform(-1.0, 1.0) * scale);
                let bias = (0..d).map(|_| rng.uniform(-1.0, 1.0) * scale).collect();
                Layer { weight, bias }
            })
            .collect();
        Ok(Self {
            config,
            input_proj,
            layers,
        })
    }

    pub fn config(&self) -> &VictimConfig {
        &self.config
    }

    pub fn framing(&self) -> Framing {
        Framing {
            frame_len: self.config.frame_len,
            hop: self.config.hop,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Representations of the requested layers (1-based) for `samples`.
    pub fn forward(&self, samples: &[f64], layers: &BTreeSet<usize>) -> Result<LayerRepresentations> {
        if let Some(&bad) = layers
            .iter()
            .find(|&&n| n == 0 || n > self.config.num_layers)
        {
            return Err(Error::param(format!(
                "layer {bad} outside 1..={}",
                self.config.num_layers
            )));
        }
        let frames = self.framing().frames(samples)?;
        let t = frames.len();
        let d = self.config.dim;

        let mut current = Matrix::zeros(t, d);
        for (i, frame) in frames.enumerate() {
            let row = current.row_mut(i);
            self.input_proj.matvec_into(frame, row);
            row.iter_mut().for_each(|v| *v = v.tanh());
        }

        let deepest = layers.iter().next_back().copied().unwrap_or(0);
        let mut out = BTreeMap::new();
        let mut mixed = vec![0.0; d];
        for n in 1..=deepest {
            let layer = &self.layers[n - 1];
            let mut next = Matrix::zeros(t, d);
            for i in 0..t {
                let prev = current.row(i.saturating_sub(1));
                let here = current.row(i);
                let after = current.row((i + 1).min(t - 1));
                for k in 0..d {
                    mixed[k] = 0.5 * here[k] + 0.25 * prev[k] + 0.25 * after[k];
                }
                let row = next.row_mut(i);
                layer.weight.matvec_into(&mixed, row);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v = (*v + b).tanh();
                }
            }
            if layers.contains(&n) {
                out.insert(n, next.clone());
            }
            current = next;
        }
        Ok(LayerRepresentations { layers: out })
    }
}

/// Map from 1-based layer index to a `T × D` matrix of frame vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRepresentations {
    layers: BTreeMap<usize, Matrix>,
}

impl LayerRepresentations {
    /// Validates that all layers share one shape.
    pub fn new(layers: BTreeMap<usize, Matrix>) -> Result<Self> {
        let mut shapes = layers.values().map(Matrix::shape);
        if let Some(first) = shapes.next() {
            if shapes.any(|s| s != first) {
                return Err(Error::input("layer matrices differ in shape"));
            }
        }
        Ok(Self { layers })
    }

    pub fn get(&self, layer: usize) -> Option<&Matrix> {
        self.layers.get(&layer)
    }

    pub fn layer_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Matrix)> {
        self.layers.iter().map(|(k, v)| (*k, v))
    }

    pub fn contains_all(&self, layers: &BTreeSet<usize>) -> bool {
        layers.iter().all(|n| self.layers.contains_key(n))
    }

    /// Number of frames (0 if empty).
    pub fn t(&self) -> usize {
        self.layers.values().next().map_or(0, Matrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.layers.values().next().map_or(0, Matrix::cols)
    }

    /// Only the requested layers; errors if one is missing.
    pub fn restrict(&self, layers: &BTreeSet<usize>) -> Result<Self> {
        layers
            .iter()
            .map(|&n| {
                self.layers
                    .get(&n)
                    .cloned()
                    .map(|m| (n, m))
                    .ok_or_else(|| Error::param(format!("layer {n} missing from representations")))
            })
            .collect::<Result<BTreeMap<_, _>>>()
            .map(|layers| Self { layers })
    }
}
