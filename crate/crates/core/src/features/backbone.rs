use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::framing::Framing;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub dim: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            dim: 48,
            frame_len: 400,
            hop: 320,
            seed: 1,
        }
    }
}

/// Frozen surrogate featurizer: `f_t = tanh(Q · frame_t)` with a seeded
/// `dim × frame_len` projection scaled by `1/sqrt(frame_len)`.
#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    proj: Matrix,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Self {
        let mut rng = SplitMix64::derive(config.seed, "backbone");
        let scale = 1.0 / (config.frame_len as f64).sqrt();
        let proj = Matrix::from_fn(config.dim, config.frame_len, |_, _| {
            rng.uniform(-1.0, 1.0) * scale
        });
        Self { config, proj }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// `T × dim` features, with `T` computed exactly as the victim does.
    pub fn features(&self, samples: &[f64]) -> Result<Matrix> {
        let framing = Framing {
            frame_len: self.config.frame_len,
            hop: self.config.hop,
        };
        let frames = framing.frames(samples)?;
        let mut out = Matrix::zeros(frames.len(), self.config.dim);
        for (i, frame) in frames.enumerate() {
            let row = out.row_mut(i);
            self.proj.matvec_into(frame, row);
            row.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(out)
    }
}

/// The attacker must not reuse the victim's seed.
pub fn seed_warning(backbone_seed: u64, victim_seed: u64) -> Option<String> {
    (backbone_seed == victim_seed).then(|| {
        format!(
            "surrogate backbone seed {backbone_seed} equals the victim seed; \
             the attacker is not supposed to know victim weights"
        )
    })
}
