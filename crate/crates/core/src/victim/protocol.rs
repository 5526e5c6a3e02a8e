//! JSON wire types for the representation service.
//!
//! Representation values travel as decimals rounded to 9 significant digits;
//! decoding recovers each value to within 1e-6 absolute (entries lie in (-1, 1)).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::LayerRepresentations;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const REPRESENTATIONS_PATH: &str = "/v1/representations";
pub const BUDGET_PATH: &str = "/v1/budget";
pub const INFO_PATH: &str = "/v1/info";

pub const ERR_CLIP_TOO_LONG: &str = "clip_too_long";
pub const ERR_BUDGET_EXHAUSTED: &str = "budget_exhausted";
pub const ERR_MALFORMED: &str = "malformed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationRequest {
    pub clip_id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationResponse {
    pub clip_id: String,
    pub t: usize,
    pub dim: usize,
    pub layers: BTreeMap<usize, Vec<Vec<f64>>>,
    pub budget_remaining_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ErrorBody {
    pub fn clip_too_long(max_seconds: f64) -> Self {
        Self {
            error: ERR_CLIP_TOO_LONG.into(),
            max_seconds: Some(max_seconds),
            detail: None,
        }
    }

    pub fn budget_exhausted() -> Self {
        Self {
            error: ERR_BUDGET_EXHAUSTED.into(),
            max_seconds: None,
            detail: None,
        }
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self {
            error: ERR_MALFORMED.into(),
            max_seconds: None,
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub limit_s: f64,
    pub spent_s: f64,
    pub request_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub num_layers: usize,
    pub dim: usize,
    pub frame_len: usize,
    pub hop: usize,
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

impl RepresentationResponse {
    pub fn encode(clip_id: &str, reps: &LayerRepresentations, budget_remaining_s: f64) -> Self {
        let layers = reps
            .iter()
            .map(|(n, m)| {
                let rows = m
                    .row_iter()
                    .map(|r| r.iter().copied().map(round_sig9).collect())
                    .collect();
                (n, rows)
            })
            .collect();
        Self {
            clip_id: clip_id.to_owned(),
            t: reps.t(),
            dim: reps.dim(),
            layers,
            budget_remaining_s,
        }
    }

    /// Checks the declared shape and that exactly `expected` layers came back.
    pub fn decode(self, expected: &BTreeSet<usize>) -> Result<LayerRepresentations> {
        let got: BTreeSet<usize> = self.layers.keys().copied().collect();
        if &got != expected {
            return Err(Error::input(format!(
                "response layers {got:?} differ from requested {expected:?}"
            )));
        }
        let mut out = BTreeMap::new();
        for (n, rows) in self.layers {
            let m = Matrix::from_rows(&rows)?;
            if m.shape() != (self.t, self.dim) {
                return Err(Error::input(format!(
                    "layer {n} is {:?}, response declares {}x{}",
                    m.shape(),
                    self.t,
                    self.dim
                )));
            }
            out.insert(n, m);
        }
        LayerRepresentations::new(out)
    }
}
