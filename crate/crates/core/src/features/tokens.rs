use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::KMeansModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Cluster ids with consecutive repeats collapsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    /// Collapses runs in `raw`.
    pub fn from_raw(raw: &[u32]) -> Self {
        Self(collapse_runs(raw))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn collapse_runs(raw: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(raw.len());
    for &t in raw {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// Nearest-centroid id per frame, then run collapse.
pub fn tokenize(features: &Matrix, model: &KMeansModel) -> Result<TokenSequence> {
    if features.cols() != model.dim() {
        return Err(Error::param(format!(
            "features have {} dims, k-means model has {}",
            features.cols(),
            model.dim()
        )));
    }
    let raw: Vec<u32> = features
        .row_iter()
        .map(|f| model.assign(f).0 as u32)
        .collect();
    Ok(TokenSequence::from_raw(&raw))
}

/// Set of consecutive token triples.
pub type TrigramSet = BTreeSet<[u32; 3]>;

pub fn trigram_set(tokens: &TokenSequence) -> TrigramSet {
    tokens
        .as_slice()
        .windows(3)
        .map(|w| [w[0], w[1], w[2]])
        .collect()
}

/// `1 - |X ∩ Y| / |X ∪ Y|`; 0 when both sets are empty.
pub fn jaccard_distance(x: &TrigramSet, y: &TrigramSet) -> f64 {
    if x.is_empty() && y.is_empty() {
        return 0.0;
    }
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let inter = small.iter().filter(|t| large.contains(*t)).count();
    let union = x.len() + y.len() - inter;
    1.0 - inter as f64 / union as f64
}
