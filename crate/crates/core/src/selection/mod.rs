//! Budget-constrained clip selection.
//!
//! Every strategy walks clips in some order and stops as soon as the running
//! duration reaches the budget `H`, so a plan's total is at least `H` and
//! dropping its last clip would fall below `H`. Ties are broken by lowest
//! clip id throughout.

mod plan;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use plan::{PlanStep, SelectionMethod, SelectionPlan};

use self::plan::PlanBuilder;
use crate::corpus::{Clip, Corpus};
use crate::error::{Error, Result};
use crate::features::{
    jaccard_distance, kmeans_fit, Backbone, KMeansConfig, KMeansModel, TextEmbedder, TrigramSet,
};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, SplitMix64};

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::derive(seed, "select-shuffle").shuffle(&mut order);
    order
}

/// Takes clips in `order` until the budget is met.
pub fn take_in_order(
    corpus: &Corpus,
    order: impl IntoIterator<Item = (usize, Option<f64>)>,
    budget_s: f64,
    method: SelectionMethod,
    seed: u64,
) -> Result<SelectionPlan> {
    let mut builder = PlanBuilder::new(method, budget_s, seed)?;
    for (i, value) in order {
        if builder.push(&corpus.clips()[i], value) {
            break;
        }
    }
    Ok(builder.finish())
}

/// Uniform seeded shuffle, taken in order.
pub fn select_random(corpus: &Corpus, budget_s: f64, seed: u64) -> Result<SelectionPlan> {
    let order = shuffled_indices(corpus.len(), seed);
    take_in_order(
        corpus,
        order.into_iter().map(|i| (i, None)),
        budget_s,
        SelectionMethod::Random,
        seed,
    )
}

/// Per-clip stand-in for the surrogate's pre-training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub score: f64,
}

/// Mean squared distance from each frame to its nearest centroid.
pub fn quantization_error(features: &Matrix, kmeans: &KMeansModel) -> Result<f64> {
    if features.cols() != kmeans.dim() {
        return Err(Error::param(format!(
            "features have {} dims, k-means model has {}",
            features.cols(),
            kmeans.dim()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::input("no frames to score"));
    }
    let total: f64 = features.row_iter().map(|f| kmeans.assign(f).1).sum();
    Ok(total / features.rows() as f64)
}

pub fn pretraining_loss_score(
    clip: &Clip,
    backbone: &Backbone,
    kmeans: &KMeansModel,
) -> Result<ClipScore> {
    let features = backbone.features(&clip.samples_f64())?;
    let score = quantization_error(&features, kmeans)?;
    if !score.is_finite() {
        return Err(Error::Numeric(format!("non-finite score for {}", clip.id)));
    }
    Ok(ClipScore {
        clip_id: clip.id.clone(),
        score,
    })
}

/// Highest score first (ties by lowest id) until the budget is met.
pub fn select_by_loss(
    corpus: &Corpus,
    scores: &[ClipScore],
    budget_s: f64,
    seed: u64,
) -> Result<SelectionPlan> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.clip_id.as_str(), s.score)).collect();
    let missing: Vec<&str> = corpus
        .clips()
        .iter()
        .map(|c| c.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::param(format!("no score for clips {missing:?}")));
    }
    let mut order: Vec<(usize, f64)> = corpus
        .clips()
        .iter()
        .enumerate()
        .map(|(i, c)| (i, by_id[c.id.as_str()]))
        .collect();
    let clips = corpus.clips();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| clips[a.0].id.cmp(&clips[b.0].id)));
    take_in_order(
        corpus,
        order.into_iter().map(|(i, s)| (i, Some(s))),
        budget_s,
        SelectionMethod::Loss,
        seed,
    )
}

/// Index of the seeded uniformly chosen first clip in farthest point sampling.
pub fn fps_first_index(n: usize, seed: u64) -> usize {
    SplitMix64::derive(seed, "fps-first").below(n)
}

/// Farthest point sampling from clip `first` under an arbitrary distance.
///
/// Each round picks the unsampled clip whose distance to its nearest sampled
/// clip is largest.
pub fn farthest_point_plan(
    corpus: &Corpus,
    first: usize,
    distance: impl Fn(usize, usize) -> f64,
    budget_s: f64,
    method: SelectionMethod,
    seed: u64,
) -> Result<SelectionPlan> {
    let clips = corpus.clips();
    let n = clips.len();
    let mut builder = PlanBuilder::new(method, budget_s, seed)?;
    if n == 0 {
        return Ok(builder.finish());
    }
    if first >= n {
        return Err(Error::param(format!("first index {first} outside corpus of {n}")));
    }
    let mut sampled = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut pick = first;
    let mut value = None;
    loop {
        sampled[pick] = true;
        if builder.push(&clips[pick], value) {
            break;
        }
        for i in 0..n {
            if !sampled[i] {
                min_dist[i] = min_dist[i].min(distance(pick, i));
            }
        }
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !sampled[i]) {
            best = match best {
                None => Some(i),
                Some(b) if min_dist[i] > min_dist[b]
                    || (min_dist[i] == min_dist[b] && clips[i].id < clips[b].id) =>
                {
                    Some(i)
                }
                keep => keep,
            };
        }
        match best {
            Some(b) => {
                pick = b;
                value = Some(min_dist[b]);
            }
            None => break,
        }
    }
    Ok(builder.finish())
}

/// Content-based selection: FPS under token-trigram Jaccard distance.
pub fn select_fps_content(
    corpus: &Corpus,
    trigram_sets: &HashMap<String, TrigramSet>,
    budget_s: f64,
    seed: u64,
) -> Result<SelectionPlan> {
    let sets: Vec<&TrigramSet> = corpus
        .clips()
        .iter()
        .map(|c| {
            trigram_sets
                .get(&c.id)
                .ok_or_else(|| Error::param(format!("no trigram set for clip {}", c.id)))
        })
        .collect::<Result<_>>()?;
    let first = if sets.is_empty() {
        0
    } else {
        fps_first_index(sets.len(), seed)
    };
    farthest_point_plan(
        corpus,
        first,
        |a, b| jaccard_distance(sets[a], sets[b]),
        budget_s,
        SelectionMethod::Content,
        seed,
    )
}

/// Order of clips inside one transcription cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithinClusterOrder {
    #[default]
    Shuffled,
    NearestToCentroid,
}

/// Embeds every clip's transcription; errors list clips without one.
pub fn embed_transcriptions(
    corpus: &Corpus,
    embedder: &dyn TextEmbedder,
) -> Result<HashMap<String, Vec<f64>>> {
    let missing: Vec<&str> = corpus
        .clips()
        .iter()
        .filter(|c| c.transcription.is_none())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::param(format!("clips without transcription: {missing:?}")));
    }
    Ok(corpus
        .clips()
        .iter()
        .map(|c| {
            let text = c.transcription.as_deref().unwrap_or_default();
            (c.id.clone(), embedder.embed(text).vector)
        })
        .collect())
}

/// Transcription-based selection: k-means over embeddings, then round-robin
/// across clusters in ascending id.
///
/// With `Shuffled` order the clips are visited in the same shuffled order as
/// [`select_random`], so `k = 1` reproduces the random plan. `k` is capped at
/// the corpus size.
pub fn select_by_transcription(
    corpus: &Corpus,
    embeddings: &HashMap<String, Vec<f64>>,
    k: usize,
    budget_s: f64,
    seed: u64,
    within: WithinClusterOrder,
) -> Result<SelectionPlan> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let clips = corpus.clips();
    let missing: Vec<&str> = clips
        .iter()
        .filter(|c| !embeddings.contains_key(&c.id))
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::param(format!("clips without embedding: {missing:?}")));
    }
    if clips.is_empty() {
        return Ok(PlanBuilder::new(SelectionMethod::Transcription, budget_s, seed)?.finish());
    }
    let rows: Vec<&Vec<f64>> = clips.iter().map(|c| &embeddings[&c.id]).collect();
    let points = Matrix::from_rows(&rows)?;
    let model = kmeans_fit(
        &points,
        KMeansConfig::new(k.min(clips.len()), derive_seed(seed, "transcription-kmeans")),
    )?;
    let assignments: Vec<(usize, f64)> = points.row_iter().map(|p| model.assign(p)).collect();

    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in shuffled_indices(clips.len(), seed) {
        buckets.entry(assignments[i].0).or_default().push(i);
    }
    if within == WithinClusterOrder::NearestToCentroid {
        for members in buckets.values_mut() {
            members.sort_by(|&a, &b| {
                assignments[a]
                    .1
                    .total_cmp(&assignments[b].1)
                    .then_with(|| clips[a].id.cmp(&clips[b].id))
            });
        }
    }
    let mut order = Vec::with_capacity(clips.len());
    let mut depth = 0;
    while order.len() < clips.len() {
        for (&cluster, members) in &buckets {
            if let Some(&i) = members.get(depth) {
                order.push((i, Some(cluster as f64)));
            }
        }
        depth += 1;
    }
    take_in_order(corpus, order, budget_s, SelectionMethod::Transcription, seed)
}

/// Round-robin over speakers in seeded order, each speaker's shortest unused
/// clip first, so the plan covers as many speakers as the budget allows.
pub fn select_most_speakers(corpus: &Corpus, budget_s: f64, seed: u64) -> Result<SelectionPlan> {
    let clips = corpus.clips();
    let missing: Vec<&str> = clips
        .iter()
        .filter(|c| c.speaker_id.is_none())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::param(format!("clips without speaker_id: {missing:?}")));
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        by_speaker
            .entry(c.speaker_id.as_deref().unwrap_or_default())
            .or_default()
            .push(i);
    }
    for members in by_speaker.values_mut() {
        members.sort_by(|&a, &b| {
            clips[a]
                .duration_s()
                .total_cmp(&clips[b].duration_s())
                .then_with(|| clips[a].id.cmp(&clips[b].id))
        });
    }
    let mut speakers: Vec<&Vec<usize>> = by_speaker.values().collect();
    SplitMix64::derive(seed, "speaker-order").shuffle(&mut speakers);

    let mut order = Vec::with_capacity(clips.len());
    let mut depth = 0;
    while order.len() < clips.len() {
        for (rank, members) in speakers.iter().enumerate() {
            if let Some(&i) = members.get(depth) {
                order.push((i, Some(rank as f64)));
            }
        }
        depth += 1;
    }
    take_in_order(corpus, order, budget_s, SelectionMethod::MostSpeakers, seed)
}
