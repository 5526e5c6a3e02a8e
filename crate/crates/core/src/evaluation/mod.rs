//! Nearest-centroid probes, victim/surrogate agreement and report tables.

mod table;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Clip, Corpus};
use crate::error::{Error, Result};
use crate::extraction::{cosine, mean_loss, SurrogateHeads, TrainingPair, DEFAULT_EPS_NORM};
use crate::features::Backbone;
use crate::matrix::{squared_distance, Matrix};
use crate::victim::{LayerRepresentations, VictimModel};

pub use table::{render_table, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeClassifier {
    pub layer: usize,
    pub classes: Vec<u32>,
    pub centroids: Matrix,
    pub counts: Vec<usize>,
}

/// Mean over time of one layer.
pub fn pool(reps: &LayerRepresentations, layer: usize) -> Result<Vec<f64>> {
    reps.get(layer)
        .map(Matrix::mean_row)
        .ok_or_else(|| Error::param(format!("layer {layer} not in representations")))
}

/// Class centroids of time-pooled `layer` representations.
pub fn fit_probe(reps: &[&LayerRepresentations], labels: &[u32], layer: usize) -> Result<ProbeClassifier> {
    if reps.len() != labels.len() {
        return Err(Error::param(format!("{} representations but {} labels", reps.len(), labels.len())));
    }
    if reps.is_empty() {
        return Err(Error::param("probe needs at least one training clip"));
    }
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, &label) in reps.iter().zip(labels) {
        let v = pool(r, layer)?;
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; v.len()], 0));
        if entry.0.len() != v.len() {
            return Err(Error::param("representations differ in dimension"));
        }
        entry.0.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        entry.1 += 1;
    }
    let dim = sums.values().next().map_or(0, |(v, _)| v.len());
    let mut rows = Vec::with_capacity(sums.len());
    let (mut classes, mut counts) = (Vec::new(), Vec::new());
    for (class, (sum, n)) in sums {
        rows.push(sum.into_iter().map(|s| s / n as f64).collect::<Vec<_>>());
        classes.push(class);
        counts.push(n);
    }
    let centroids = if rows.is_empty() { Matrix::zeros(0, dim) } else { Matrix::from_rows(&rows)? };
    Ok(ProbeClassifier {
        layer,
        classes,
        centroids,
        counts,
    })
}

impl ProbeClassifier {
    pub fn predict_pooled(&self, pooled: &[f64]) -> Result<u32> {
        if pooled.len() != self.centroids.cols() {
            return Err(Error::param("pooled vector has the wrong dimension"));
        }
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.row_iter().enumerate() {
            let d = squared_distance(pooled, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(self.classes[best.0])
    }

    /// Nearest centroid; ties go to the lowest class id.
    pub fn predict(&self, reps: &LayerRepresentations) -> Result<u32> {
        self.predict_pooled(&pool(reps, self.layer)?)
    }

    pub fn has_class(&self, class: u32) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

/// Fraction of positions where the two prediction lists coincide.
pub fn agreement(victim_preds: &[u32], surrogate_preds: &[u32]) -> Result<f64> {
    if victim_preds.len() != surrogate_preds.len() {
        return Err(Error::param(format!(
            "{} victim predictions but {} surrogate predictions",
            victim_preds.len(),
            surrogate_preds.len()
        )));
    }
    if victim_preds.is_empty() {
        return Err(Error::param("no predictions to compare"));
    }
    let same = victim_preds.iter().zip(surrogate_preds).filter(|(a, b)| a == b).count();
    Ok(same as f64 / victim_preds.len() as f64)
}

pub fn accuracy(preds: &[u32], labels: &[u32]) -> Result<f64> {
    agreement(preds, labels)
}

/// Mean cosine over every timestep of every clip at `layer`.
pub fn layer_similarity(
    victim: &[&LayerRepresentations],
    surrogate: &[&LayerRepresentations],
    layer: usize,
    eps_norm: f64,
) -> Result<f64> {
    if victim.len() != surrogate.len() || victim.is_empty() {
        return Err(Error::param("need equally many, and at least one, clips on both sides"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (v, s) in victim.iter().zip(surrogate) {
        let (h, hhat) = match (v.get(layer), s.get(layer)) {
            (Some(h), Some(hhat)) => (h, hhat),
            _ => return Err(Error::param(format!("layer {layer} missing"))),
        };
        if h.shape() != hhat.shape() {
            return Err(Error::param(format!("shape {:?} vs {:?}", h.shape(), hhat.shape())));
        }
        for (a, b) in h.row_iter().zip(hhat.row_iter()) {
            sum += cosine(a, b, eps_norm);
        }
        count += h.rows();
    }
    if count == 0 {
        return Err(Error::param("no timesteps to compare"));
    }
    Ok(sum / count as f64)
}

/// Splits a corpus into `(attack, eval)` with `round(eval_fraction · n)` eval
/// clips. Clips are interleaved across speakers (utterance-major, then
/// speaker) before taking the eval share so both parts cover the speakers.
pub fn split_corpus(corpus: &Corpus, eval_fraction: f64) -> Result<(Corpus, Corpus)> {
    if !(0.0..=1.0).contains(&eval_fraction) {
        return Err(Error::param(format!("eval fraction {eval_fraction} outside [0, 1]")));
    }
    let mut groups: BTreeMap<(String, u32), Vec<&Clip>> = BTreeMap::new();
    for c in corpus.clips() {
        let speaker = c.speaker_id.clone().unwrap_or_default();
        groups.entry((speaker, c.generator_label)).or_default().push(c);
    }
    groups.values_mut().for_each(|g| g.sort_by(|a, b| a.id.cmp(&b.id)));
    let longest = groups.values().map(Vec::len).max().unwrap_or(0);
    let order: Vec<&Clip> = (0..longest)
        .flat_map(|u| groups.values().filter_map(move |g| g.get(u).copied()))
        .collect();
    let n_eval = (eval_fraction * corpus.len() as f64).round() as usize;
    let eval_ids: HashSet<&str> = order[..n_eval].iter().map(|c| c.id.as_str()).collect();
    let attack = corpus.filter(format!("{}-attack", corpus.name), |c| !eval_ids.contains(c.id.as_str()));
    let eval = corpus.filter(format!("{}-eval", corpus.name), |c| eval_ids.contains(c.id.as_str()));
    Ok((attack, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSetup {
    /// Share of each class's eval clips used to fit the probes.
    pub probe_train_fraction: f64,
    /// Defaults to the deepest target layer.
    pub probe_layer: Option<usize>,
    pub eps_norm: f64,
}

impl Default for EvalSetup {
    fn default() -> Self {
        Self {
            probe_train_fraction: 0.5,
            probe_layer: None,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub method: String,
    pub budget_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub budget_s: f64,
    pub seed: u64,
    pub probe_layer: usize,
    pub eval_clips: usize,
    pub probe_test_clips: usize,
    pub agreement: f64,
    pub layer_similarity: BTreeMap<usize, f64>,
    pub victim_probe_accuracy: f64,
    pub surrogate_probe_accuracy: f64,
    pub heldout_loss: f64,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    fn check(&self) -> Result<()> {
        let unit = [self.agreement, self.victim_probe_accuracy, self.surrogate_probe_accuracy];
        let finite = unit.iter().chain(self.layer_similarity.values()).all(|v| v.is_finite())
            && self.heldout_loss.is_finite();
        if !finite || unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric(format!("report metrics out of range: {self:?}")));
        }
        Ok(())
    }
}

fn pick<'a>(reps: &[&'a LayerRepresentations], idx: &[usize]) -> Vec<&'a LayerRepresentations> {
    idx.iter().map(|&i| reps[i]).collect()
}

/// Per-class deterministic probe split: each class's clips sorted by id, the
/// first `max(1, round(fraction · n))` fit the probe and the rest are tested.
fn probe_split(clips: &[&Clip], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        by_class.entry(c.generator_label).or_default().push(i);
    }
    let (mut fit, mut test) = (Vec::new(), Vec::new());
    for members in by_class.values_mut() {
        members.sort_by(|&a, &b| clips[a].id.cmp(&clips[b].id));
        let k = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        fit.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    test.sort_unstable();
    (fit, test)
}

/// Scores trained heads on an eval corpus disjoint from the attack selection.
///
/// Victim representations come from the local `victim` instance, so no
/// query budget is consumed.
pub fn evaluate<S: AsRef<str>>(
    victim: &VictimModel,
    heads: &SurrogateHeads,
    backbone: &Backbone,
    eval_corpus: &Corpus,
    selection_ids: &[S],
    setup: &EvalSetup,
    label: RunLabel,
) -> Result<EvalReport> {
    if eval_corpus.is_empty() {
        return Err(Error::param("empty eval corpus"));
    }
    let overlap: Vec<&str> = selection_ids
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| eval_corpus.get(id).is_some())
        .collect();
    if !overlap.is_empty() {
        return Err(Error::param(format!(
            "eval corpus overlaps the selection in {} clip(s), e.g. {:?}",
            overlap.len(),
            overlap[0]
        )));
    }
    if !(setup.probe_train_fraction > 0.0 && setup.probe_train_fraction < 1.0) {
        return Err(Error::param("probe_train_fraction must lie in (0, 1)"));
    }
    let layers: BTreeSet<usize> = heads.target_layers();
    let probe_layer = setup.probe_layer.unwrap_or_else(|| *layers.last().expect("heads have layers"));
    if !layers.contains(&probe_layer) {
        return Err(Error::param(format!("probe layer {probe_layer} is not a target layer")));
    }

    let clips: Vec<&Clip> = eval_corpus.clips().iter().collect();
    let pairs = clips
        .par_iter()
        .map(|c| {
            let x = c.samples_f64();
            TrainingPair::from_samples(c.id.clone(), &x, backbone, victim.forward(&x, &layers)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted = pairs
        .par_iter()
        .map(|p| heads.predict(&p.features))
        .collect::<Result<Vec<_>>>()?;
    let victim_reps: Vec<&LayerRepresentations> = pairs.iter().map(|p| &p.targets).collect();
    let surrogate_reps: Vec<&LayerRepresentations> = predicted.iter().collect();

    let mut similarity = BTreeMap::new();
    for &n in &layers {
        similarity.insert(n, layer_similarity(&victim_reps, &surrogate_reps, n, setup.eps_norm)?);
    }
    let heldout_loss = mean_loss(heads, &pairs, setup.eps_norm)?;

    let (fit, test) = probe_split(&clips, setup.probe_train_fraction);
    if test.is_empty() {
        return Err(Error::param("probe split left no clips to test; need ≥ 2 eval clips in some class"));
    }
    let labels: Vec<u32> = clips.iter().map(|c| c.generator_label).collect();
    let fit_labels: Vec<u32> = fit.iter().map(|&i| labels[i]).collect();
    let victim_probe = fit_probe(&pick(&victim_reps, &fit), &fit_labels, probe_layer)?;
    let surrogate_probe = fit_probe(&pick(&surrogate_reps, &fit), &fit_labels, probe_layer)?;
    let test_labels: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    if let Some(missing) = test_labels.iter().find(|&&l| !victim_probe.has_class(l)) {
        return Err(Error::param(format!("class {missing} has no probe training clip")));
    }
    let victim_preds = test
        .iter()
        .map(|&i| victim_probe.predict(victim_reps[i]))
        .collect::<Result<Vec<_>>>()?;
    let surrogate_preds = test
        .iter()
        .map(|&i| surrogate_probe.predict(surrogate_reps[i]))
        .collect::<Result<Vec<_>>>()?;

    let report = EvalReport {
        method: label.method,
        budget_s: label.budget_s,
        seed: label.seed,
        probe_layer,
        eval_clips: clips.len(),
        probe_test_clips: test.len(),
        agreement: agreement(&victim_preds, &surrogate_preds)?,
        layer_similarity: similarity,
        victim_probe_accuracy: accuracy(&victim_preds, &test_labels)?,
        surrogate_probe_accuracy: accuracy(&surrogate_preds, &test_labels)?,
        heldout_loss,
    };
    report.check()?;
    Ok(report)
}
