use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use extractbench::extraction::{default_steps, TrainConfig, DEFAULT_EPS_NORM};
use extractbench::selection::SelectionMethod;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// The three roots every random choice is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub victim: u64,
    pub attack: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            victim: 0,
            attack: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    Wav,
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub speakers: u32,
    pub clips_per_speaker: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub eval_fraction: f64,
    pub storage: Storage,
    /// Defaults to `<run_dir>/corpus`.
    pub dir: Option<PathBuf>,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            speakers: 4,
            clips_per_speaker: 32,
            min_duration_s: 2.0,
            max_duration_s: 15.6,
            eval_fraction: 0.5,
            storage: Storage::Wav,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VictimParams {
    pub num_layers: usize,
    pub dim: usize,
    pub target_layers: Vec<usize>,
    /// Query budget the service enforces, in seconds.
    pub budget_s: f64,
    pub bind: String,
    pub url: String,
    /// Layers the service answers for; empty means all.
    pub allowed_layers: Vec<usize>,
}

impl Default for VictimParams {
    fn default() -> Self {
        Self {
            num_layers: 12,
            dim: 64,
            target_layers: vec![4, 8, 12],
            budget_s: 600.0,
            bind: "127.0.0.1:8750".into(),
            url: "http://127.0.0.1:8750".into(),
            allowed_layers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub method: SelectionMethod,
    /// Query budget H in seconds.
    pub budget_s: f64,
    /// Clusters for the token model.
    pub k: usize,
    pub frame_fraction: f64,
    /// Clusters over transcription embeddings.
    pub transcription_k: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            method: SelectionMethod::Random,
            budget_s: 120.0,
            k: 16,
            frame_fraction: 0.1,
            transcription_k: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionParams {
    /// `None` derives the step count from H.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub eps_norm: f64,
    pub parallel: bool,
    pub feature_dim: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: None,
            batch_size: t.batch_size,
            peak_lr: t.peak_lr,
            warmup_fraction: t.warmup_fraction,
            eps_norm: DEFAULT_EPS_NORM,
            parallel: false,
            feature_dim: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationParams {
    pub probe_train_fraction: f64,
    pub probe_layer: Option<usize>,
}

impl Default for EvaluationParams {
    fn default() -> Self {
        Self {
            probe_train_fraction: 0.5,
            probe_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub methods: Vec<SelectionMethod>,
    pub budgets_s: Vec<f64>,
    /// Added to the attack seed, one run per entry.
    pub seed_offsets: Vec<u64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            methods: vec![SelectionMethod::Random, SelectionMethod::Content],
            budgets_s: vec![30.0, 120.0],
            seed_offsets: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub seeds: Seeds,
    pub corpus: CorpusParams,
    pub victim: VictimParams,
    pub selection: SelectionParams,
    pub extraction: ExtractionParams,
    pub evaluation: EvaluationParams,
    pub sweep: SweepParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("run"),
            seeds: Seeds::default(),
            corpus: CorpusParams::default(),
            victim: VictimParams::default(),
            selection: SelectionParams::default(),
            extraction: ExtractionParams::default(),
            evaluation: EvaluationParams::default(),
            sweep: SweepParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }

    pub fn target_layers(&self) -> BTreeSet<usize> {
        self.victim.target_layers.iter().copied().collect()
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.dir.clone().unwrap_or_else(|| self.run_dir.join("corpus"))
    }

    pub fn train_config(&self, budget_s: f64, seed: u64) -> TrainConfig {
        let budget_hours = budget_s / 3600.0;
        let e = &self.extraction;
        TrainConfig {
            budget_hours,
            steps: e.steps.unwrap_or_else(|| default_steps(budget_hours)),
            batch_size: e.batch_size,
            peak_lr: e.peak_lr,
            warmup_fraction: e.warmup_fraction,
            seed,
            eps_norm: e.eps_norm,
            parallel: e.parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| -> Result<()> { Err(UsageError(msg).into()) };
        let layers = self.target_layers();
        if layers.is_empty() || layers.iter().any(|&n| n == 0 || n > self.victim.num_layers) {
            return usage(format!(
                "target layers {:?} must be a non-empty subset of 1..={}",
                self.victim.target_layers, self.victim.num_layers
            ));
        }
        let h = self.selection.budget_s;
        if !(h > 0.0) {
            return usage(format!("selection budget must be positive, got {h}"));
        }
        if h > self.victim.budget_s {
            return usage(format!(
                "selection budget {h} s exceeds the victim budget {} s",
                self.victim.budget_s
            ));
        }
        if !(0.0..1.0).contains(&self.corpus.eval_fraction) {
            return usage(format!("eval_fraction {} must lie in [0, 1)", self.corpus.eval_fraction));
        }
        if self.selection.k == 0 || self.selection.transcription_k == 0 {
            return usage("cluster counts must be positive".into());
        }
        self.train_config(h, 0)
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        let s = &self.sweep;
        if s.methods.is_empty() || s.budgets_s.is_empty() || s.seed_offsets.is_empty() {
            return Err(UsageError("sweep needs at least one method, budget and seed".into()).into());
        }
        if s.budgets_s.iter().any(|&b| !(b > 0.0 && b <= self.victim.budget_s)) {
            return Err(UsageError(format!(
                "sweep budgets {:?} must lie in (0, {}]",
                s.budgets_s, self.victim.budget_s
            ))
            .into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"selection": {"method": "most_speakers"}}"#).unwrap();
        assert_eq!(c.selection.method, SelectionMethod::MostSpeakers);
        assert_eq!(c.selection.budget_s, 120.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn budget_above_victim_limit_rejected() {
        let mut c = RunConfig::default();
        c.selection.budget_s = c.victim.budget_s + 1.0;
        assert!(c.validate().unwrap_err().downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn step_count_follows_budget() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(120.0, 0).steps, 334);
        let mut fixed = c.clone();
        fixed.extraction.steps = Some(5);
        assert_eq!(fixed.train_config(120.0, 0).steps, 5);
    }
}
