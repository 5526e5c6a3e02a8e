use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Clip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Random,
    Loss,
    Content,
    Transcription,
    MostSpeakers,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 5] = [
        SelectionMethod::Random,
        SelectionMethod::Loss,
        SelectionMethod::Content,
        SelectionMethod::Transcription,
        SelectionMethod::MostSpeakers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::Random => "random",
            SelectionMethod::Loss => "loss",
            SelectionMethod::Content => "content",
            SelectionMethod::Transcription => "transcription",
            SelectionMethod::MostSpeakers => "most_speakers",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown selection method {s:?} (expected one of random, loss, content, transcription, most_speakers)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub clip_id: String,
    pub running_total_s: f64,
    /// Method-specific score: loss proxy, FPS distance, cluster id, ...
    pub value: Option<f64>,
}

/// Ordered clips chosen under a duration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub method: SelectionMethod,
    pub seed: u64,
    pub budget_s: f64,
    pub total_duration_s: f64,
    /// The corpus ran out before the budget was reached.
    pub exhausted: bool,
    pub steps: Vec<PlanStep>,
}

impl SelectionPlan {
    pub fn clip_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.clip_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Accumulates clips until the running total first reaches the budget.
pub(super) struct PlanBuilder {
    plan: SelectionPlan,
    seen: HashSet<String>,
}

impl PlanBuilder {
    pub fn new(method: SelectionMethod, budget_s: f64, seed: u64) -> Result<Self> {
        if !(budget_s.is_finite() && budget_s > 0.0) {
            return Err(Error::param(format!("budget {budget_s} must be positive")));
        }
        Ok(Self {
            plan: SelectionPlan {
                method,
                seed,
                budget_s,
                total_duration_s: 0.0,
                exhausted: false,
                steps: Vec::new(),
            },
            seen: HashSet::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.plan.total_duration_s >= self.plan.budget_s
    }

    /// Adds `clip`; returns true once the budget is met.
    pub fn push(&mut self, clip: &Clip, value: Option<f64>) -> bool {
        debug_assert!(!self.is_done());
        let fresh = self.seen.insert(clip.id.clone());
        debug_assert!(fresh, "clip {} selected twice", clip.id);
        self.plan.total_duration_s += clip.duration_s();
        self.plan.steps.push(PlanStep {
            clip_id: clip.id.clone(),
            running_total_s: self.plan.total_duration_s,
            value,
        });
        self.is_done()
    }

    pub fn finish(mut self) -> SelectionPlan {
        self.plan.exhausted = !self.is_done();
        self.plan
    }
}
