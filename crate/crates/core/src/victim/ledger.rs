use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Query budget for one API key, charged in seconds of audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLedger {
    pub limit_s: f64,
    spent_s: f64,
    request_count: u64,
    #[serde(skip)]
    entries: Vec<LedgerEntry>,
}

/// One accepted request, in acceptance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub clip_id: String,
    pub duration_s: f64,
    pub spent_after_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeOutcome {
    Accepted,
    Refused,
}

impl QueryLedger {
    pub fn new(limit_s: f64) -> Result<Self> {
        if !(limit_s.is_finite() && limit_s >= 0.0) {
            return Err(Error::param(format!("budget limit {limit_s} must be finite and >= 0")));
        }
        Ok(Self {
            limit_s,
            spent_s: 0.0,
            request_count: 0,
            entries: Vec::new(),
        })
    }

    pub fn spent_s(&self) -> f64 {
        self.spent_s
    }

    pub fn request_count(&self) -> u64 {
        self.request_count
    }

    pub fn remaining_s(&self) -> f64 {
        (self.limit_s - self.spent_s).max(0.0)
    }

    pub fn is_exhausted(&self) -> bool {
        self.spent_s >= self.limit_s
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Accepts while anything is left, so the last request may overshoot the
    /// limit; refuses without mutation once `spent_s >= limit_s`.
    pub fn charge(&mut self, clip_id: &str, duration_s: f64) -> Result<ChargeOutcome> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::param(format!("charge duration {duration_s} must be positive")));
        }
        if self.is_exhausted() {
            return Ok(ChargeOutcome::Refused);
        }
        self.spent_s += duration_s;
        self.request_count += 1;
        self.entries.push(LedgerEntry {
            clip_id: clip_id.to_owned(),
            duration_s,
            spent_after_s: self.spent_s,
        });
        Ok(ChargeOutcome::Accepted)
    }
}
