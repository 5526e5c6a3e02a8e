//! Attacker-side client with a persistent per-clip response cache.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{
    BudgetStatus, ErrorBody, ModelInfo, RepresentationRequest, RepresentationResponse, BUDGET_PATH,
    ERR_BUDGET_EXHAUSTED, ERR_CLIP_TOO_LONG, INFO_PATH, REPRESENTATIONS_PATH,
};
use super::LayerRepresentations;
use crate::corpus::{Clip, LengthLimits, MAX_CLIP_SECONDS};
use crate::error::{Error, Result};

const RESPONSE_LIMIT_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Doubles after every failed attempt.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    clip_id: String,
    representations: LayerRepresentations,
}

/// Representations keyed by clip id, optionally appended to a JSON-lines file.
#[derive(Debug, Default)]
pub struct RepresentationCache {
    path: Option<PathBuf>,
    entries: HashMap<String, LayerRepresentations>,
}

impl RepresentationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache file; later lines for a clip win.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(rec.clip_id, rec.representations);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
        })
    }

    pub fn get(&self, clip_id: &str, layers: &BTreeSet<usize>) -> Option<LayerRepresentations> {
        self.entries
            .get(clip_id)
            .filter(|r| r.contains_all(layers))
            .and_then(|r| r.restrict(layers).ok())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, clip_id: &str, reps: LayerRepresentations) -> Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut line = serde_json::to_vec(&CacheLine {
                clip_id: clip_id.to_owned(),
                representations: reps.clone(),
            })?;
            line.push(b'\n');
            file.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        self.entries.insert(clip_id.to_owned(), reps);
        Ok(())
    }
}

/// Blocking client for the representation service.
pub struct VictimClient {
    base_url: String,
    agent: ureq::Agent,
    cache: RepresentationCache,
    retry: RetryPolicy,
    max_clip_s: f64,
    network_requests: u64,
    charged_s: f64,
}

enum Attempt {
    Done(LayerRepresentations),
    Fatal(Error),
    Retry(String),
}

impl VictimClient {
    pub fn new(base_url: impl Into<String>, cache: RepresentationCache) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
            cache,
            retry: RetryPolicy::default(),
            max_clip_s: MAX_CLIP_SECONDS,
            network_requests: 0,
            charged_s: 0.0,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// POSTs that reached the service (successful or refused).
    pub fn network_requests(&self) -> u64 {
        self.network_requests
    }

    /// Sum of durations of clips the service accepted, in send order.
    pub fn charged_seconds(&self) -> f64 {
        self.charged_s
    }

    pub fn cache(&self) -> &RepresentationCache {
        &self.cache
    }

    /// Representations of `clip` for `layers`; cached clips never hit the network.
    pub fn query(&mut self, clip: &Clip, layers: &BTreeSet<usize>) -> Result<LayerRepresentations> {
        if let Some(hit) = self.cache.get(&clip.id, layers) {
            return Ok(hit);
        }
        let max = LengthLimits {
            max_len_s: self.max_clip_s,
            min_len_s: 0.0,
        }
        .max_samples(clip.sample_rate);
        if clip.num_samples() > max {
            return Err(Error::ClipTooLong {
                clip_id: clip.id.clone(),
                duration_s: clip.duration_s(),
                max_seconds: self.max_clip_s,
            });
        }
        let request = RepresentationRequest {
            clip_id: clip.id.clone(),
            sample_rate: clip.sample_rate,
            samples: clip.samples().to_vec(),
            layers: layers.iter().copied().collect(),
        };
        let url = format!("{}{}", self.base_url, REPRESENTATIONS_PATH);
        let mut backoff = self.retry.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &request, clip, layers) {
                Attempt::Done(reps) => {
                    self.cache.insert(&clip.id, reps.clone())?;
                    return Ok(reps);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(message) => {
                    if attempts > self.retry.max_retries {
                        return Err(Error::Transport { attempts, message });
                    }
                    log::warn!("query for {} failed ({message}); retrying in {backoff:?}", clip.id);
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }

    fn attempt(
        &mut self,
        url: &str,
        request: &RepresentationRequest,
        clip: &Clip,
        layers: &BTreeSet<usize>,
    ) -> Attempt {
        let mut resp = match self.agent.post(url).send_json(request) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        self.network_requests += 1;
        let status = resp.status().as_u16();
        let body = match resp
            .body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT_BYTES)
            .read_to_string()
        {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200 => {
                // The service charged the clip once it answered 200.
                self.charged_s += clip.duration_s();
                match serde_json::from_str::<RepresentationResponse>(&body)
                    .map_err(Error::from)
                    .and_then(|r| r.decode(layers))
                {
                    Ok(reps) => Attempt::Done(reps),
                    Err(e) => Attempt::Fatal(e),
                }
            }
            500..=599 => Attempt::Retry(format!("status {status}: {body}")),
            _ => {
                let parsed = serde_json::from_str::<ErrorBody>(&body).ok();
                Attempt::Fatal(match parsed.as_ref().map(|b| b.error.as_str()) {
                    Some(ERR_BUDGET_EXHAUSTED) => Error::BudgetExhausted,
                    Some(ERR_CLIP_TOO_LONG) => Error::ClipTooLong {
                        clip_id: clip.id.clone(),
                        duration_s: clip.duration_s(),
                        max_seconds: parsed
                            .and_then(|b| b.max_seconds)
                            .unwrap_or(self.max_clip_s),
                    },
                    _ => Error::Rejected { status, body },
                })
            }
        }
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self.agent.get(&url).call().map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        if status != 200 {
            return Err(Error::Rejected { status, body });
        }
        Ok(serde_json::from_str(&body)?)
    }

    pub fn budget(&self) -> Result<BudgetStatus> {
        self.get_json(BUDGET_PATH)
    }

    pub fn info(&self) -> Result<ModelInfo> {
        self.get_json(INFO_PATH)
    }
}
