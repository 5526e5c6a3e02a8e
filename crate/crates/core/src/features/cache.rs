use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TokenLine {
    clip_id: String,
    model_hash: String,
    tokens: TokenSequence,
}

/// Token sequences keyed by (clip id, k-means model hash), appended to a
/// JSON-lines file.
#[derive(Debug)]
pub struct TokenCache {
    path: PathBuf,
    entries: HashMap<(String, String), TokenSequence>,
}

impl TokenCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: TokenLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert((rec.clip_id, rec.model_hash), rec.tokens);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, clip_id: &str, model_hash: &str) -> Option<&TokenSequence> {
        self.entries
            .get(&(clip_id.to_owned(), model_hash.to_owned()))
    }

    pub fn insert(&mut self, clip_id: &str, model_hash: &str, tokens: TokenSequence) -> Result<()> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut line = serde_json::to_vec(&TokenLine {
            clip_id: clip_id.to_owned(),
            model_hash: model_hash.to_owned(),
            tokens: tokens.clone(),
        })?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.entries
            .insert((clip_id.to_owned(), model_hash.to_owned()), tokens);
        Ok(())
    }
}
