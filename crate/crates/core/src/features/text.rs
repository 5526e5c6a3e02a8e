//! Transcription embeddings behind a pluggable provider.
//!
//! The built-in provider hashes character trigrams of `^text$` with 64-bit
//! FNV-1a into `dim` buckets and L2-normalizes the counts. Externally computed
//! embeddings can be loaded from JSON lines `{"id": ..., "embedding": [...]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::norm;
use crate::rng::fnv1a64;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    /// True when the text produced no features; `vector` is then all zeros.
    pub degenerate: bool,
}

pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> TextEmbedding;
}

#[derive(Debug, Clone, Copy)]
pub struct HashedTrigramEmbedder {
    pub dim: usize,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl TextEmbedder for HashedTrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> TextEmbedding {
        let mut vector = vec![0.0; self.dim];
        if !text.is_empty() {
            let chars: Vec<char> = std::iter::once('^')
                .chain(text.chars())
                .chain(std::iter::once('$'))
                .collect();
            let mut buf = String::with_capacity(12);
            for w in chars.windows(3) {
                buf.clear();
                buf.extend(w);
                let bucket = (fnv1a64(buf.as_bytes()) % self.dim as u64) as usize;
                vector[bucket] += 1.0;
            }
        }
        let n = norm(&vector);
        if n == 0.0 {
            return TextEmbedding {
                vector,
                degenerate: true,
            };
        }
        vector.iter_mut().for_each(|v| *v /= n);
        TextEmbedding {
            vector,
            degenerate: false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Vec<f64>,
}

pub fn load_embeddings(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match dim {
            None => dim = Some(rec.embedding.len()),
            Some(d) if d != rec.embedding.len() => {
                return Err(parse_err(format!(
                    "embedding has {} dims, earlier records have {d}",
                    rec.embedding.len()
                )))
            }
            _ => {}
        }
        out.insert(rec.id, rec.embedding);
    }
    Ok(out)
}

/// Writes embeddings in `ids` order.
pub fn save_embeddings(path: &Path, ids: &[&str], table: &HashMap<String, Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for id in ids {
        let embedding = table
            .get(*id)
            .ok_or_else(|| Error::param(format!("no embedding for {id}")))?;
        serde_json::to_writer(
            &mut out,
            &EmbeddingLine {
                id: (*id).to_owned(),
                embedding: embedding.clone(),
            },
        )?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let e = HashedTrigramEmbedder::default();
        let a = e.embed("the quick brown fox");
        assert_eq!(a, e.embed("the quick brown fox"));
        assert!(!a.degenerate);
        assert!((norm(&a.vector) - 1.0).abs() < 1e-9);
        assert_eq!(e.embed("x").vector.len(), 256);
        assert!(!e.embed("x").degenerate);
    }

    #[test]
    fn empty_is_degenerate() {
        let t = HashedTrigramEmbedder::default().embed("");
        assert!(t.degenerate);
        assert!(t.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn similar_texts_are_closer() {
        let e = HashedTrigramEmbedder::default();
        let a = e.embed("abcabcabcabc");
        let b = e.embed("abcabcabcabd");
        let c = e.embed("xyzuvwxyzuvw");
        let dot = |x: &TextEmbedding, y: &TextEmbedding| crate::matrix::dot(&x.vector, &y.vector);
        assert!(dot(&a, &b) > dot(&a, &c));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let table: HashMap<String, Vec<f64>> =
            [("a".to_string(), vec![0.25, -1.0]), ("b".to_string(), vec![0.0, 0.5])].into();
        save_embeddings(&path, &["a", "b"], &table).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), table);
        std::fs::write(&path, "{\"id\":\"a\",\"embedding\":[1.0]}\n{\"id\":\"b\",\"embedding\":[1.0,2.0]}\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Parse { line: 2, .. })));
    }
}
