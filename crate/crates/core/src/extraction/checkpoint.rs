use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, SurrogateHeads, TraceRow, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub layer: usize,
    /// Row-major `victim_dim × feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub target_layers: Vec<usize>,
    pub victim_dim: usize,
    pub feature_dim: usize,
    pub heads: Vec<HeadRecord>,
    pub config: TrainConfig,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(heads: &SurrogateHeads, config: TrainConfig, final_loss: Option<f64>) -> Self {
        Self {
            target_layers: heads.target_layers().into_iter().collect(),
            victim_dim: heads.victim_dim(),
            feature_dim: heads.feature_dim(),
            heads: heads
                .heads()
                .map(|(layer, h)| HeadRecord {
                    layer,
                    weights: h.weight.as_slice().to_vec(),
                    bias: h.bias.clone(),
                })
                .collect(),
            config,
            final_loss,
        }
    }

    pub fn heads(&self) -> Result<SurrogateHeads> {
        let mut map = BTreeMap::new();
        for r in &self.heads {
            let weight = Matrix::from_vec(self.victim_dim, self.feature_dim, r.weights.clone())?;
            if map.insert(r.layer, Head { weight, bias: r.bias.clone() }).is_some() {
                return Err(Error::Integrity(format!("layer {} stored twice", r.layer)));
            }
        }
        if map.keys().copied().collect::<Vec<_>>() != self.target_layers {
            return Err(Error::Integrity("head layers disagree with target_layers".into()));
        }
        SurrogateHeads::from_heads(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

pub fn write_loss_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in trace {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
