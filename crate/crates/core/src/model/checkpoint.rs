//! Binary checkpoints: magic, version, a length-prefixed JSON header with
//! the config and tensor shapes, then every value as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, ModelConfig, RunningStats, Tensor, TrainedModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTCPRBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    /// Per layer: tensor names and shapes.
    tensors: Vec<Vec<(String, Vec<usize>)>>,
    /// Per layer: unit counts of each batchnorm site.
    running: Vec<Vec<usize>>,
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        tensors: model
            .layers
            .iter()
            .map(|l| l.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect())
            .collect(),
        running: model
            .layers
            .iter()
            .map(|l| l.running.iter().map(|r| r.mean.len()).collect())
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut put = |vs: &[f64]| -> std::io::Result<()> {
        for &v in vs {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    };
    for l in &model.layers {
        for t in &l.tensors {
            put(&t.data)?;
        }
        for r in &l.running {
            put(&r.mean)?;
            put(&r.var)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };
    let mut layers = Vec::with_capacity(header.tensors.len());
    for (ts, rs) in header.tensors.iter().zip(&header.running) {
        let mut tensors = Vec::with_capacity(ts.len());
        for (name, shape) in ts {
            let data = take(shape.iter().product())?;
            tensors.push(Tensor {
                name: name.clone(),
                shape: shape.clone(),
                data,
            });
        }
        let mut running = Vec::with_capacity(rs.len());
        for &units in rs {
            let mean = take(units)?;
            let var = take(units)?;
            running.push(RunningStats { mean, var });
        }
        layers.push(LayerParams { tensors, running });
    }
    let model = TrainedModel {
        config: header.config,
        layers,
    };
    // shapes must agree with what the config would initialize
    let mut fresh = TrainedModel::init(model.config.clone())?;
    let same = fresh.layers.len() == model.layers.len()
        && fresh.layers.iter().zip(&model.layers).all(|(a, b)| {
            a.tensors.len() == b.tensors.len()
                && a.running.len() == b.running.len()
                && a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.shape == y.shape)
        });
    if !same {
        return Err(bad("tensor shapes do not match the stored config"));
    }
    fresh.layers = model.layers;
    Ok(fresh)
}
