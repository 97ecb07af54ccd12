//! Frame datasets: one row per (sub-sampled) frame of a tapped layer, with
//! the phone label under a reduction scheme.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::{frame_label, holdout_mask, Corpus};
use crate::error::{invalid, Error, Result};
use crate::model::{ForwardOptions, TapPoint, TrainedModel};
use crate::par;
use crate::phoneset::Scheme;
use crate::tensor::Matrix;

pub const DATASET_MAGIC: &[u8; 8] = b"CTCPFRM1";

/// Where a dataset's vectors came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub layer: usize,
    pub layer_name: String,
    pub strides_enabled: bool,
    pub window: usize,
    pub scheme: Scheme,
    pub tap_point: TapPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    /// `N × D`, values rounded to `f32`.
    pub vectors: Matrix,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub utt_ids: Vec<String>,
    /// Row ranges per utterance: utterance `i` owns `offsets[i]..offsets[i+1]`.
    pub utt_offsets: Vec<usize>,
    pub provenance: Provenance,
}

impl FrameDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.utt_ids.len()
    }

    /// Keeps the listed utterances, in the given order.
    pub fn select_utterances(&self, which: &[usize]) -> FrameDataset {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        let mut offsets = vec![0];
        for &u in which {
            let (a, b) = (self.utt_offsets[u], self.utt_offsets[u + 1]);
            data.extend_from_slice(&self.vectors.data[a * self.dim()..b * self.dim()]);
            labels.extend_from_slice(&self.labels[a..b]);
            ids.push(self.utt_ids[u].clone());
            offsets.push(labels.len());
        }
        FrameDataset {
            vectors: Matrix::from_vec(labels.len(), self.dim(), data),
            labels,
            label_names: self.label_names.clone(),
            utt_ids: ids,
            utt_offsets: offsets,
            provenance: self.provenance.clone(),
        }
    }

    /// Splits by utterance with [`holdout_mask`]; held-out side second.
    pub fn split_holdout(&self, fraction: f64) -> (FrameDataset, FrameDataset) {
        let mask = holdout_mask(self.num_utterances(), fraction);
        let train: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        let dev: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        (self.select_utterances(&train), self.select_utterances(&dev))
    }

    /// Columns `from..from + width` of every row.
    pub fn column_block(&self, from: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.len(), width);
        for r in 0..self.len() {
            out.row_mut(r).copy_from_slice(&self.vectors.row(r)[from..from + width]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = Header {
            n: self.len(),
            d: self.dim(),
            provenance: self.provenance.clone(),
            label_names: self.label_names.clone(),
            utt_ids: self.utt_ids.clone(),
            utt_offsets: self.utt_offsets.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in &self.vectors.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        for &l in &self.labels {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<FrameDataset> {
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != DATASET_MAGIC {
            return Err(bad("not a frame dataset"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(&json)?;
        let mut buf = vec![0u8; 4 * h.n * h.d];
        r.read_exact(&mut buf).map_err(|_| bad("truncated vectors"))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut buf = vec![0u8; 4 * h.n];
        r.read_exact(&mut buf).map_err(|_| bad("truncated labels"))?;
        let labels: Vec<usize> = buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if labels.iter().any(|&l| l >= h.label_names.len())
            || h.utt_offsets.len() != h.utt_ids.len() + 1
            || h.utt_offsets.last() != Some(&h.n)
        {
            return Err(bad("inconsistent header"));
        }
        Ok(FrameDataset {
            vectors: Matrix::from_vec(h.n, h.d, data),
            labels,
            label_names: h.label_names,
            utt_ids: h.utt_ids,
            utt_offsets: h.utt_offsets,
            provenance: h.provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    d: usize,
    provenance: Provenance,
    label_names: Vec<String>,
    utt_ids: Vec<String>,
    utt_offsets: Vec<usize>,
}

/// Options shared by every layer of one extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    pub strides_enabled: bool,
    pub window: usize,
    pub scheme: Scheme,
    pub tap_point: TapPoint,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            strides_enabled: true,
            window: 0,
            scheme: Scheme::Full,
            tap_point: TapPoint::PostActivation,
        }
    }
}

/// Rows `t − w … t + w` of `tap` concatenated, clamping at the edges.
fn windowed(tap: &Matrix, w: usize) -> Matrix {
    let d = tap.cols;
    let mut out = Matrix::zeros(tap.rows, d * (2 * w + 1));
    for t in 0..tap.rows {
        let row = out.row_mut(t);
        for (j, dt) in (-(w as isize)..=w as isize).enumerate() {
            let src = (t as isize + dt).clamp(0, tap.rows as isize - 1) as usize;
            row[j * d..(j + 1) * d].copy_from_slice(tap.row(src));
        }
    }
    out
}

/// One dataset per requested layer from a single eval-mode pass per
/// utterance. Layer 0 is the input spectrogram.
pub fn extract_layers(model: &TrainedModel, corpus: &Corpus, layers: &[usize], opts: &ExtractOptions) -> Result<Vec<FrameDataset>> {
    let k_max = model.config.num_layers();
    if let Some(&bad) = layers.iter().find(|&&k| k > k_max) {
        return Err(invalid(format!("layer {bad} outside 0..={k_max}")));
    }
    if corpus.utterances.is_empty() {
        return Err(Error::EmptyInput("corpus has no utterances".into()));
    }
    let names = model.config.tap_names();
    let label_map = corpus.inventory.label_map(opts.scheme);
    let label_names = corpus.inventory.labels(opts.scheme);
    let mappings = layers
        .iter()
        .map(|&k| model.config.time_mapping(k, opts.strides_enabled))
        .collect::<Result<Vec<_>>>()?;
    let fwd = ForwardOptions::taps(opts.strides_enabled, opts.tap_point);

    // per utterance: per requested layer, (windowed vectors, labels)
    let per_utt = par::map(&corpus.utterances, |u| -> Result<Vec<(Matrix, Vec<usize>)>> {
        let pass = model.forward(&[&u.spectrogram.frames], &fwd)?;
        let taps = &pass.taps[0];
        layers
            .iter()
            .zip(&mappings)
            .map(|(&k, &(factor, offset))| {
                let tap = &taps[k];
                let labels = (0..tap.rows)
                    .map(|t| frame_label(u, t, factor, offset).map(|p| label_map[p]))
                    .collect::<Result<Vec<_>>>()?;
                let mut v = windowed(tap, opts.window);
                v.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
                Ok((v, labels))
            })
            .collect()
    });
    let per_utt = per_utt.into_iter().collect::<Result<Vec<_>>>()?;

    let utt_ids: Vec<String> = corpus.utterances.iter().map(|u| u.id.clone()).collect();
    let mut out = Vec::with_capacity(layers.len());
    for (li, &k) in layers.iter().enumerate() {
        let d = per_utt[0][li].0.cols;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut offsets = vec![0];
        for u in &per_utt {
            data.extend_from_slice(&u[li].0.data);
            labels.extend_from_slice(&u[li].1);
            offsets.push(labels.len());
        }
        out.push(FrameDataset {
            vectors: Matrix::from_vec(labels.len(), d, data),
            labels,
            label_names: label_names.clone(),
            utt_ids: utt_ids.clone(),
            utt_offsets: offsets,
            provenance: Provenance {
                layer: k,
                layer_name: names[k].clone(),
                strides_enabled: opts.strides_enabled,
                window: opts.window,
                scheme: opts.scheme,
                tap_point: opts.tap_point,
            },
        });
    }
    Ok(out)
}

pub fn extract_frames(model: &TrainedModel, corpus: &Corpus, layer: usize, opts: &ExtractOptions) -> Result<FrameDataset> {
    Ok(extract_layers(model, corpus, &[layer], opts)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_replicates_edges() {
        let tap = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let w = windowed(&tap, 1);
        assert_eq!(w.data, vec![1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 3.0]);
        assert_eq!(windowed(&tap, 0), tap);
    }
}
