//! The frame classifier: one ReLU hidden layer with dropout, or a plain
//! linear (softmax regression) variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax, gemm, log_softmax_in_place, Matrix};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_size: usize,
    pub dropout: f64,
    /// Softmax regression instead of the hidden-layer classifier.
    pub linear: bool,
    /// Standardize features with train-set mean and deviation.
    pub standardize: bool,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_size: 500,
            dropout: 0.5,
            linear: false,
            standardize: false,
            train: TrainConfig::probe_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: (0..out_dim).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows, self.out_dim);
        gemm(x.rows, self.in_dim, self.out_dim, 1.0, &x.data, false, &self.weight, true, 0.0, &mut y.data);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub input_dim: usize,
    pub labels: Vec<String>,
    pub dropout: f64,
    /// `[hidden, output]`, or `[output]` for the linear variant.
    pub layers: Vec<Dense>,
    /// Per-feature `(mean, 1/std)` when standardizing.
    pub standardizer: Option<(Vec<f64>, Vec<f64>)>,
}

/// Activations of one training-mode batch, kept for the backward pass.
pub(crate) struct ProbeTrace {
    pub input: Matrix,
    pub hidden_pre: Option<Matrix>,
    pub mask: Option<Vec<f64>>,
    pub hidden: Option<Matrix>,
    pub log_probs: Matrix,
}

impl TrainedProbe {
    pub fn init(input_dim: usize, labels: Vec<String>, cfg: &ProbeConfig, seed: u64) -> Result<Self> {
        if input_dim == 0 || labels.is_empty() {
            return Err(Error::EmptyInput("probe needs features and labels".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(crate::error::invalid("dropout must be in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = labels.len();
        let layers = if cfg.linear {
            vec![Dense::init(input_dim, n, &mut rng)]
        } else {
            vec![
                Dense::init(input_dim, cfg.hidden_size, &mut rng),
                Dense::init(cfg.hidden_size, n, &mut rng),
            ]
        };
        Ok(TrainedProbe {
            input_dim,
            labels,
            dropout: if cfg.linear { 0.0 } else { cfg.dropout },
            layers,
            standardizer: None,
        })
    }

    pub fn fit_standardizer(&mut self, x: &Matrix) {
        let n = x.rows.max(1) as f64;
        let mut mean = vec![0.0; x.cols];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; x.cols];
        for r in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        self.standardizer = Some((mean, inv));
    }

    fn prepare(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "probe expects {} features, got {}",
                self.input_dim, x.cols
            )));
        }
        let mut x = x.clone();
        if let Some((mean, inv)) = &self.standardizer {
            for r in 0..x.rows {
                for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(inv) {
                    *v = (*v - m) * s;
                }
            }
        }
        Ok(x)
    }

    /// Forward pass; dropout is applied only when `rng` is given.
    pub(crate) fn trace(&self, x: &Matrix, rng: Option<&mut ChaCha8Rng>) -> Result<ProbeTrace> {
        let input = self.prepare(x)?;
        let (hidden_pre, mask, hidden, out_in) = if self.layers.len() == 2 {
            let pre = self.layers[0].apply(&input);
            let mask = rng.filter(|_| self.dropout > 0.0).map(|rng| {
                let keep = 1.0 - self.dropout;
                (0..pre.data.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect::<Vec<f64>>()
            });
            let mut h = pre.clone();
            for (i, v) in h.data.iter_mut().enumerate() {
                let m = mask.as_ref().map_or(1.0, |m| m[i]);
                *v = (*v * m).max(0.0);
            }
            (Some(pre), mask, Some(h.clone()), h)
        } else {
            (None, None, None, input.clone())
        };
        let mut log_probs = self.layers.last().expect("output layer").apply(&out_in);
        for r in 0..log_probs.rows {
            log_softmax_in_place(log_probs.row_mut(r));
        }
        Ok(ProbeTrace {
            input,
            hidden_pre,
            mask,
            hidden,
            log_probs,
        })
    }

    /// Mean cross-entropy and gradients (same layout as `layers`:
    /// `(d_weight, d_bias)`) for one batch.
    pub(crate) fn loss_and_grads(&self, tr: &ProbeTrace, labels: &[usize]) -> (f64, Vec<(Vec<f64>, Vec<f64>)>) {
        let b = labels.len();
        let scale = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut d_out = tr.log_probs.clone();
        for (r, &l) in labels.iter().enumerate() {
            loss -= tr.log_probs.get(r, l);
            let row = d_out.row_mut(r);
            for v in row.iter_mut() {
                *v = v.exp() * scale;
            }
            row[l] -= scale;
        }
        let out = self.layers.last().expect("output layer");
        let out_in = tr.hidden.as_ref().unwrap_or(&tr.input);
        let mut dw = vec![0.0; out.weight.len()];
        gemm(out.out_dim, b, out.in_dim, 1.0, &d_out.data, true, &out_in.data, false, 0.0, &mut dw);
        let db = column_sums(&d_out);
        if self.layers.len() == 1 {
            return (loss * scale, vec![(dw, db)]);
        }
        let hid = &self.layers[0];
        let mut dh = Matrix::zeros(b, hid.out_dim);
        gemm(b, out.out_dim, hid.out_dim, 1.0, &d_out.data, false, &out.weight, false, 0.0, &mut dh.data);
        let pre = tr.hidden_pre.as_ref().expect("hidden pre-activation");
        for (i, g) in dh.data.iter_mut().enumerate() {
            let m = tr.mask.as_ref().map_or(1.0, |m| m[i]);
            *g = if pre.data[i] * m > 0.0 { *g * m } else { 0.0 };
        }
        let mut dw1 = vec![0.0; hid.weight.len()];
        gemm(hid.out_dim, b, hid.in_dim, 1.0, &dh.data, true, &tr.input.data, false, 0.0, &mut dw1);
        let db1 = column_sums(&dh);
        (loss * scale, vec![(dw1, db1), (dw, db)])
    }

    /// Eval-mode log-probabilities, one row per frame.
    pub fn log_probs(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.trace(x, None)?.log_probs)
    }

    /// Argmax labels; ties resolve to the lowest label index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.log_probs(x)?.iter_rows().map(argmax).collect())
    }

    /// Eval-mode mean cross-entropy and accuracy.
    pub fn loss_and_accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("no frames to evaluate".into()));
        }
        let lp = self.log_probs(x)?;
        let mut loss = 0.0;
        let mut correct = 0;
        for (r, &l) in lp.iter_rows().zip(labels) {
            loss -= r[l];
            correct += usize::from(argmax(r) == l);
        }
        let n = labels.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols];
    for r in m.iter_rows() {
        for (a, v) in s.iter_mut().zip(r) {
            *a += v;
        }
    }
    s
}
