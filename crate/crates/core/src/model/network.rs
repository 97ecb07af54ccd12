//! Batched forward and backward passes. A batch is a list of utterances of
//! possibly different lengths; batchnorm statistics pool every frame in it.

use serde::{Deserialize, Serialize};

use super::layers::{self, BnBatchStats, BnCache, ConvGeom, LstmTrace};
use super::{Activation, LayerKind, LayerShape, TrainedModel};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::tensor::{log_softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Whether a tap records a layer's output after or before its nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    #[default]
    PostActivation,
    PreActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub strides_enabled: bool,
    pub mode: Mode,
    pub tap_point: TapPoint,
    pub collect_taps: bool,
    /// Keep activations for [`TrainedModel::backward`]; train mode only.
    pub keep_cache: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            strides_enabled: true,
            mode: Mode::Eval,
            tap_point: TapPoint::PostActivation,
            collect_taps: false,
            keep_cache: false,
        }
    }
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions {
            mode: Mode::Train,
            keep_cache: true,
            ..Default::default()
        }
    }

    pub fn taps(strides_enabled: bool, tap_point: TapPoint) -> Self {
        ForwardOptions {
            strides_enabled,
            tap_point,
            collect_taps: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
enum RecState {
    Rnn(Matrix),
    Lstm(LstmTrace),
}

#[derive(Debug, Clone)]
struct DirCache {
    bn: Option<BnCache>,
    states: Vec<RecState>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        geom: ConvGeom,
        bn: Option<BnCache>,
    },
    Recurrent {
        dirs: Vec<DirCache>,
    },
    Fc,
}

#[derive(Debug, Clone)]
struct Cache {
    /// `inputs[k]` is the batch entering layer `k`.
    inputs: Vec<Vec<Matrix>>,
    /// Pre-activation outputs per layer.
    pre: Vec<Vec<Matrix>>,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `taps[utt][k]`, `k = 0` being the input; empty unless requested.
    pub taps: Vec<Vec<Matrix>>,
    pub logits: Vec<Matrix>,
    /// Per-frame log-softmax of the logits.
    pub log_probs: Vec<Matrix>,
    /// Batch statistics per layer and batchnorm site (train mode only).
    pub batch_stats: Vec<Vec<BnBatchStats>>,
    cache: Option<Cache>,
}

impl ForwardPass {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Gradients shaped like [`TrainedModel::layers`]: `[layer][tensor][elem]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &TrainedModel) -> Self {
        ParamGrads {
            layers: model
                .layers
                .iter()
                .map(|l| l.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten().flatten()
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.layers
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }
}

fn activate(act: Activation, x: &Matrix) -> Matrix {
    match act {
        Activation::None => x.clone(),
        Activation::Relu => Matrix {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|v| v.max(0.0)).collect(),
        },
    }
}

fn activation_backward(act: Activation, pre: &Matrix, d: &mut Matrix) {
    if act == Activation::Relu {
        for (g, p) in d.data.iter_mut().zip(&pre.data) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

fn geom(kind: &LayerKind, in_shape: LayerShape, out_shape: LayerShape, strides_enabled: bool) -> ConvGeom {
    match *kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
            out_channels,
        } => ConvGeom {
            c_in: in_shape.channels,
            f_in: in_shape.bins,
            kt: kernel.0,
            kf: kernel.1,
            st: if strides_enabled { stride.0 } else { 1 },
            sf: stride.1,
            pt: padding.0,
            pf: padding.1,
            c_out: out_channels,
            f_out: out_shape.bins,
        },
        _ => unreachable!("geometry of a non-convolutional layer"),
    }
}

/// Tensors per direction of a recurrent layer.
fn dir_stride(batchnorm: bool) -> usize {
    if batchnorm {
        4
    } else {
        3
    }
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

fn add_into(acc: &mut Matrix, x: &Matrix) {
    for (a, v) in acc.data.iter_mut().zip(&x.data) {
        *a += v;
    }
}

fn sum_grads(parts: Vec<Vec<Vec<f64>>>, into: &mut [Vec<f64>]) {
    for part in parts {
        for (dst, src) in into.iter_mut().zip(part) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

impl TrainedModel {
    /// Runs the network over a batch of spectrograms (`frames × bins`).
    pub fn forward(&self, inputs: &[&Matrix], opts: &ForwardOptions) -> Result<ForwardPass> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("forward called with an empty batch".into()));
        }
        if opts.keep_cache && opts.mode != Mode::Train {
            return Err(invalid("a backward cache requires a train-mode forward pass"));
        }
        let cfg = &self.config;
        let mut batch_shapes = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.cols != cfg.input_freq_bins {
                return Err(Error::ShapeMismatch(format!(
                    "input has {} frequency bins, model expects {}",
                    x.cols, cfg.input_freq_bins
                )));
            }
            batch_shapes.push(cfg.layer_shapes(x.rows, opts.strides_enabled)?);
        }
        let train = opts.mode == Mode::Train;

        let mut current: Vec<Matrix> = inputs.iter().map(|x| (*x).clone()).collect();
        let mut taps: Vec<Vec<Matrix>> = if opts.collect_taps {
            current.iter().map(|x| vec![x.clone()]).collect()
        } else {
            Vec::new()
        };
        let mut batch_stats = Vec::with_capacity(cfg.layers.len());
        let mut cache = opts.keep_cache.then(|| Cache {
            inputs: Vec::new(),
            pre: Vec::new(),
            layers: Vec::new(),
        });

        for (k, (spec, params)) in cfg.layers.iter().zip(&self.layers).enumerate() {
            let ts = &params.tensors;
            let mut stats = Vec::new();
            let (pre, layer_cache) = match spec.kind {
                LayerKind::Conv2d { out_channels, .. } => {
                    let g = geom(&spec.kind, batch_shapes[0][k], batch_shapes[0][k + 1], opts.strides_enabled);
                    let bias = (!spec.batchnorm).then(|| ts[1].data.as_slice());
                    let z = par::map(&current, |x| layers::conv_forward(x, &ts[0].data, bias, &g));
                    let (y, bn) = if spec.batchnorm {
                        let (gamma, beta) = (&ts[1].data, &ts[2].data);
                        if train {
                            let (y, c, s) = layers::bn_forward_train(&z, out_channels, g.f_out, gamma, beta);
                            stats.push(s);
                            (y, Some(c))
                        } else {
                            let r = &params.running[0];
                            let y = par::map(&z, |m| layers::bn_forward_eval(m, g.f_out, gamma, beta, &r.mean, &r.var));
                            (y, None)
                        }
                    } else {
                        (z, None)
                    };
                    (y, LayerCache::Conv { geom: g, bn })
                }
                LayerKind::RnnBidir { hidden_size } | LayerKind::LstmBidir { hidden_size } => {
                    let lstm = matches!(spec.kind, LayerKind::LstmBidir { .. });
                    let gates = if lstm { 4 * hidden_size } else { hidden_size };
                    let stride = dir_stride(spec.batchnorm);
                    let mut outs: Vec<Vec<Matrix>> = Vec::with_capacity(2);
                    let mut dirs = Vec::with_capacity(2);
                    for dir in 0..2 {
                        let base = dir * stride;
                        let (w_x, w_h) = (&ts[base].data, &ts[base + 1].data);
                        let bias = (!spec.batchnorm).then(|| ts[base + 2].data.as_slice());
                        let u = par::map(&current, |x| layers::dense_forward(x, w_x, bias, gates));
                        let (u, bn) = if spec.batchnorm {
                            let (gamma, beta) = (&ts[base + 2].data, &ts[base + 3].data);
                            if train {
                                let (y, c, s) = layers::bn_forward_train(&u, gates, 1, gamma, beta);
                                stats.push(s);
                                (y, Some(c))
                            } else {
                                let r = &params.running[dir];
                                (par::map(&u, |m| layers::bn_forward_eval(m, 1, gamma, beta, &r.mean, &r.var)), None)
                            }
                        } else {
                            (u, None)
                        };
                        let reverse = dir == 1;
                        let states: Vec<RecState> = par::map(&u, |m| {
                            if lstm {
                                RecState::Lstm(layers::lstm_forward(m, w_h, reverse))
                            } else {
                                RecState::Rnn(layers::rnn_forward(m, w_h, reverse))
                            }
                        });
                        outs.push(
                            states
                                .iter()
                                .map(|s| match s {
                                    RecState::Rnn(h) => h.clone(),
                                    RecState::Lstm(tr) => tr.hidden.clone(),
                                })
                                .collect(),
                        );
                        dirs.push(DirCache { bn, states });
                    }
                    let pre = outs[0].iter().zip(&outs[1]).map(|(f, b)| add(f, b)).collect();
                    (pre, LayerCache::Recurrent { dirs })
                }
                LayerKind::FullyConnected { out_size } => {
                    let z = par::map(&current, |x| layers::dense_forward(x, &ts[0].data, Some(&ts[1].data), out_size));
                    (z, LayerCache::Fc)
                }
            };
            let post: Vec<Matrix> = pre.iter().map(|p| activate(spec.activation, p)).collect();
            if opts.collect_taps {
                let src = match opts.tap_point {
                    TapPoint::PostActivation => &post,
                    TapPoint::PreActivation => &pre,
                };
                for (t, m) in taps.iter_mut().zip(src) {
                    t.push(m.clone());
                }
            }
            batch_stats.push(stats);
            let prev = std::mem::replace(&mut current, post);
            if let Some(c) = cache.as_mut() {
                c.inputs.push(prev);
                c.pre.push(pre);
                c.layers.push(layer_cache);
            }
        }

        let logits = current;
        let log_probs = logits
            .iter()
            .map(|z| {
                let mut lp = z.clone();
                for t in 0..lp.rows {
                    log_softmax_in_place(lp.row_mut(t));
                }
                lp
            })
            .collect();
        Ok(ForwardPass {
            taps,
            logits,
            log_probs,
            batch_stats,
            cache,
        })
    }

    /// Convenience eval-mode pass over one utterance, returning log-probs.
    pub fn log_probs(&self, x: &Matrix, strides_enabled: bool) -> Result<Matrix> {
        let opts = ForwardOptions {
            strides_enabled,
            ..Default::default()
        };
        Ok(self.forward(&[x], &opts)?.log_probs.remove(0))
    }

    /// Backpropagates `d_logits` (one matrix per utterance, shaped like the
    /// logits) through a cached training-mode pass.
    pub fn backward(&self, pass: &ForwardPass, d_logits: &[Matrix]) -> Result<ParamGrads> {
        let cache = pass.cache.as_ref().ok_or(Error::NoCachedForward)?;
        if d_logits.len() != pass.logits.len()
            || d_logits
                .iter()
                .zip(&pass.logits)
                .any(|(d, z)| d.rows != z.rows || d.cols != z.cols)
        {
            return Err(Error::ShapeMismatch("upstream gradients do not match the logits".into()));
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut upstream: Vec<Matrix> = d_logits.to_vec();

        for k in (0..self.config.layers.len()).rev() {
            let spec = &self.config.layers[k];
            let ts = &self.layers[k].tensors;
            let inputs = &cache.inputs[k];
            let gk = &mut grads.layers[k];
            for (d, p) in upstream.iter_mut().zip(&cache.pre[k]) {
                activation_backward(spec.activation, p, d);
            }
            let need_dx = k > 0;
            upstream = match (&spec.kind, &cache.layers[k]) {
                (LayerKind::Conv2d { out_channels, .. }, LayerCache::Conv { geom: g, bn }) => {
                    let dz = match bn {
                        Some(c) => {
                            let (dg, rest) = gk.split_at_mut(2);
                            let (dgamma, dbeta) = (&mut dg[1], &mut rest[0]);
                            layers::bn_backward(&upstream, c, *out_channels, g.f_out, &ts[1].data, dgamma, dbeta)
                        }
                        None => upstream,
                    };
                    let with_bias = bn.is_none();
                    let per_utt = par::map_range(inputs.len(), |i| {
                        let mut dw = vec![0.0; ts[0].data.len()];
                        let mut db = with_bias.then(|| vec![0.0; *out_channels]);
                        let dx = layers::conv_backward(&inputs[i], &ts[0].data, &dz[i], g, &mut dw, db.as_deref_mut());
                        let mut parts = vec![dw];
                        parts.extend(db);
                        (dx, parts)
                    });
                    let (dxs, parts): (Vec<_>, Vec<_>) = per_utt.into_iter().unzip();
                    if with_bias {
                        sum_grads(parts, &mut gk[..2]);
                    } else {
                        sum_grads(parts, &mut gk[..1]);
                    }
                    dxs
                }
                (LayerKind::RnnBidir { .. } | LayerKind::LstmBidir { .. }, LayerCache::Recurrent { dirs }) => {
                    let stride = dir_stride(spec.batchnorm);
                    let mut dxs: Vec<Matrix> = inputs.iter().map(|x| Matrix::zeros(x.rows, x.cols)).collect();
                    for (dir, dc) in dirs.iter().enumerate() {
                        let base = dir * stride;
                        let reverse = dir == 1;
                        let w_h = &ts[base + 1].data;
                        // through the recurrence, per utterance
                        let per_utt = par::map_range(inputs.len(), |i| {
                            let dh = &upstream[i];
                            let mut dw_h = vec![0.0; w_h.len()];
                            let du = match &dc.states[i] {
                                RecState::Rnn(hm) => layers::rnn_backward(hm, dh, w_h, reverse, &mut dw_h),
                                RecState::Lstm(tr) => layers::lstm_backward(tr, dh, w_h, reverse, &mut dw_h),
                            };
                            (du, dw_h)
                        });
                        let (dus, dwh): (Vec<Matrix>, Vec<Vec<f64>>) = per_utt.into_iter().unzip();
                        sum_grads(dwh.into_iter().map(|v| vec![v]).collect(), &mut gk[base + 1..base + 2]);
                        let gates = dus[0].cols;
                        let dus = match &dc.bn {
                            Some(c) => {
                                let (lo, hi) = gk.split_at_mut(base + 3);
                                layers::bn_backward(&dus, c, gates, 1, &ts[base + 2].data, &mut lo[base + 2], &mut hi[0])
                            }
                            None => dus,
                        };
                        let with_bias = dc.bn.is_none();
                        let w_x = &ts[base].data;
                        let per_utt = par::map_range(inputs.len(), |i| {
                            let mut dw = vec![0.0; w_x.len()];
                            let mut db = with_bias.then(|| vec![0.0; gates]);
                            let dx = layers::dense_backward(&inputs[i], w_x, &dus[i], &mut dw, db.as_deref_mut());
                            (dx, dw, db)
                        });
                        for (i, (dx, dw, db)) in per_utt.into_iter().enumerate() {
                            if need_dx {
                                add_into(&mut dxs[i], &dx);
                            }
                            for (d, s) in gk[base].iter_mut().zip(dw) {
                                *d += s;
                            }
                            if let Some(db) = db {
                                for (d, s) in gk[base + 2].iter_mut().zip(db) {
                                    *d += s;
                                }
                            }
                        }
                    }
                    dxs
                }
                (LayerKind::FullyConnected { out_size }, LayerCache::Fc) => {
                    let _ = out_size;
                    let per_utt = par::map_range(inputs.len(), |i| {
                        let mut dw = vec![0.0; ts[0].data.len()];
                        let mut db = vec![0.0; ts[1].data.len()];
                        let dx = layers::dense_backward(&inputs[i], &ts[0].data, &upstream[i], &mut dw, Some(&mut db));
                        (dx, vec![dw, db])
                    });
                    let (dxs, parts): (Vec<_>, Vec<_>) = per_utt.into_iter().unzip();
                    sum_grads(parts, &mut gk[..2]);
                    dxs
                }
                _ => unreachable!("cache kind matches layer kind"),
            };
        }
        Ok(grads)
    }
}
