//! DeepSpeech2-style acoustic model: 2-D convolutions over
//! (time, frequency), bidirectional recurrent layers and a per-frame
//! fully-connected output, with a tap on every layer's output.

mod checkpoint;
mod layers;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::error::{invalid, Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::BnBatchStats;
pub use network::{ForwardOptions, ForwardPass, Mode, ParamGrads, TapPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// `kernel`, `stride`, `padding` are `(time, frequency)`.
    Conv2d {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        out_channels: usize,
    },
    RnnBidir {
        hidden_size: usize,
    },
    LstmBidir {
        hidden_size: usize,
    },
    FullyConnected {
        out_size: usize,
    },
}

impl LayerKind {
    fn rank(&self) -> u8 {
        match self {
            LayerKind::Conv2d { .. } => 0,
            LayerKind::RnnBidir { .. } | LayerKind::LstmBidir { .. } => 1,
            LayerKind::FullyConnected { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub batchnorm: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub alphabet: Alphabet,
    pub input_freq_bins: usize,
    pub seed: u64,
}

/// Per-frame layout of one layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub frames: usize,
    pub channels: usize,
    pub bins: usize,
}

impl LayerShape {
    pub fn width(&self) -> usize {
        self.channels * self.bins
    }
}

/// `floor((in_len + 2·padding − kernel) / stride) + 1`.
pub fn conv_output_len(in_len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(invalid("kernel and stride must be ≥ 1"));
    }
    if in_len + 2 * padding < kernel {
        return Err(invalid(format!(
            "input length {in_len} with padding {padding} is shorter than kernel {kernel}"
        )));
    }
    Ok((in_len + 2 * padding - kernel) / stride + 1)
}

pub const PRESETS: [&str; 4] = ["ds2", "ds2-light", "ds2-mini", "ds2-light-mini"];

pub const MINI_HIDDEN: usize = 64;
pub const MINI_CHANNELS: usize = 8;

fn conv(name: &str, kernel: (usize, usize), stride: (usize, usize), channels: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv2d {
            kernel,
            stride,
            // "same" time padding, no frequency padding
            padding: ((kernel.0 - 1) / 2, 0),
            out_channels: channels,
        },
        batchnorm: true,
        activation: Activation::Relu,
    }
}

fn recurrent(name: String, lstm: bool, hidden_size: usize) -> LayerSpec {
    LayerSpec {
        name,
        kind: if lstm {
            LayerKind::LstmBidir { hidden_size }
        } else {
            LayerKind::RnnBidir { hidden_size }
        },
        batchnorm: true,
        activation: Activation::Relu,
    }
}

/// Architecture presets. `ds2` and `ds2-light` are full size; the `-mini`
/// variants keep the layer stack and shrink widths.
pub fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "ds2" => Ok(build_preset(false, 7, 1760, 32)),
        "ds2-light" => Ok(build_preset(true, 5, 600, 32)),
        "ds2-mini" => Ok(build_preset(false, 7, MINI_HIDDEN, MINI_CHANNELS)),
        "ds2-light-mini" => Ok(build_preset(true, 5, MINI_HIDDEN, MINI_CHANNELS)),
        _ => Err(Error::Unknown {
            kind: "model preset",
            name: name.to_string(),
        }),
    }
}

/// A preset with hidden size and conv channel count overridden.
pub fn preset_with(name: &str, hidden: Option<usize>, channels: Option<usize>) -> Result<ModelConfig> {
    let mut cfg = preset(name)?;
    for l in &mut cfg.layers {
        match &mut l.kind {
            LayerKind::Conv2d { out_channels, .. } => {
                if let Some(c) = channels {
                    *out_channels = c;
                }
            }
            LayerKind::RnnBidir { hidden_size } | LayerKind::LstmBidir { hidden_size } => {
                if let Some(h) = hidden {
                    *hidden_size = h;
                }
            }
            LayerKind::FullyConnected { .. } => {}
        }
    }
    Ok(cfg)
}

fn build_preset(lstm: bool, n_recurrent: usize, hidden: usize, channels: usize) -> ModelConfig {
    let alphabet = Alphabet::english();
    let mut layers = vec![
        conv("cnn1", (11, 41), (2, 2), channels),
        conv("cnn2", (11, 21), (2, 1), channels),
    ];
    let prefix = if lstm { "lstm" } else { "rnn" };
    for i in 1..=n_recurrent {
        layers.push(recurrent(format!("{prefix}{i}"), lstm, hidden));
    }
    layers.push(LayerSpec {
        name: "fc".into(),
        kind: LayerKind::FullyConnected { out_size: alphabet.len() },
        batchnorm: false,
        activation: Activation::None,
    });
    ModelConfig {
        layers,
        alphabet,
        input_freq_bins: 161,
        seed: 0,
    }
}

impl ModelConfig {
    /// Number of layers `K`; taps are indexed `0..=K` with 0 the input.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Tap names: `input`, then layer names.
    pub fn tap_names(&self) -> Vec<String> {
        std::iter::once("input".to_string())
            .chain(self.layers.iter().map(|l| l.name.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or_else(|| invalid("model has no layers"))?;
        match last.kind {
            LayerKind::FullyConnected { out_size } if out_size == self.alphabet.len() => {}
            _ => {
                return Err(invalid(format!(
                    "last layer must be fully connected with {} outputs",
                    self.alphabet.len()
                )))
            }
        }
        let mut rank = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let r = l.kind.rank();
            if r < rank || (r == 2 && i + 1 != self.layers.len()) {
                return Err(invalid(format!(
                    "layer {} ({}): expected convolutions, then recurrent layers, then one fully-connected output",
                    i + 1,
                    l.name
                )));
            }
            rank = r;
            match l.kind {
                LayerKind::Conv2d {
                    kernel, stride, out_channels, ..
                } => {
                    if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 || out_channels == 0 {
                        return Err(invalid(format!("{}: kernel, stride and channels must be ≥ 1", l.name)));
                    }
                }
                LayerKind::RnnBidir { hidden_size } | LayerKind::LstmBidir { hidden_size } => {
                    if hidden_size == 0 {
                        return Err(invalid(format!("{}: hidden size must be ≥ 1", l.name)));
                    }
                }
                LayerKind::FullyConnected { .. } => {
                    if l.batchnorm {
                        return Err(invalid(format!("{}: batchnorm on the output layer is unsupported", l.name)));
                    }
                }
            }
        }
        self.layer_shapes(64, true)?;
        Ok(())
    }

    /// Output shapes for an input of `t_in` frames, index 0 being the input.
    /// Time strides are forced to 1 when `strides_enabled` is false.
    pub fn layer_shapes(&self, t_in: usize, strides_enabled: bool) -> Result<Vec<LayerShape>> {
        let mut shapes = vec![LayerShape {
            frames: t_in,
            channels: 1,
            bins: self.input_freq_bins,
        }];
        for l in &self.layers {
            let prev = *shapes.last().expect("non-empty");
            let next = match l.kind {
                LayerKind::Conv2d {
                    kernel,
                    stride,
                    padding,
                    out_channels,
                } => {
                    let st = if strides_enabled { stride.0 } else { 1 };
                    LayerShape {
                        frames: conv_output_len(prev.frames, kernel.0, st, padding.0)?,
                        channels: out_channels,
                        bins: conv_output_len(prev.bins, kernel.1, stride.1, padding.1)?,
                    }
                }
                LayerKind::RnnBidir { hidden_size } | LayerKind::LstmBidir { hidden_size } => LayerShape {
                    frames: prev.frames,
                    channels: 1,
                    bins: hidden_size,
                },
                LayerKind::FullyConnected { out_size } => LayerShape {
                    frames: prev.frames,
                    channels: 1,
                    bins: out_size,
                },
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Cumulative time sub-sampling factor of tap `k` and the input-frame
    /// offset of its receptive-field center: output frame `t` is centered on
    /// input frame `t · factor + offset`.
    pub fn time_mapping(&self, k: usize, strides_enabled: bool) -> Result<(usize, usize)> {
        if k > self.layers.len() {
            return Err(invalid(format!("tap {k} outside 0..={}", self.layers.len())));
        }
        let mut factor = 1usize;
        let mut offset = 0isize;
        for l in &self.layers[..k] {
            if let LayerKind::Conv2d {
                kernel, stride, padding, ..
            } = l.kind
            {
                let st = if strides_enabled { stride.0 } else { 1 };
                offset += ((kernel.0 as isize - 1) / 2 - padding.0 as isize) * factor as isize;
                factor *= st;
            }
        }
        Ok((factor, offset.max(0) as usize))
    }
}

/// One learned tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn uniform(name: String, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor { name, shape, data }
    }

    fn filled(name: String, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            name,
            shape,
            data: vec![v; n],
        }
    }
}

/// Batchnorm running statistics for one normalization site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(units: usize) -> Self {
        RunningStats {
            mean: vec![0.0; units],
            var: vec![1.0; units],
        }
    }
}

/// Learned tensors of one layer, in a fixed order per kind:
///
/// * conv: `weight [O, C, kt, kf]`, then `gamma, beta [O]` with batchnorm
///   or `bias [O]` without.
/// * recurrent, per direction (`fwd`, `bwd`): `w_x [G, D]`, `w_h [G, H]`,
///   then `gamma, beta [G]` or `bias [G]`, where `G = H` for the simple
///   cell and `4H` for the LSTM.
/// * fully connected: `weight [O, D]`, `bias [O]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub tensors: Vec<Tensor>,
    /// One entry per batchnorm site (one for conv, two for recurrent).
    pub running: Vec<RunningStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
}

pub const BN_MOMENTUM: f64 = 0.1;

impl TrainedModel {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`, from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shapes = config.layer_shapes(64, true)?;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, l) in config.layers.iter().enumerate() {
            let in_shape = shapes[i];
            let mut tensors = Vec::new();
            let mut running = Vec::new();
            match l.kind {
                LayerKind::Conv2d {
                    kernel, out_channels, ..
                } => {
                    let fan_in = in_shape.channels * kernel.0 * kernel.1;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    tensors.push(Tensor::uniform(
                        "weight".into(),
                        vec![out_channels, in_shape.channels, kernel.0, kernel.1],
                        bound,
                        &mut rng,
                    ));
                    push_norm_or_bias(&mut tensors, &mut running, "", out_channels, l.batchnorm, bound, &mut rng);
                }
                LayerKind::RnnBidir { hidden_size } | LayerKind::LstmBidir { hidden_size } => {
                    let gates = if matches!(l.kind, LayerKind::LstmBidir { .. }) { 4 } else { 1 } * hidden_size;
                    let d = in_shape.width();
                    for dir in ["fwd", "bwd"] {
                        tensors.push(Tensor::uniform(
                            format!("{dir}.w_x"),
                            vec![gates, d],
                            1.0 / (d as f64).sqrt(),
                            &mut rng,
                        ));
                        let bound = 1.0 / (hidden_size as f64).sqrt();
                        tensors.push(Tensor::uniform(format!("{dir}.w_h"), vec![gates, hidden_size], bound, &mut rng));
                        push_norm_or_bias(&mut tensors, &mut running, &format!("{dir}."), gates, l.batchnorm, bound, &mut rng);
                    }
                }
                LayerKind::FullyConnected { out_size } => {
                    let d = in_shape.width();
                    let bound = 1.0 / (d as f64).sqrt();
                    tensors.push(Tensor::uniform("weight".into(), vec![out_size, d], bound, &mut rng));
                    tensors.push(Tensor::uniform("bias".into(), vec![out_size], bound, &mut rng));
                }
            }
            layers.push(LayerParams { tensors, running });
        }
        Ok(TrainedModel { config, layers })
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.tensors).map(|t| t.data.len()).sum()
    }

    /// All tensors in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors.iter_mut())
    }

    /// Folds batch statistics of a training-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, stats) in self.layers.iter_mut().zip(&pass.batch_stats) {
            for (run, s) in layer.running.iter_mut().zip(stats) {
                for (r, m) in run.mean.iter_mut().zip(&s.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in run.var.iter_mut().zip(&s.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
        }
    }

    /// Rounds every parameter and running statistic to `f32`, the precision
    /// checkpoints store.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for t in &mut l.tensors {
                t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
            for r in &mut l.running {
                r.mean.iter_mut().for_each(|v| *v = *v as f32 as f64);
                r.var.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }
}

fn push_norm_or_bias(
    tensors: &mut Vec<Tensor>,
    running: &mut Vec<RunningStats>,
    prefix: &str,
    units: usize,
    batchnorm: bool,
    bound: f64,
    rng: &mut ChaCha8Rng,
) {
    if batchnorm {
        tensors.push(Tensor::filled(format!("{prefix}gamma"), vec![units], 1.0));
        tensors.push(Tensor::filled(format!("{prefix}beta"), vec![units], 0.0));
        running.push(RunningStats::new(units));
    } else {
        tensors.push(Tensor::uniform(format!("{prefix}bias"), vec![units], bound, rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_length_examples() {
        assert_eq!(conv_output_len(100, 11, 2, 5).unwrap(), 50);
        assert_eq!(conv_output_len(161, 41, 2, 0).unwrap(), 61);
        assert_eq!(conv_output_len(61, 21, 1, 0).unwrap(), 41);
        assert!(conv_output_len(3, 11, 1, 0).is_err());
    }

    #[test]
    fn presets_have_expected_stacks() {
        let kinds = |cfg: &ModelConfig| {
            cfg.layers
                .iter()
                .map(|l| match l.kind {
                    LayerKind::Conv2d { .. } => "conv",
                    LayerKind::RnnBidir { .. } => "rnn",
                    LayerKind::LstmBidir { .. } => "lstm",
                    LayerKind::FullyConnected { .. } => "fc",
                })
                .collect::<Vec<_>>()
        };
        let ds2 = preset("ds2").unwrap();
        assert_eq!(kinds(&ds2), [vec!["conv"; 2], vec!["rnn"; 7], vec!["fc"]].concat());
        let light = preset("ds2-light").unwrap();
        assert_eq!(kinds(&light), [vec!["conv"; 2], vec!["lstm"; 5], vec!["fc"]].concat());
        assert!(light.layers[2..7]
            .iter()
            .all(|l| l.kind == LayerKind::LstmBidir { hidden_size: 600 }));
        let mini = preset("ds2-mini").unwrap();
        assert_eq!(kinds(&mini), kinds(&ds2));
        assert_eq!(mini.layers[2].kind, LayerKind::RnnBidir { hidden_size: 64 });
        assert!(preset("ds3").is_err());
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn ds2_tap_widths() {
        let shapes = preset("ds2").unwrap().layer_shapes(100, true).unwrap();
        let widths: Vec<usize> = shapes.iter().map(LayerShape::width).collect();
        assert_eq!(widths, vec![161, 1952, 1312, 1760, 1760, 1760, 1760, 1760, 1760, 1760, 29]);
        let frames: Vec<usize> = shapes.iter().map(|s| s.frames).collect();
        assert_eq!(&frames[..3], &[100, 50, 25]);
        let flat = preset("ds2").unwrap().layer_shapes(100, false).unwrap();
        assert!(flat.iter().all(|s| s.frames == 100));
    }

    #[test]
    fn time_mapping_with_same_padding_has_zero_offset() {
        let cfg = preset("ds2-mini").unwrap();
        assert_eq!(cfg.time_mapping(0, true).unwrap(), (1, 0));
        assert_eq!(cfg.time_mapping(1, true).unwrap(), (2, 0));
        assert_eq!(cfg.time_mapping(5, true).unwrap(), (4, 0));
        assert_eq!(cfg.time_mapping(5, false).unwrap(), (1, 0));
        assert!(cfg.time_mapping(11, true).is_err());
    }

    #[test]
    fn validate_rejects_misordered_layers() {
        let mut cfg = preset("ds2-mini").unwrap();
        cfg.layers.swap(0, 2);
        assert!(cfg.validate().is_err());
        let mut cfg = preset("ds2-mini").unwrap();
        cfg.layers.pop();
        assert!(cfg.validate().is_err());
    }
}
