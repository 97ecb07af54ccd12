#![allow(dead_code)]

use ctcprobe::alphabet::Alphabet;
use ctcprobe::ctc;
use ctcprobe::model::{Activation, ForwardOptions, LayerKind, LayerSpec, ModelConfig, TrainedModel};
use ctcprobe::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 1 conv + 1 bidirectional RNN + 1 bidirectional LSTM + fc, 16 input bins.
pub fn gradcheck_config(seed: u64) -> ModelConfig {
    let layer = |name: &str, kind, batchnorm, activation| LayerSpec {
        name: name.into(),
        kind,
        batchnorm,
        activation,
    };
    let alphabet = Alphabet::new("abc".chars().collect()).unwrap();
    ModelConfig {
        layers: vec![
            layer(
                "cnn1",
                LayerKind::Conv2d {
                    kernel: (3, 5),
                    stride: (2, 2),
                    padding: (1, 0),
                    out_channels: 2,
                },
                true,
                Activation::Relu,
            ),
            layer("rnn1", LayerKind::RnnBidir { hidden_size: 4 }, true, Activation::Relu),
            layer("lstm1", LayerKind::LstmBidir { hidden_size: 3 }, true, Activation::Relu),
            layer("fc", LayerKind::FullyConnected { out_size: alphabet.len() }, false, Activation::None),
        ],
        alphabet,
        input_freq_bins: 16,
        seed,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Summed CTC loss of a training-mode pass.
pub fn batch_loss(model: &TrainedModel, xs: &[&Matrix], labels: &[Vec<usize>], strides: bool) -> f64 {
    let opts = ForwardOptions {
        strides_enabled: strides,
        ..ForwardOptions::train()
    };
    let pass = model.forward(xs, &ForwardOptions { keep_cache: false, ..opts }).unwrap();
    pass.log_probs
        .iter()
        .zip(labels)
        .map(|(lp, l)| ctc::ctc_loss(lp, l).unwrap())
        .sum()
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter.
pub fn model_gradcheck(seed: u64, h: f64) -> f64 {
    let mut r = rng(seed);
    let model = TrainedModel::init(gradcheck_config(seed)).unwrap();
    let xs: Vec<Matrix> = (0..2).map(|_| random_matrix(&mut r, 12, 16)).collect();
    let labels = vec![vec![1, 2], vec![3, 3, 1]];
    let refs: Vec<&Matrix> = xs.iter().collect();

    let pass = model.forward(&refs, &ForwardOptions::train()).unwrap();
    let d: Vec<Matrix> = pass
        .log_probs
        .iter()
        .zip(&labels)
        .map(|(lp, l)| ctc::ctc_grad(lp, l).unwrap())
        .collect();
    let grads = model.backward(&pass, &d).unwrap();

    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for (li, layer) in model.layers.iter().enumerate() {
        for (ti, t) in layer.tensors.iter().enumerate() {
            for e in 0..t.data.len() {
                let orig = t.data[e];
                m.layers[li].tensors[ti].data[e] = orig + h;
                let up = batch_loss(&m, &refs, &labels, true);
                m.layers[li].tensors[ti].data[e] = orig - h;
                let down = batch_loss(&m, &refs, &labels, true);
                m.layers[li].tensors[ti].data[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.layers[li][ti][e];
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
    }
    worst
}

/// `|a − b| / max(|a|, |b|, 1e-3)`: relative, with a floor so that
/// near-zero gradients are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Probability of `labels` by recursive enumeration of every path, with its
/// own collapse. Kept separate from the library's brute force on purpose.
pub fn oracle_ctc_prob(probs: &Matrix, labels: &[usize]) -> f64 {
    fn walk(probs: &Matrix, labels: &[usize], t: usize, prev: usize, emitted: &mut Vec<usize>, mass: f64) -> f64 {
        if t == probs.rows {
            return if emitted == labels { mass } else { 0.0 };
        }
        let mut total = 0.0;
        for s in 0..probs.cols {
            let pushed = s != 0 && s != prev;
            if pushed {
                emitted.push(s);
            }
            // prune prefixes that already disagree with the target
            if emitted.len() <= labels.len() && emitted[..] == labels[..emitted.len()] {
                total += walk(probs, labels, t + 1, s, emitted, mass * probs.get(t, s));
            }
            if pushed {
                emitted.pop();
            }
        }
        total
    }
    walk(probs, labels, 0, 0, &mut Vec::new(), 1.0)
}

/// Row-softmax of uniform(-scale, scale) logits.
pub fn random_probs(rng: &mut ChaCha8Rng, t: usize, s: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(t, s);
    for r in 0..t {
        let row = m.row_mut(r);
        row.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        ctcprobe::tensor::softmax_in_place(row);
    }
    m
}

pub fn to_log(p: &Matrix) -> Matrix {
    Matrix::from_vec(p.rows, p.cols, p.data.iter().map(|v| v.ln()).collect())
}

/// A label sequence of length `1..=max_len` over non-blank symbols that fits
/// in `t` frames.
pub fn random_labels(rng: &mut ChaCha8Rng, t: usize, s: usize, max_len: usize) -> Vec<usize> {
    loop {
        let len = rng.random_range(1..=max_len);
        let l: Vec<usize> = (0..len).map(|_| rng.random_range(1..s)).collect();
        if ctc::min_frames(&l) <= t {
            return l;
        }
    }
}
