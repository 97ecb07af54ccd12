use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_global_norm, AdamState, EpochLog, Selection, TrainLog};
use crate::error::{Error, Result};
use crate::probing::{FrameDataset, ProbeConfig, TrainedProbe};
use crate::tensor::Matrix;

fn gather(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), x.cols);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(r));
    }
    out
}

/// Trains a probe on `train`, selecting parameters by `dev` cross-entropy.
/// Epoch 0 of the log is the freshly initialized probe.
pub fn train_probe(train: &FrameDataset, dev: &FrameDataset, cfg: &ProbeConfig) -> Result<(TrainedProbe, TrainLog)> {
    let tc = &cfg.train;
    tc.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyInput("probe training needs train and dev frames".into()));
    }
    if train.dim() != dev.dim() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} features, dev has {}",
            train.dim(),
            dev.dim()
        )));
    }
    if train.label_names != dev.label_names {
        return Err(Error::ShapeMismatch("train and dev label sets differ".into()));
    }
    let mut probe = TrainedProbe::init(train.dim(), train.label_names.clone(), cfg, tc.seed)?;
    if cfg.standardize {
        probe.fit_standardizer(&train.vectors);
    }
    let mut adam = AdamState::new(
        tc.adam,
        probe.layers.iter().flat_map(|l| [l.weight.len(), l.bias.len()]),
    );
    // separate streams for shuffling and dropout
    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_d40f);

    let (train_loss0, _) = probe.loss_and_accuracy(&train.vectors, &train.labels)?;
    let (dev_loss0, dev_acc0) = probe.loss_and_accuracy(&dev.vectors, &dev.labels)?;
    let mut log = TrainLog {
        epochs: vec![EpochLog {
            epoch: 0,
            train_loss: train_loss0,
            dev_loss: dev_loss0,
            dev_accuracy: Some(dev_acc0),
        }],
        selected_epoch: 0,
        dropped: 0,
    };
    let mut best = probe.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=tc.epochs {
        if tc.shuffle {
            order.shuffle(&mut order_rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let x = gather(&train.vectors, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let tr = probe.trace(&x, Some(&mut dropout_rng))?;
            let (loss, mut grads) = probe.loss_and_grads(&tr, &labels);
            loss_sum += loss * batch.len() as f64;
            let mut blocks: Vec<&mut [f64]> = grads
                .iter_mut()
                .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
                .collect();
            clip_global_norm(&mut blocks, tc.max_grad_norm);
            let grad_refs: Vec<&[f64]> = blocks.iter().map(|g| &**g).collect();
            let mut params: Vec<&mut [f64]> = probe
                .layers
                .iter_mut()
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect();
            adam.step(&mut params, &grad_refs)?;
        }
        let (dev_loss, dev_acc) = probe.loss_and_accuracy(&dev.vectors, &dev.labels)?;
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_loss,
            dev_accuracy: Some(dev_acc),
        };
        debug!("probe epoch {epoch}: train {:.4} dev {:.4} acc {:.4}", row.train_loss, dev_loss, dev_acc);
        let improved = row.dev_loss < log.epochs[log.selected_epoch].dev_loss;
        log.epochs.push(row);
        match tc.selection {
            Selection::BestDevLoss if improved => {
                log.selected_epoch = epoch;
                best = probe.clone();
            }
            Selection::Last => log.selected_epoch = epoch,
            _ => {}
        }
    }
    if tc.selection == Selection::Last {
        best = probe;
    }
    Ok((best, log))
}
