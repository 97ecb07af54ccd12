use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_global_norm, AdamState, EpochLog, Selection, TrainConfig, TrainLog};
use crate::acoustic::{holdout_mask, Corpus};
use crate::ctc::{ctc_loss, ctc_loss_and_grad, min_frames};
use crate::error::{invalid, Error, Result};
use crate::model::{ForwardOptions, ModelConfig, TrainedModel};
use crate::par;
use crate::tensor::Matrix;

/// An utterance that fits its model output, with encoded transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsrExample {
    pub index: usize,
    pub labels: Vec<usize>,
}

/// Encodes every transcript and drops utterances whose labels need more
/// frames than the strided model emits. Returns the kept examples and the
/// number dropped.
pub fn prepare_asr_examples(corpus: &Corpus, config: &ModelConfig) -> Result<(Vec<AsrExample>, usize)> {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for (index, u) in corpus.utterances.iter().enumerate() {
        let labels = config.alphabet.encode(&u.transcript)?;
        let frames = config
            .layer_shapes(u.num_frames(), true)
            .map(|s| s.last().expect("output shape").frames)
            .unwrap_or(0);
        if labels.is_empty() || min_frames(&labels) > frames {
            dropped += 1;
        } else {
            kept.push(AsrExample { index, labels });
        }
    }
    if dropped > 0 {
        warn!("dropped {dropped} utterances whose transcripts do not fit the model output");
    }
    Ok((kept, dropped))
}

fn mean_eval_loss(model: &TrainedModel, corpus: &Corpus, examples: &[AsrExample]) -> Result<f64> {
    let losses = par::map(examples, |e| {
        let lp = model.log_probs(&corpus.utterances[e.index].spectrogram.frames, true)?;
        ctc_loss(&lp, &e.labels)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as f64)
}

/// Trains the acoustic model with CTC and Adam on mean per-utterance
/// batch losses. `config.dev_fraction` of the utterances is held out for
/// model selection; epoch 0 of the log is the untrained model.
pub fn train_asr(corpus: &Corpus, model_config: ModelConfig, cfg: &TrainConfig) -> Result<(TrainedModel, TrainLog)> {
    cfg.validate()?;
    if corpus.utterances.is_empty() {
        return Err(Error::EmptyInput("corpus has no utterances".into()));
    }
    let mut model = TrainedModel::init(model_config)?;
    let (examples, dropped) = prepare_asr_examples(corpus, &model.config)?;
    if examples.is_empty() {
        return Err(invalid("no utterance has a transcript that fits the model output"));
    }
    let mask = holdout_mask(examples.len(), cfg.dev_fraction);
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (e, is_dev) in examples.into_iter().zip(mask) {
        if is_dev {
            dev.push(e);
        } else {
            train.push(e);
        }
    }
    if dev.is_empty() {
        dev = train.clone();
    }

    let mut adam = AdamState::new(cfg.adam, model.tensors().map(|t| t.data.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog {
        epochs: vec![EpochLog {
            epoch: 0,
            train_loss: mean_eval_loss(&model, corpus, &train)?,
            dev_loss: mean_eval_loss(&model, corpus, &dev)?,
            dev_accuracy: None,
        }],
        selected_epoch: 0,
        dropped,
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let opts = ForwardOptions::train();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Matrix> = batch
                .iter()
                .map(|&i| &corpus.utterances[train[i].index].spectrogram.frames)
                .collect();
            let pass = model.forward(&inputs, &opts)?;
            let scale = 1.0 / batch.len() as f64;
            let mut d_logits = Vec::with_capacity(batch.len());
            for (lp, &i) in pass.log_probs.iter().zip(batch) {
                let (loss, mut g) = ctc_loss_and_grad(lp, &train[i].labels)?;
                loss_sum += loss;
                g.data.iter_mut().for_each(|v| *v *= scale);
                d_logits.push(g);
            }
            let mut grads = model.backward(&pass, &d_logits)?;
            let mut blocks: Vec<&mut [f64]> = grads.layers.iter_mut().flatten().map(|g| g.as_mut_slice()).collect();
            clip_global_norm(&mut blocks, cfg.max_grad_norm);
            let grad_refs: Vec<&[f64]> = blocks.iter().map(|g| &**g).collect();
            let mut params: Vec<&mut [f64]> = model.tensors_mut().map(|t| t.data.as_mut_slice()).collect();
            adam.step(&mut params, &grad_refs)?;
            model.update_running_stats(&pass);
        }
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_loss: mean_eval_loss(&model, corpus, &dev)?,
            dev_accuracy: None,
        };
        info!("asr epoch {epoch}: train {:.4} dev {:.4}", row.train_loss, row.dev_loss);
        if !row.train_loss.is_finite() {
            return Err(invalid(format!("training diverged at epoch {epoch}")));
        }
        let improved = row.dev_loss < log.epochs[log.selected_epoch].dev_loss;
        log.epochs.push(row);
        match cfg.selection {
            Selection::BestDevLoss if improved => {
                log.selected_epoch = epoch;
                best = model.clone();
            }
            Selection::Last => {
                log.selected_epoch = epoch;
            }
            _ => {}
        }
    }
    if cfg.selection == Selection::Last {
        best = model;
    }
    Ok((best, log))
}
