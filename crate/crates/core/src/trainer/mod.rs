//! Adam, the CTC training loop for the acoustic model and the probe
//! training loop, both with best-dev-loss model selection.

mod asr;
mod probe;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use asr::{prepare_asr_examples, train_asr, AsrExample};
pub use probe::train_probe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = block_sizes.into_iter().collect();
        AdamState {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every block; `params` and `grads` follow the block
    /// order given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "Adam tracks {} blocks, got {} parameter and {} gradient blocks",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::ShapeMismatch(format!("Adam block {i} size mismatch")));
            }
        }
        self.t += 1;
        let AdamConfig { alpha, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-block convenience form of [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.step(&mut [params], &[grads])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    BestDevLoss,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub selection: Selection,
    pub adam: AdamConfig,
    /// Rescale the whole gradient to at most this L2 norm.
    pub max_grad_norm: Option<f64>,
    /// Share of utterances held out for model selection when no dev set is
    /// given.
    pub dev_fraction: f64,
}

impl TrainConfig {
    pub fn probe_default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 30,
            seed: 0,
            shuffle: true,
            selection: Selection::BestDevLoss,
            adam: AdamConfig::default(),
            max_grad_norm: None,
            dev_fraction: 0.1,
        }
    }

    pub fn asr_default() -> Self {
        TrainConfig {
            epochs: 10,
            max_grad_norm: Some(400.0),
            ..Self::probe_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(invalid("dev_fraction must be in [0, 1)"));
        }
        if self.max_grad_norm.is_some_and(|n| n.is_nan() || n <= 0.0) {
            return Err(invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::probe_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: Option<f64>,
}

/// Per-epoch losses; epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub selected_epoch: usize,
    /// Utterances dropped because their transcript cannot fit the output.
    pub dropped: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let with_acc = self.epochs.iter().any(|e| e.dev_accuracy.is_some());
        let mut s = String::from("epoch,train_loss,dev_loss");
        if with_acc {
            s.push_str(",dev_accuracy");
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}", e.epoch, e.train_loss, e.dev_loss));
            if with_acc {
                s.push_str(&format!(",{}", e.dev_accuracy.map_or(String::new(), |a| a.to_string())));
            }
            s.push('\n');
        }
        s
    }

    pub fn selected(&self) -> &EpochLog {
        &self.epochs[self.selected_epoch]
    }

    /// Epoch with the smallest dev loss; earliest on ties.
    pub fn argmin_dev(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.epochs.iter().enumerate() {
            if e.dev_loss < self.epochs[best].dev_loss {
                best = i;
            }
        }
        self.epochs[best].epoch
    }
}

/// Global-norm clipping; returns the norm before clipping.
pub(crate) fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: Option<f64>) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if let Some(max) = max_norm {
        if norm > max {
            let s = max / norm;
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut st = AdamState::new(AdamConfig::default(), [3]);
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_alpha() {
        let mut st = AdamState::new(AdamConfig::default(), [1]);
        let mut p = vec![1.0];
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        // m̂ = 1, v̂ = 1: step α / (1 + ε)
        assert!((p[0] - (1.0 - 0.001 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), [2]);
        let mut p = vec![0.0; 3];
        assert!(adam_step(&mut p, &[0.0; 3], &mut st).is_err());
    }

    #[test]
    fn train_config_rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::probe_default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_global_norm(&mut [&mut a, &mut b], Some(1.0));
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
    }
}
