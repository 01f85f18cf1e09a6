//! Mini-batch training of the Q-network on collected trajectories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_gradient, LossBreakdown, LossWeights, Trajectory};
use super::network::QNetwork;
use super::AgentError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
  Momentum { momentum: f64 },
  Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
  pub fn adam() -> OptimizerKind {
    OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
  }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
  pub epochs: u32,
  pub batch_size: usize,
  pub learning_rate: f64,
  /// Multiplies the learning rate after every epoch.
  pub lr_decay: f64,
  pub optimizer: OptimizerKind,
  pub weights: LossWeights,
  pub seed: u64,
  pub parallel: bool,
}

impl Default for TrainConfig {
  fn default() -> Self {
    TrainConfig {
      epochs: 150,
      batch_size: 256,
      learning_rate: 5e-4,
      lr_decay: 0.98,
      optimizer: OptimizerKind::adam(),
      weights: LossWeights::default(),
      seed: 0,
      parallel: false,
    }
  }
}

/// Optimizer moments and step counter; checkpointed with the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
  pub step: u64,
  pub first: Vec<f64>,
  pub second: Vec<f64>,
}

impl OptimizerState {
  pub fn new(params: usize) -> OptimizerState {
    OptimizerState { step: 0, first: vec![0.0; params], second: vec![0.0; params] }
  }

  pub fn apply(&mut self, kind: &OptimizerKind, lr: f64, params: &mut [f64], grad: &[f64]) {
    self.step += 1;
    match *kind {
      OptimizerKind::Momentum { momentum } => {
        for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grad) {
          *v = momentum * *v + g;
          *p -= lr * *v;
        }
      }
      OptimizerKind::Adam { beta1, beta2, eps } => {
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, m), v), g) in params.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(grad) {
          *m = beta1 * *m + (1.0 - beta1) * g;
          *v = beta2 * *v + (1.0 - beta2) * g * g;
          *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
      }
    }
  }
}

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
  pub net: QNetwork,
  pub optimizer: OptimizerState,
  pub epoch: u32,
}

impl TrainState {
  pub fn new(net: QNetwork) -> TrainState {
    let n = net.params().len();
    TrainState { net, optimizer: OptimizerState::new(n), epoch: 0 }
  }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
  pub step: u64,
  pub epoch: u32,
  pub loss: LossBreakdown,
}

/// Runs epochs until `cfg.epochs` have completed in total. The shuffle of
/// each epoch depends only on `(cfg.seed, epoch)`, so a resumed run
/// continues the same sequence. `on_epoch` sees the state after each epoch.
pub fn train(
  data: &[Trajectory],
  state: &mut TrainState,
  cfg: &TrainConfig,
  mut on_epoch: impl FnMut(&TrainState, &[LossRecord]) -> Result<(), AgentError>,
) -> Result<Vec<LossRecord>, AgentError> {
  if data.is_empty() {
    return Err(AgentError::InvalidConfig("no trajectories to train on".into()));
  }
  if cfg.batch_size == 0 {
    return Err(AgentError::InvalidConfig("batch size must be positive".into()));
  }
  cfg.weights.validate()?;
  let mut history = Vec::new();
  let mut order: Vec<usize> = (0..data.len()).collect();
  while state.epoch < cfg.epochs {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(state.epoch) << 32));
    order.sort_unstable();
    order.shuffle(&mut rng);
    let lr = cfg.learning_rate * cfg.lr_decay.powi(state.epoch as i32);
    let start = history.len();
    for idx in order.chunks(cfg.batch_size) {
      let batch: Vec<Trajectory> = idx.iter().map(|&i| data[i].clone()).collect();
      let (loss, grad) = loss_gradient(&state.net, &batch, &cfg.weights, cfg.parallel)?;
      if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(AgentError::NonFinite { step: state.optimizer.step, loss: loss.total });
      }
      state.optimizer.apply(&cfg.optimizer, lr, state.net.params_mut(), &grad);
      history.push(LossRecord { step: state.optimizer.step, epoch: state.epoch, loss });
    }
    state.epoch += 1;
    on_epoch(state, &history[start..])?;
  }
  Ok(history)
}
