//! Learned split-mode selection: network, loss, data collection, training
//! and model files.

pub mod collect;
pub mod loss;
pub mod model_io;
pub mod network;
pub mod selector;
pub mod train;

pub use collect::{collect_trajectories, expected_records, CollectConfig, ROOT_SIDE};
pub use loss::{
  composite_loss, consistency_residual, loss_gradient, mean_loss, ActionRecord, LossBreakdown, LossWeights,
  SubRecord, Trajectory,
};
pub use model_io::{load_checkpoint, load_model, read_model, save_checkpoint, save_model, write_model};
pub use network::{QNetwork, QVector, DEFAULT_HIDDEN};
pub use selector::{select_top_n, AgentSelector};
pub use train::{train, LossRecord, OptimizerKind, OptimizerState, TrainConfig, TrainState};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
  #[error("state has {found} features, expected {expected}")]
  Dimension { expected: usize, found: usize },
  #[error("bad network shape: {0}")]
  Shape(String),
  #[error("trajectory has no recorded actions")]
  EmptyTrajectory,
  #[error("invalid configuration: {0}")]
  InvalidConfig(String),
  #[error("non-finite loss {loss} at step {step}")]
  NonFinite { step: u64, loss: f64 },
  #[error("unsupported format version {found} (supported: {supported})")]
  Version { found: u32, supported: u32 },
  #[error("corrupt file: {0}")]
  Corrupt(String),
  #[error(transparent)]
  Io(#[from] std::io::Error),
}
