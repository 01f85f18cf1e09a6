//! JSON persistence for trained networks and training checkpoints.
//!
//! A model file looks like
//! `{"format":"qtmtt-qnetwork","version":1,"feature_dim":61,"layers":[...]}`
//! where each layer carries its `inputs`, `outputs`, `activation`
//! (`"relu"` or `"linear"`), row-major `weights` and `bias`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::QNetwork;
use super::train::{OptimizerState, TrainState};
use super::AgentError;

pub const MODEL_FORMAT: &str = "qtmtt-qnetwork";
pub const CHECKPOINT_FORMAT: &str = "qtmtt-checkpoint";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
  inputs: usize,
  outputs: usize,
  activation: String,
  weights: Vec<f64>,
  bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
  format: String,
  version: u32,
  feature_dim: usize,
  layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
  format: String,
  version: u32,
  epoch: u32,
  optimizer: OptimizerState,
  model: ModelFile,
}

fn to_file(net: &QNetwork) -> ModelFile {
  let n = net.dims().len() - 1;
  let layers = (0..n)
    .map(|l| {
      let (w, b) = net.layer(l);
      LayerFile {
        inputs: net.dims()[l],
        outputs: net.dims()[l + 1],
        activation: if l + 1 == n { "linear" } else { "relu" }.into(),
        weights: w.to_vec(),
        bias: b.to_vec(),
      }
    })
    .collect();
  ModelFile { format: MODEL_FORMAT.into(), version: MODEL_VERSION, feature_dim: net.feature_dim(), layers }
}

fn check_header(format: &str, expected: &str, version: u32) -> Result<(), AgentError> {
  if format != expected {
    return Err(AgentError::Corrupt(format!("format tag {format:?}, expected {expected:?}")));
  }
  if version != MODEL_VERSION {
    return Err(AgentError::Version { found: version, supported: MODEL_VERSION });
  }
  Ok(())
}

fn from_file(m: ModelFile) -> Result<QNetwork, AgentError> {
  check_header(&m.format, MODEL_FORMAT, m.version)?;
  if m.layers.is_empty() {
    return Err(AgentError::Shape("model has no layers".into()));
  }
  let mut dims = vec![m.layers[0].inputs];
  let mut params = Vec::new();
  let n = m.layers.len();
  for (l, layer) in m.layers.into_iter().enumerate() {
    if layer.inputs != *dims.last().unwrap() {
      return Err(AgentError::Shape(format!(
        "layer {l} expects {} inputs after width {}",
        layer.inputs, dims[l]
      )));
    }
    if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
      return Err(AgentError::Shape(format!(
        "layer {l} arrays do not match {}x{}",
        layer.outputs, layer.inputs
      )));
    }
    let want = if l + 1 == n { "linear" } else { "relu" };
    if layer.activation != want {
      return Err(AgentError::Shape(format!(
        "layer {l} activation {:?}, expected {want:?}",
        layer.activation
      )));
    }
    dims.push(layer.outputs);
    params.extend(layer.weights);
    params.extend(layer.bias);
  }
  if dims[0] != m.feature_dim {
    return Err(AgentError::Dimension { expected: m.feature_dim, found: dims[0] });
  }
  if params.iter().any(|p| !p.is_finite()) {
    return Err(AgentError::Corrupt("non-finite parameter".into()));
  }
  QNetwork::from_params(&dims, params)
}

fn parse<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<T, AgentError> {
  serde_json::from_reader(r).map_err(|e| match e.classify() {
    serde_json::error::Category::Io => AgentError::Io(e.into()),
    _ => AgentError::Corrupt(e.to_string()),
  })
}

pub fn write_model(net: &QNetwork, w: impl Write) -> Result<(), AgentError> {
  serde_json::to_writer(w, &to_file(net)).map_err(|e| AgentError::Io(e.into()))
}

pub fn read_model(r: impl Read) -> Result<QNetwork, AgentError> {
  from_file(parse(r)?)
}

pub fn save_model(net: &QNetwork, path: &Path) -> Result<(), AgentError> {
  let mut w = BufWriter::new(File::create(path)?);
  write_model(net, &mut w)?;
  w.flush()?;
  Ok(())
}

/// Loads a model and checks that its input width is `feature_dim`.
pub fn load_model(path: &Path, feature_dim: usize) -> Result<QNetwork, AgentError> {
  let net = read_model(BufReader::new(File::open(path)?))?;
  if net.feature_dim() != feature_dim {
    return Err(AgentError::Dimension { expected: feature_dim, found: net.feature_dim() });
  }
  Ok(net)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), AgentError> {
  let ck = CheckpointFile {
    format: CHECKPOINT_FORMAT.into(),
    version: MODEL_VERSION,
    epoch: state.epoch,
    optimizer: state.optimizer.clone(),
    model: to_file(&state.net),
  };
  let mut w = BufWriter::new(File::create(path)?);
  serde_json::to_writer(&mut w, &ck).map_err(|e| AgentError::Io(e.into()))?;
  w.flush()?;
  Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, AgentError> {
  let ck: CheckpointFile = parse(BufReader::new(File::open(path)?))?;
  check_header(&ck.format, CHECKPOINT_FORMAT, ck.version)?;
  let net = from_file(ck.model)?;
  let n = net.params().len();
  if ck.optimizer.first.len() != n || ck.optimizer.second.len() != n {
    return Err(AgentError::Corrupt("optimizer state does not match the network".into()));
  }
  Ok(TrainState { net, optimizer: ck.optimizer, epoch: ck.epoch })
}
