//! Fully-connected Q-network with rectifier hidden layers and a linear
//! six-way output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AgentError;
use crate::partition::SplitMode;

pub type QVector = [f64; 6];

/// Default hidden widths.
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 128];

/// Parameters live in one flat vector; each layer stores its `outputs x
/// inputs` weights row-major followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
  dims: Vec<usize>,
  params: Vec<f64>,
}

/// Activations of every layer for a batch, input first.
pub struct Activations {
  batch: usize,
  layers: Vec<Vec<f64>>,
}

impl Activations {
  pub fn output(&self) -> &[f64] {
    self.layers.last().unwrap()
  }

  pub fn q(&self, row: usize) -> QVector {
    let out = self.output();
    out[row * 6..row * 6 + 6].try_into().unwrap()
  }

  pub fn batch(&self) -> usize {
    self.batch
  }
}

impl QNetwork {
  /// He-uniform initialization from `seed`; `dims` runs input to output and
  /// must end in 6.
  pub fn new(dims: &[usize], seed: u64) -> Result<QNetwork, AgentError> {
    let mut net = QNetwork::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    let shapes: Vec<_> = net.layer_shapes().collect();
    for (i, o) in shapes {
      let bound = (6.0 / i as f64).sqrt();
      for w in &mut net.params[offset..offset + i * o] {
        *w = rng.gen_range(-bound..bound);
      }
      offset += i * o + o;
    }
    Ok(net)
  }

  pub fn zeros(dims: &[usize]) -> Result<QNetwork, AgentError> {
    if dims.len() < 2 || dims.contains(&0) {
      return Err(AgentError::Shape(format!("bad layer widths {dims:?}")));
    }
    if *dims.last().unwrap() != SplitMode::ALL.len() {
      return Err(AgentError::Shape("output width must be 6".into()));
    }
    let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    Ok(QNetwork { dims: dims.to_vec(), params: vec![0.0; n] })
  }

  /// Rebuilds a network from explicit per-layer parameters.
  pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<QNetwork, AgentError> {
    let mut net = QNetwork::zeros(dims)?;
    if params.len() != net.params.len() {
      return Err(AgentError::Shape(format!(
        "expected {} parameters, got {}",
        net.params.len(),
        params.len()
      )));
    }
    net.params = params;
    Ok(net)
  }

  pub fn dims(&self) -> &[usize] {
    &self.dims
  }

  pub fn feature_dim(&self) -> usize {
    self.dims[0]
  }

  pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
    self.dims.windows(2).map(|w| (w[0], w[1]))
  }

  pub fn params(&self) -> &[f64] {
    &self.params
  }

  pub fn params_mut(&mut self) -> &mut [f64] {
    &mut self.params
  }

  /// `(weights, bias)` slices of layer `l`.
  pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
    let off = self.layer_offset(l);
    let (i, o) = (self.dims[l], self.dims[l + 1]);
    (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
  }

  fn layer_offset(&self, l: usize) -> usize {
    self.dims.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
  }

  pub fn q_values(&self, state: &[f64]) -> Result<QVector, AgentError> {
    Ok(self.forward(state, 1)?.q(0))
  }

  /// Forward pass over `batch` row-major states.
  pub fn forward(&self, states: &[f64], batch: usize) -> Result<Activations, AgentError> {
    let d = self.feature_dim();
    if states.len() != d * batch {
      return Err(AgentError::Dimension { expected: d, found: states.len().checked_div(batch).unwrap_or(0) });
    }
    let mut layers = Vec::with_capacity(self.dims.len());
    layers.push(states.to_vec());
    let last = self.dims.len() - 2;
    for l in 0..=last {
      let (inp, out) = (self.dims[l], self.dims[l + 1]);
      let (w, b) = self.layer(l);
      let x = layers.last().unwrap();
      let mut y = vec![0.0; batch * out];
      for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(b);
      }
      // y = x * w^T + y
      unsafe {
        matrixmultiply::dgemm(
          batch,
          inp,
          out,
          1.0,
          x.as_ptr(),
          inp as isize,
          1,
          w.as_ptr(),
          1,
          inp as isize,
          1.0,
          y.as_mut_ptr(),
          out as isize,
          1,
        );
      }
      if l != last {
        y.iter_mut().for_each(|v| *v = v.max(0.0));
      }
      layers.push(y);
    }
    Ok(Activations { batch, layers })
  }

  /// Accumulates into `grad` the parameter gradient given `d_out`, the loss
  /// gradient with respect to the network outputs (`batch x 6`).
  pub fn backward(&self, acts: &Activations, d_out: &[f64], grad: &mut [f64]) {
    assert_eq!(grad.len(), self.params.len());
    let batch = acts.batch;
    let mut delta = d_out.to_vec();
    for l in (0..self.dims.len() - 1).rev() {
      let (inp, out) = (self.dims[l], self.dims[l + 1]);
      let off = self.layer_offset(l);
      let x = &acts.layers[l];
      let (gw, gb) = grad[off..off + inp * out + out].split_at_mut(inp * out);
      // gw += delta^T * x
      unsafe {
        matrixmultiply::dgemm(
          out,
          batch,
          inp,
          1.0,
          delta.as_ptr(),
          1,
          out as isize,
          x.as_ptr(),
          inp as isize,
          1,
          1.0,
          gw.as_mut_ptr(),
          inp as isize,
          1,
        );
      }
      for row in delta.chunks_exact(out) {
        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
      }
      if l == 0 {
        break;
      }
      let (w, _) = self.layer(l);
      let mut dx = vec![0.0; batch * inp];
      // dx = delta * w
      unsafe {
        matrixmultiply::dgemm(
          batch,
          out,
          inp,
          1.0,
          delta.as_ptr(),
          out as isize,
          1,
          w.as_ptr(),
          inp as isize,
          1,
          0.0,
          dx.as_mut_ptr(),
          inp as isize,
          1,
        );
      }
      // rectifier derivative, taken from the post-activation values
      for (d, a) in dx.iter_mut().zip(&acts.layers[l]) {
        if *a <= 0.0 {
          *d = 0.0;
        }
      }
      delta = dx;
    }
  }
}
