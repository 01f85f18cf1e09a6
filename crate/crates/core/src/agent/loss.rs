//! Two-level trajectories and the composite hierarchical loss.
//!
//! All costs in a trajectory are normalized by `lambda * area` of the CU
//! they belong to. A sub-CU's value is the minimum Q over its legal modes, and
//! the consistency term converts sub-CU values back to root units with the
//! per-sub area weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{QNetwork, QVector};
use super::AgentError;
use crate::partition::{CuRect, ModeSet, SplitMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubRecord {
  pub state: Vec<f64>,
  pub legal: ModeSet,
  /// Best achievable normalized cost of this sub-CU.
  pub gt_cost: f64,
  /// `sub area / root area`.
  pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
  pub mode: SplitMode,
  /// Whether `mode` is the root's RD-optimal action.
  pub optimal: bool,
  /// Normalized syntax cost of signaling the split at the root.
  pub delta_split: f64,
  pub subs: Vec<SubRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
  pub qp: u8,
  pub frame_id: String,
  pub max_mtt_depth: u8,
  pub root: CuRect,
  pub root_state: Vec<f64>,
  pub root_legal: ModeSet,
  /// Normalized cost of each root action, `None` where the action is illegal.
  pub root_gt: [Option<f64>; 6],
  pub actions: Vec<ActionRecord>,
}

impl Trajectory {
  pub fn state_count(&self) -> usize {
    1 + self.actions.iter().map(|a| a.subs.len()).sum::<usize>()
  }

  pub fn optimal_action(&self) -> Option<SplitMode> {
    let mut best: Option<(SplitMode, f64)> = None;
    for m in SplitMode::ALL {
      if let Some(c) = self.root_gt[m.index()] {
        if best.is_none_or(|(_, b)| c < b) {
          best = Some((m, c));
        }
      }
    }
    best.map(|(m, _)| m)
  }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
  pub alpha1: f64,
  pub alpha2: f64,
  pub alpha3: f64,
}

impl Default for LossWeights {
  fn default() -> Self {
    LossWeights { alpha1: 1.0, alpha2: 1.0, alpha3: 1.0 }
  }
}

impl LossWeights {
  pub fn validate(&self) -> Result<(), AgentError> {
    let a = [self.alpha1, self.alpha2, self.alpha3];
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) || a.iter().all(|v| *v == 0.0) {
      return Err(AgentError::InvalidConfig("loss weights must be non-negative and not all zero".into()));
    }
    Ok(())
  }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
  pub mse1: f64,
  pub mse2: f64,
  pub mse3: f64,
  pub total: f64,
}

impl LossBreakdown {
  fn accumulate(&mut self, o: &LossBreakdown) {
    self.mse1 += o.mse1;
    self.mse2 += o.mse2;
    self.mse3 += o.mse3;
    self.total += o.total;
  }

  fn scaled(mut self, k: f64) -> LossBreakdown {
    self.mse1 *= k;
    self.mse2 *= k;
    self.mse3 *= k;
    self.total *= k;
    self
  }
}

fn masked_argmin(q: &QVector, legal: ModeSet) -> usize {
  let mut best = usize::MAX;
  for m in legal.iter() {
    let i = m.index();
    if best == usize::MAX || q[i] < q[best] {
      best = i;
    }
  }
  best
}

/// Consistency residual between a parent action's Q and its reconstruction
/// from already weighted child values plus the split cost.
pub fn consistency_residual(parent_q: f64, weighted_children: &[f64], delta_split: f64) -> f64 {
  parent_q - (weighted_children.iter().sum::<f64>() + delta_split)
}

/// Loss of one trajectory from network outputs and its gradient with respect
/// to those outputs. `q[0]` is the root; the rest follow the sub records in
/// action order.
pub fn loss_from_outputs(
  t: &Trajectory,
  q: &[QVector],
  w: &LossWeights,
) -> Result<(LossBreakdown, Vec<QVector>), AgentError> {
  assert_eq!(q.len(), t.state_count());
  let n_avail = t.root_gt.iter().filter(|g| g.is_some()).count();
  if n_avail == 0 {
    return Err(AgentError::EmptyTrajectory);
  }
  let mut grad = vec![[0.0; 6]; q.len()];
  let mut out = LossBreakdown::default();

  for (i, gt) in t.root_gt.iter().enumerate() {
    if let Some(gt) = gt {
      let r = q[0][i] - gt;
      out.mse1 += r * r;
      grad[0][i] += w.alpha1 * 2.0 * r / n_avail as f64;
    }
  }
  out.mse1 /= n_avail as f64;

  let n_subs: usize = t.actions.iter().map(|a| a.subs.len()).sum();
  let n_actions = t.actions.iter().filter(|a| !a.subs.is_empty()).count();
  let mut row = 1;
  for action in &t.actions {
    let mut weighted = Vec::with_capacity(action.subs.len());
    let mut picks = Vec::with_capacity(action.subs.len());
    for sub in &action.subs {
      let k = masked_argmin(&q[row], sub.legal);
      let v = q[row][k];
      let r = v - sub.gt_cost;
      out.mse2 += r * r;
      grad[row][k] += w.alpha2 * 2.0 * r / n_subs as f64;
      weighted.push(sub.weight * v);
      picks.push((row, k, sub.weight));
      row += 1;
    }
    if action.subs.is_empty() {
      continue;
    }
    let a = action.mode.index();
    let r = consistency_residual(q[0][a], &weighted, action.delta_split);
    out.mse3 += r * r;
    let g = w.alpha3 * 2.0 * r / n_actions as f64;
    grad[0][a] += g;
    for (row, k, weight) in picks {
      grad[row][k] -= g * weight;
    }
  }
  if n_subs > 0 {
    out.mse2 /= n_subs as f64;
  }
  if n_actions > 0 {
    out.mse3 /= n_actions as f64;
  }
  out.total = w.alpha1 * out.mse1 + w.alpha2 * out.mse2 + w.alpha3 * out.mse3;
  Ok((out, grad))
}

fn gather_states(batch: &[Trajectory], dim: usize) -> Result<Vec<f64>, AgentError> {
  let mut x = Vec::new();
  for t in batch {
    let states =
      std::iter::once(&t.root_state).chain(t.actions.iter().flat_map(|a| a.subs.iter().map(|s| &s.state)));
    for s in states {
      if s.len() != dim {
        return Err(AgentError::Dimension { expected: dim, found: s.len() });
      }
      x.extend_from_slice(s);
    }
  }
  Ok(x)
}

/// Composite loss of a single trajectory.
pub fn composite_loss(net: &QNetwork, t: &Trajectory, w: &LossWeights) -> Result<LossBreakdown, AgentError> {
  let x = gather_states(std::slice::from_ref(t), net.feature_dim())?;
  let acts = net.forward(&x, t.state_count())?;
  let q: Vec<QVector> = (0..t.state_count()).map(|r| acts.q(r)).collect();
  Ok(loss_from_outputs(t, &q, w)?.0)
}

/// Trajectories per gradient chunk. Chunks are reduced in order, so results
/// do not depend on whether they run in parallel.
const CHUNK: usize = 32;

fn chunk_gradient(
  net: &QNetwork,
  chunk: &[Trajectory],
  w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), AgentError> {
  let x = gather_states(chunk, net.feature_dim())?;
  let rows: usize = chunk.iter().map(Trajectory::state_count).sum();
  let acts = net.forward(&x, rows)?;
  let mut d_out = vec![0.0; rows * 6];
  let mut total = LossBreakdown::default();
  let mut row = 0;
  for t in chunk {
    let n = t.state_count();
    let q: Vec<QVector> = (row..row + n).map(|r| acts.q(r)).collect();
    let (l, g) = loss_from_outputs(t, &q, w)?;
    total.accumulate(&l);
    for (k, gq) in g.iter().enumerate() {
      d_out[(row + k) * 6..(row + k) * 6 + 6].copy_from_slice(gq);
    }
    row += n;
  }
  let mut grad = vec![0.0; net.params().len()];
  net.backward(&acts, &d_out, &mut grad);
  Ok((total, grad))
}

/// Mean loss over `batch` and its parameter gradient.
pub fn loss_gradient(
  net: &QNetwork,
  batch: &[Trajectory],
  w: &LossWeights,
  parallel: bool,
) -> Result<(LossBreakdown, Vec<f64>), AgentError> {
  if batch.is_empty() {
    return Err(AgentError::InvalidConfig("empty batch".into()));
  }
  let parts: Vec<_> = if parallel {
    batch.par_chunks(CHUNK).map(|c| chunk_gradient(net, c, w)).collect()
  } else {
    batch.chunks(CHUNK).map(|c| chunk_gradient(net, c, w)).collect()
  };
  let mut loss = LossBreakdown::default();
  let mut grad = vec![0.0; net.params().len()];
  for p in parts {
    let (l, g) = p?;
    loss.accumulate(&l);
    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
  }
  let k = 1.0 / batch.len() as f64;
  grad.iter_mut().for_each(|g| *g *= k);
  Ok((loss.scaled(k), grad))
}

/// Mean loss over a data set without gradients.
pub fn mean_loss(net: &QNetwork, data: &[Trajectory], w: &LossWeights) -> Result<LossBreakdown, AgentError> {
  let mut total = LossBreakdown::default();
  for t in data {
    total.accumulate(&composite_loss(net, t, w)?);
  }
  Ok(total.scaled(1.0 / data.len().max(1) as f64))
}
