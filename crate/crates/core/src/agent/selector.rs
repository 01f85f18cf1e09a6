use std::sync::Arc;

use super::network::{QNetwork, QVector};
use crate::partition::{CuRect, ModeSet, SplitMode};
use crate::search::{is_pruned_size, SelectorContext, SplitSelector};

/// Keeps the `n` legal modes with the lowest Q (ties by mode index), then
/// drops kept modes whose normalized gap to the minimum,
/// `(q - q_min) / (q_max - q_min)` over the legal range, exceeds `threshold`.
/// The argmin and, when legal, NS are always returned.
pub fn select_top_n(q: &QVector, legal: ModeSet, n: usize, threshold: f64) -> ModeSet {
  let mut ranked: Vec<SplitMode> = legal.iter().collect();
  if ranked.is_empty() {
    return ModeSet::only(SplitMode::Ns);
  }
  ranked.sort_by(|a, b| q[a.index()].total_cmp(&q[b.index()]).then(a.index().cmp(&b.index())));
  let q_min = q[ranked[0].index()];
  let q_max = ranked.iter().map(|m| q[m.index()]).fold(f64::NEG_INFINITY, f64::max);
  let range = q_max - q_min;
  let mut out = ModeSet::only(ranked[0]);
  for &m in ranked.iter().take(n.max(1)).skip(1) {
    if threshold < 1.0 && range > 0.0 && (q[m.index()] - q_min) / range > threshold {
      continue;
    }
    out.insert(m);
  }
  if legal.contains(SplitMode::Ns) {
    out.insert(SplitMode::Ns);
  }
  out
}

/// Q-network driven pruning on the supported CU sizes; other sizes fall back
/// to every legal mode.
#[derive(Clone, Debug)]
pub struct AgentSelector {
  net: Arc<QNetwork>,
  pub n: usize,
  pub threshold: f64,
}

impl AgentSelector {
  pub fn new(net: Arc<QNetwork>, n: usize, threshold: f64) -> AgentSelector {
    AgentSelector { net, n, threshold }
  }
}

impl SplitSelector for AgentSelector {
  fn wants_state(&self, cu: &CuRect) -> bool {
    is_pruned_size(cu)
  }

  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    match ctx.state {
      Some(state) if is_pruned_size(ctx.cu) => {
        let q = self.net.q_values(state).expect("state dimension checked at model load");
        select_top_n(&q, ctx.legal, self.n, self.threshold)
      }
      _ => ctx.legal,
    }
  }
}
