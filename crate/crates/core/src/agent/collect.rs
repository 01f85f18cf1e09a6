//! Two-level trajectory collection with epsilon-greedy sub-record sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{ActionRecord, SubRecord, Trajectory};
use super::network::QNetwork;
use super::AgentError;
use crate::features::{extract_state, ParentInfo, SplitSeries, StateInputs};
use crate::partition::{legal_splits, split_children, CuRect, PartitionConstraints, SplitMode};
use crate::rd::{split_signal_cost, Frame, LeafCost};
use crate::search::{commit_subtree, EncoderState, OptimalSolver, SearchParams};

/// Side of the trajectory root CU.
pub const ROOT_SIDE: u32 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
  pub qps: Vec<u8>,
  /// MTT depth caps applied while collecting.
  pub depth_caps: Vec<u8>,
  pub epsilon: f64,
  pub seed: u64,
  pub constraints: PartitionConstraints,
}

impl Default for CollectConfig {
  fn default() -> Self {
    CollectConfig {
      qps: vec![22, 27, 32, 37],
      depth_caps: vec![4, 6],
      epsilon: 0.3,
      seed: 0,
      constraints: PartitionConstraints::default(),
    }
  }
}

impl CollectConfig {
  pub fn validate(&self) -> Result<(), AgentError> {
    if !(0.0..=1.0).contains(&self.epsilon) {
      return Err(AgentError::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
    }
    if self.constraints.ctu_size != 64 && self.constraints.ctu_size != ROOT_SIDE {
      return Err(AgentError::InvalidConfig("collection needs a 32 or 64 CTU".into()));
    }
    self.constraints.validate().map_err(|e| AgentError::InvalidConfig(e.to_string()))
  }
}

/// Number of records [`collect_trajectories`] emits for frames of the given
/// (unpadded) sizes.
pub fn expected_records(sizes: &[(u32, u32)], cfg: &CollectConfig) -> usize {
  let ctu = cfg.constraints.ctu_size;
  let per_frame: usize = sizes
    .iter()
    .map(|&(w, h)| {
      let (pw, ph) = (w.div_ceil(ctu) * ctu, h.div_ceil(ctu) * ctu);
      ((pw / ROOT_SIDE) * (ph / ROOT_SIDE)) as usize
    })
    .sum();
  per_frame * cfg.qps.len() * cfg.depth_caps.len()
}

struct Ctx<'a, 'b> {
  frame: &'a Frame,
  params: SearchParams,
  lambda: f64,
  solver: &'b mut OptimalSolver<'a>,
}

impl Ctx<'_, '_> {
  fn state(&self, st: &EncoderState, cu: &CuRect, parent: Option<ParentInfo>, ns: LeafCost) -> Vec<f64> {
    extract_state(&StateInputs {
      frame: self.frame,
      cu,
      qp: self.params.qp,
      lambda: self.lambda,
      max_qt_depth: self.params.constraints.max_qt_depth,
      map: &st.map,
      parent,
      current_ns: ns,
    })
  }

  fn norm(&self, cost: f64, cu: &CuRect) -> f64 {
    cost / (self.lambda * cu.area() as f64)
  }
}

#[allow(clippy::too_many_arguments)]
fn record_root(
  cx: &mut Ctx<'_, '_>,
  st: &mut EncoderState,
  root: &CuRect,
  series: SplitSeries,
  parent: Option<ParentInfo>,
  policy: Option<&QNetwork>,
  epsilon: f64,
  rng: &mut ChaCha8Rng,
  frame_id: &str,
) -> Result<Trajectory, AgentError> {
  let c = cx.params.constraints;
  let ns = cx.solver.leaf(root);
  let root_state = cx.state(st, root, parent, ns);
  let legal = legal_splits(root, &c);
  let mut root_gt = [None; 6];
  for m in legal.iter() {
    let cost = cx.solver.cost_under(root, m);
    root_gt[m.index()] = Some(cx.norm(cost, root));
  }
  let mut t = Trajectory {
    qp: cx.params.qp,
    frame_id: frame_id.to_string(),
    max_mtt_depth: c.max_mtt_depth,
    root: *root,
    root_state,
    root_legal: legal,
    root_gt,
    actions: Vec::new(),
  };
  let optimal = t.optimal_action().expect("NS is always legal");
  let greedy = match policy {
    Some(net) => {
      let q = net.q_values(&t.root_state)?;
      legal.iter().min_by(|a, b| q[a.index()].total_cmp(&q[b.index()]).then(a.index().cmp(&b.index())))
    }
    None => None,
  };
  let me = ParentInfo { leaf: ns, area: root.area() };
  let delta = cx.norm(split_signal_cost(legal, cx.params.qp), root);
  for mode in legal.iter().filter(|m| *m != SplitMode::Ns) {
    let explore = rng.gen::<f64>() < epsilon;
    if !(explore || mode == optimal || Some(mode) == greedy) {
      continue;
    }
    st.clear(root);
    let child_series = series.pushed_saturating(mode);
    let mut subs = Vec::with_capacity(mode.child_count());
    for child in split_children(root, mode).expect("legal split") {
      let sub_ns = cx.solver.leaf(&child);
      let state = cx.state(st, &child, Some(me), sub_ns);
      let best = cx.solver.best_cost(&child);
      subs.push(SubRecord {
        state,
        legal: legal_splits(&child, &c),
        gt_cost: cx.norm(best, &child),
        weight: child.area() as f64 / root.area() as f64,
      });
      let tree = cx.solver.tree(&child);
      commit_subtree(cx.frame, &tree, &cx.params, st, child_series);
    }
    t.actions.push(ActionRecord { mode, optimal: mode == optimal, delta_split: delta, subs });
  }
  st.clear(root);
  Ok(t)
}

/// Walks every frame at each QP and depth cap, emitting one trajectory per
/// 32x32 CU reached by QT splits from the CTU root. Ground-truth costs come
/// from the exact solver; sub-records are kept for the optimal action, the
/// policy's greedy action, and each other split with probability `epsilon`.
pub fn collect_trajectories(
  frames: &[(String, Frame)],
  cfg: &CollectConfig,
  policy: Option<&QNetwork>,
  mut sink: impl FnMut(Trajectory) -> Result<(), AgentError>,
) -> Result<usize, AgentError> {
  cfg.validate()?;
  let ctu = cfg.constraints.ctu_size;
  let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
  let mut count = 0;
  for (frame_id, raw) in frames {
    let frame = raw.padded_to(ctu);
    for &qp in &cfg.qps {
      for &cap in &cfg.depth_caps {
        let params = SearchParams::new(qp, cfg.constraints.with_max_mtt_depth(cap));
        let mut st = EncoderState::new(frame.width, frame.height);
        for y in (0..frame.height).step_by(ctu as usize) {
          for x in (0..frame.width).step_by(ctu as usize) {
            let ctu_rect = CuRect::root(x, y, ctu);
            let mut solver = OptimalSolver::new(&frame, &ctu_rect, params, &st.recon);
            let mut cx = Ctx { frame: &frame, params, lambda: params.lambda(), solver: &mut solver };
            let (roots, series, parent) = if ctu == ROOT_SIDE {
              (vec![ctu_rect], SplitSeries::default(), None)
            } else {
              let parent = ParentInfo { leaf: cx.solver.leaf(&ctu_rect), area: ctu_rect.area() };
              let quads = split_children(&ctu_rect, SplitMode::Qt).expect("64 CTU splits");
              (quads, SplitSeries::default().pushed_saturating(SplitMode::Qt), Some(parent))
            };
            for root in &roots {
              let t =
                record_root(&mut cx, &mut st, root, series, parent, policy, cfg.epsilon, &mut rng, frame_id)?;
              sink(t)?;
              count += 1;
              let tree = cx.solver.tree(root);
              commit_subtree(&frame, &tree, &params, &mut st, series);
            }
            st.clear(&ctu_rect);
            let tree = cx.solver.tree(&ctu_rect);
            commit_subtree(&frame, &tree, &params, &mut st, SplitSeries::default());
          }
        }
      }
    }
  }
  Ok(count)
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::FEATURE_DIM;

  fn textured(seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..64 * 64u32)
      .map(|i| {
        let (x, y) = (i % 64, i / 64);
        (((x * 3 + y * 5) % 97) as i32 + rng.gen_range(0..40) + if x > 40 { 90 } else { 0 }) as u8
      })
      .collect();
    Frame::new(64, 64, samples).unwrap()
  }

  fn cfg(epsilon: f64) -> CollectConfig {
    CollectConfig { qps: vec![27], depth_caps: vec![2], epsilon, seed: 5, ..Default::default() }
  }

  fn run(cfg: &CollectConfig, policy: Option<&QNetwork>) -> Vec<Trajectory> {
    let frames = vec![("f".to_string(), textured(1))];
    let mut out = Vec::new();
    collect_trajectories(&frames, cfg, policy, |t| {
      out.push(t);
      Ok(())
    })
    .unwrap();
    out
  }

  #[test]
  fn full_exploration_records_every_split() {
    let ts = run(&cfg(1.0), None);
    assert_eq!(ts.len(), 4);
    for t in &ts {
      let recorded: Vec<_> = t.actions.iter().map(|a| a.mode).collect();
      let legal: Vec<_> = t.root_legal.iter().filter(|m| *m != SplitMode::Ns).collect();
      assert_eq!(recorded, legal);
      assert_eq!(t.root_state.len(), FEATURE_DIM);
      for a in &t.actions {
        assert_eq!(a.subs.len(), a.mode.child_count());
        let w: f64 = a.subs.iter().map(|s| s.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
      }
    }
  }

  #[test]
  fn gt_costs_are_additive() {
    for t in run(&cfg(1.0), None) {
      for a in &t.actions {
        let rebuilt: f64 = a.subs.iter().map(|s| s.weight * s.gt_cost).sum::<f64>() + a.delta_split;
        let gt = t.root_gt[a.mode.index()].unwrap();
        assert!((rebuilt - gt).abs() <= 1e-12 * gt.abs().max(1.0), "{rebuilt} vs {gt}");
      }
    }
  }

  #[test]
  fn greedy_only_without_exploration() {
    let net = QNetwork::new(&[FEATURE_DIM, 8, 6], 3).unwrap();
    for t in run(&cfg(0.0), Some(&net)) {
      let optimal = t.optimal_action().unwrap();
      let q = net.q_values(&t.root_state).unwrap();
      let greedy = t
        .root_legal
        .iter()
        .min_by(|a, b| q[a.index()].total_cmp(&q[b.index()]).then(a.index().cmp(&b.index())))
        .unwrap();
      for a in &t.actions {
        assert!(a.mode == optimal || a.mode == greedy);
        assert_eq!(a.optimal, a.mode == optimal);
      }
    }
  }

  #[test]
  fn collection_is_deterministic() {
    assert_eq!(run(&cfg(0.4), None), run(&cfg(0.4), None));
  }

  #[test]
  fn rejects_bad_epsilon() {
    assert!(cfg(1.5).validate().is_err());
  }
}
