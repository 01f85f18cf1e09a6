//! Recursive RD-optimal QTMTT partition search with pluggable split
//! selection and reconstruction counters.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{extract_state, CuMap, LeafInfo, ParentInfo, SplitSeries, StateInputs};
use crate::partition::{
  legal_splits, split_children, CuRect, ModeSet, PartitionConstraints, PartitionTree, SplitMode,
};
use crate::rd::{
  lambda_unchecked, leaf_rd_cost, mode_bits, split_signal_cost, Frame, LeafCost, PredictionReference,
  ReconState,
};

/// Reconstruction work performed by the RDO search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RdStats {
  pub cu_reconstructions: u64,
  pub pixel_reconstructions: u64,
  pub wall_time: f64,
}

impl RdStats {
  pub fn add(&mut self, o: &RdStats) {
    self.cu_reconstructions += o.cu_reconstructions;
    self.pixel_reconstructions += o.pixel_reconstructions;
    self.wall_time += o.wall_time;
  }
}

/// What a selector sees at one CU.
pub struct SelectorContext<'a> {
  pub cu: &'a CuRect,
  pub state: Option<&'a [f64]>,
  pub legal: ModeSet,
  pub qp: u8,
}

/// Chooses which split modes the search evaluates at a CU. The NS cost is
/// computed regardless; NS is a final candidate only if returned.
pub trait SplitSelector {
  /// Whether `select` needs the state vector for this CU.
  fn wants_state(&self, _cu: &CuRect) -> bool {
    false
  }

  /// A non-empty subset of `ctx.legal`.
  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet;
}

/// Evaluates every legal mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExhaustiveSelector;

impl SplitSelector for ExhaustiveSelector {
  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    ctx.legal
  }
}

/// Restricts every CU to a fixed mask (intersected with the legal set).
#[derive(Clone, Copy, Debug)]
pub struct FixedSelector(pub ModeSet);

impl SplitSelector for FixedSelector {
  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    let s = ctx.legal.intersect(self.0);
    if s.is_empty() {
      ModeSet::only(SplitMode::Ns)
    } else {
      s
    }
  }
}

/// Emulates tighter encoder configuration: MTT splits beyond `max_mtt_depth`
/// and TT on blocks larger than `max_tt_side` are skipped.
#[derive(Clone, Copy, Debug)]
pub struct DepthCapSelector {
  pub max_mtt_depth: u8,
  pub max_tt_side: u32,
}

impl SplitSelector for DepthCapSelector {
  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    let mut s = ctx.legal;
    let cu = ctx.cu;
    if cu.mtt_depth >= self.max_mtt_depth {
      for m in [SplitMode::Bth, SplitMode::Btv, SplitMode::Tth, SplitMode::Ttv] {
        s.remove(m);
      }
    }
    if cu.width > self.max_tt_side || cu.height > self.max_tt_side {
      s.remove(SplitMode::Tth);
      s.remove(SplitMode::Ttv);
    }
    s
  }
}

/// CU sizes on which learned or random pruning is applied; other sizes are
/// searched exhaustively.
pub const PRUNED_SIZES: [(u32, u32); 6] = [(32, 32), (16, 16), (32, 16), (16, 32), (8, 32), (32, 8)];

pub fn is_pruned_size(cu: &CuRect) -> bool {
  PRUNED_SIZES.contains(&(cu.width, cu.height))
}

/// Uniform-random control: keeps `n` legal modes drawn without replacement,
/// plus NS, on [`PRUNED_SIZES`] CUs.
#[derive(Clone, Debug)]
pub struct RandomSelector {
  pub n: usize,
  rng: ChaCha8Rng,
}

impl RandomSelector {
  pub fn new(n: usize, seed: u64) -> RandomSelector {
    RandomSelector { n, rng: ChaCha8Rng::seed_from_u64(seed) }
  }
}

impl SplitSelector for RandomSelector {
  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    if !is_pruned_size(ctx.cu) {
      return ctx.legal;
    }
    let mut modes: Vec<SplitMode> = ctx.legal.iter().collect();
    modes.shuffle(&mut self.rng);
    let mut s: ModeSet = modes.into_iter().take(self.n).collect();
    s.insert(SplitMode::Ns);
    s
  }
}

/// Reconstruction and committed-leaf map shared by consecutive CTUs.
#[derive(Clone, Debug)]
pub struct EncoderState {
  pub recon: ReconState,
  pub map: CuMap,
}

impl EncoderState {
  pub fn new(width: u32, height: u32) -> EncoderState {
    EncoderState { recon: ReconState::new(width, height), map: CuMap::new(width, height) }
  }

  /// Marks `cu` as not yet coded.
  pub fn clear(&mut self, cu: &CuRect) {
    self.recon.clear(cu);
    self.map.set(cu, None);
  }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
  pub qp: u8,
  pub constraints: PartitionConstraints,
  pub reference: PredictionReference,
}

impl SearchParams {
  pub fn new(qp: u8, constraints: PartitionConstraints) -> SearchParams {
    SearchParams { qp, constraints, reference: PredictionReference::Source }
  }

  pub fn lambda(&self) -> f64 {
    lambda_unchecked(self.qp)
  }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
  pub tree: PartitionTree,
  pub stats: RdStats,
  /// Bits of the chosen tree, split flags included.
  pub rate: f64,
  /// SSE of the chosen tree.
  pub distortion: f64,
}

struct NodeOutcome {
  tree: PartitionTree,
  rate: f64,
  distortion: f64,
}

enum Snapshot {
  Leaf(Vec<u8>),
  Region(Vec<u8>, Vec<Option<LeafInfo>>),
}

struct Searcher<'a> {
  frame: &'a Frame,
  params: SearchParams,
  lambda: f64,
  selector: &'a mut dyn SplitSelector,
  stats: RdStats,
}

impl Searcher<'_> {
  fn node(
    &mut self,
    st: &mut EncoderState,
    cu: CuRect,
    parent: Option<ParentInfo>,
    series: SplitSeries,
  ) -> NodeOutcome {
    let c = &self.params.constraints;
    let qp = self.params.qp;
    let legal = legal_splits(&cu, c);
    let bits = mode_bits(legal);
    let (ns, ns_recon) = leaf_rd_cost(self.frame, &cu, qp, &st.recon, self.params.reference, bits);
    self.stats.cu_reconstructions += 1;
    self.stats.pixel_reconstructions += cu.area();

    let candidates = if legal.len() == 1 {
      legal
    } else {
      let state = self.selector.wants_state(&cu).then(|| {
        extract_state(&StateInputs {
          frame: self.frame,
          cu: &cu,
          qp,
          lambda: self.lambda,
          max_qt_depth: c.max_qt_depth,
          map: &st.map,
          parent,
          current_ns: ns,
        })
      });
      let picked = self.selector.select(&SelectorContext { cu: &cu, state: state.as_deref(), legal, qp });
      debug_assert!(picked.is_subset_of(legal), "selector returned illegal modes");
      let picked = picked.intersect(legal);
      if picked.is_empty() {
        ModeSet::only(SplitMode::Ns)
      } else {
        picked
      }
    };

    let leaf_info = LeafInfo { cost: ns.cost, area: cu.area() as u32, qt_depth: cu.qt_depth, series };
    let mut best: Option<(NodeOutcome, Snapshot)> = None;
    if candidates.contains(SplitMode::Ns) {
      best = Some((
        NodeOutcome { tree: PartitionTree::leaf(cu, ns.cost), rate: ns.rate, distortion: ns.distortion },
        Snapshot::Leaf(ns_recon),
      ));
    }
    let me = ParentInfo { leaf: ns, area: cu.area() };
    for mode in candidates.iter().filter(|m| *m != SplitMode::Ns) {
      st.clear(&cu);
      let child_series = series.pushed_saturating(mode);
      let mut children = Vec::with_capacity(mode.child_count());
      let (mut sum, mut rate, mut distortion) = (0.0, bits, 0.0);
      for child in split_children(&cu, mode).expect("legal split") {
        let o = self.node(st, child, Some(me), child_series);
        sum += o.tree.node_cost;
        rate += o.rate;
        distortion += o.distortion;
        children.push(o.tree);
      }
      let cost = sum + split_signal_cost(legal, qp);
      if best.as_ref().is_none_or(|(b, _)| cost < b.tree.node_cost) {
        let snap = Snapshot::Region(st.recon.block(&cu), st.map.region(&cu));
        let tree = PartitionTree { node: cu, chosen: mode, node_cost: cost, children };
        best = Some((NodeOutcome { tree, rate, distortion }, snap));
      }
    }

    let (outcome, snap) = best.expect("at least one candidate");
    match snap {
      Snapshot::Leaf(recon) => {
        st.recon.commit(&cu, &recon);
        st.map.set(&cu, Some(leaf_info));
      }
      Snapshot::Region(recon, map) => {
        st.recon.commit(&cu, &recon);
        st.map.restore_region(&cu, &map);
      }
    }
    outcome
  }
}

/// RD search of one CTU. The CTU region of `st` must be uncoded on entry; the
/// winning reconstruction is committed on return. Counters include every
/// explored branch.
pub fn search(
  frame: &Frame,
  ctu: &CuRect,
  params: &SearchParams,
  selector: &mut dyn SplitSelector,
  st: &mut EncoderState,
) -> SearchResult {
  let start = Instant::now();
  let mut s =
    Searcher { frame, params: *params, lambda: params.lambda(), selector, stats: RdStats::default() };
  let out = s.node(st, *ctu, None, SplitSeries::default());
  let mut stats = s.stats;
  stats.wall_time = start.elapsed().as_secs_f64();
  SearchResult { tree: out.tree, stats, rate: out.rate, distortion: out.distortion }
}

/// [`search`] with every legal mode evaluated.
pub fn search_exhaustive(
  frame: &Frame,
  ctu: &CuRect,
  params: &SearchParams,
  st: &mut EncoderState,
) -> SearchResult {
  search(frame, ctu, params, &mut ExhaustiveSelector, st)
}

/// Structural equality of two partition trees; recorded costs are ignored.
pub fn compare_trees(a: &PartitionTree, b: &PartitionTree) -> bool {
  a.same_structure(b)
}

/// Recomputes and commits the leaves of `tree` into `st`.
pub fn commit_tree(frame: &Frame, tree: &PartitionTree, params: &SearchParams, st: &mut EncoderState) {
  commit_subtree(frame, tree, params, st, SplitSeries::default());
}

/// [`commit_tree`] for a subtree whose path from the CTU root is `series`.
pub fn commit_subtree(
  frame: &Frame,
  tree: &PartitionTree,
  params: &SearchParams,
  st: &mut EncoderState,
  series: SplitSeries,
) {
  if tree.children.is_empty() {
    let bits = mode_bits(legal_splits(&tree.node, &params.constraints));
    let (leaf, recon) = leaf_rd_cost(frame, &tree.node, params.qp, &st.recon, params.reference, bits);
    st.recon.commit(&tree.node, &recon);
    let info =
      LeafInfo { cost: leaf.cost, area: tree.node.area() as u32, qt_depth: tree.node.qt_depth, series };
    st.map.set(&tree.node, Some(info));
  } else {
    let s = series.pushed_saturating(tree.chosen);
    for c in &tree.children {
      commit_subtree(frame, c, params, st, s);
    }
  }
}

#[derive(Clone, Copy, Debug)]
struct Best {
  mode: SplitMode,
  cost: f64,
}

/// Memoized RD-optimal partition solver. Valid only with
/// [`PredictionReference::Source`]: leaf costs then depend on geometry alone,
/// so the optimum decomposes over the tree. Produces the same costs and trees
/// as [`search_exhaustive`] at a fraction of the work; it is not instrumented.
pub struct OptimalSolver<'a> {
  frame: &'a Frame,
  params: SearchParams,
  avail: ReconState,
  leaves: HashMap<(u32, u32, u32, u32), (f64, f64)>,
  best: HashMap<CuRect, Best>,
}

impl<'a> OptimalSolver<'a> {
  /// `outside` gives availability of samples outside `ctu`; everything
  /// inside `ctu` is treated as coded before any CU that borders it.
  pub fn new(
    frame: &'a Frame,
    ctu: &CuRect,
    params: SearchParams,
    outside: &ReconState,
  ) -> OptimalSolver<'a> {
    assert_eq!(
      params.reference,
      PredictionReference::Source,
      "memoized solve needs source-referenced prediction"
    );
    let mut avail = outside.clone();
    avail.commit(ctu, &vec![0; ctu.area() as usize]);
    OptimalSolver { frame, params, avail, leaves: HashMap::new(), best: HashMap::new() }
  }

  pub fn params(&self) -> &SearchParams {
    &self.params
  }

  /// NS evaluation of `cu` with the correct mode bits.
  pub fn leaf(&mut self, cu: &CuRect) -> LeafCost {
    let bits = mode_bits(legal_splits(cu, &self.params.constraints));
    let key = (cu.x, cu.y, cu.width, cu.height);
    let (distortion, coef_bits) = match self.leaves.get(&key) {
      Some(&v) => v,
      None => {
        let (leaf, _) = leaf_rd_cost(self.frame, cu, self.params.qp, &self.avail, self.params.reference, 0.0);
        self.leaves.insert(key, (leaf.distortion, leaf.rate));
        (leaf.distortion, leaf.rate)
      }
    };
    LeafCost::new(distortion, bits + coef_bits, self.params.lambda())
  }

  /// Minimum RD cost of the subtree at `cu`.
  pub fn best_cost(&mut self, cu: &CuRect) -> f64 {
    self.solve(cu).cost
  }

  /// Minimum RD cost of `cu` when it must take `mode` first.
  pub fn cost_under(&mut self, cu: &CuRect, mode: SplitMode) -> f64 {
    if mode == SplitMode::Ns {
      return self.leaf(cu).cost;
    }
    let legal = legal_splits(cu, &self.params.constraints);
    let mut sum = 0.0;
    for child in split_children(cu, mode).expect("legal split") {
      sum += self.solve(&child).cost;
    }
    sum + split_signal_cost(legal, self.params.qp)
  }

  fn solve(&mut self, cu: &CuRect) -> Best {
    if let Some(&b) = self.best.get(cu) {
      return b;
    }
    let legal = legal_splits(cu, &self.params.constraints);
    let mut best = Best { mode: SplitMode::Ns, cost: self.leaf(cu).cost };
    for mode in legal.iter().filter(|m| *m != SplitMode::Ns) {
      let cost = self.cost_under(cu, mode);
      if cost < best.cost {
        best = Best { mode, cost };
      }
    }
    self.best.insert(*cu, best);
    best
  }

  /// The optimal tree at `cu`.
  pub fn tree(&mut self, cu: &CuRect) -> PartitionTree {
    let b = self.solve(cu);
    if b.mode == SplitMode::Ns {
      return PartitionTree::leaf(*cu, b.cost);
    }
    let children = split_children(cu, b.mode).expect("legal split").iter().map(|c| self.tree(c)).collect();
    PartitionTree { node: *cu, chosen: b.mode, node_cost: b.cost, children }
  }
}

/// How CTUs of a frame relate to each other.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CtuScheduling {
  /// Raster order with prediction and neighbor features across CTUs.
  #[default]
  Sequential,
  /// Every CTU coded in isolation; CTUs may run concurrently.
  OpenLoop,
}

#[derive(Clone, Debug)]
pub struct FrameEncoding {
  pub trees: Vec<PartitionTree>,
  pub stats: RdStats,
  pub rate: f64,
  pub distortion: f64,
  /// Reconstruction of the padded frame.
  pub recon: Frame,
}

/// Encodes a frame whose dimensions are multiples of the CTU size.
/// `make_selector` is called once per frame in sequential mode and once per
/// CTU (with the CTU index) in open-loop mode.
pub fn encode_frame(
  frame: &Frame,
  params: &SearchParams,
  scheduling: CtuScheduling,
  parallel: bool,
  make_selector: &(dyn Fn(usize) -> Box<dyn SplitSelector> + Sync),
) -> FrameEncoding {
  let ctu = params.constraints.ctu_size;
  assert!(
    frame.width.is_multiple_of(ctu) && frame.height.is_multiple_of(ctu),
    "frame must be padded to the CTU size"
  );
  let cols = frame.width / ctu;
  let origins: Vec<(u32, u32)> =
    (0..frame.height / ctu).flat_map(|r| (0..cols).map(move |c| (c * ctu, r * ctu))).collect();
  let mut enc = FrameEncoding {
    trees: Vec::with_capacity(origins.len()),
    stats: RdStats::default(),
    rate: 0.0,
    distortion: 0.0,
    recon: Frame::filled(frame.width, frame.height, 0),
  };
  match scheduling {
    CtuScheduling::Sequential => {
      let mut st = EncoderState::new(frame.width, frame.height);
      let mut selector = make_selector(0);
      for &(x, y) in &origins {
        let r = search(frame, &CuRect::root(x, y, ctu), params, selector.as_mut(), &mut st);
        enc.stats.add(&r.stats);
        enc.rate += r.rate;
        enc.distortion += r.distortion;
        enc.trees.push(r.tree);
      }
      enc.recon = st.recon.to_frame();
    }
    CtuScheduling::OpenLoop => {
      let run = |(i, &(x, y)): (usize, &(u32, u32))| {
        let local = frame.cropped_at(x, y, ctu, ctu);
        let mut st = EncoderState::new(ctu, ctu);
        let mut selector = make_selector(i);
        let r = search(&local, &CuRect::root(0, 0, ctu), params, selector.as_mut(), &mut st);
        (r, st.recon.to_frame())
      };
      let results: Vec<_> = if parallel {
        use rayon::prelude::*;
        origins.par_iter().enumerate().map(run).collect()
      } else {
        origins.iter().enumerate().map(run).collect()
      };
      for ((r, local), &(x, y)) in results.into_iter().zip(&origins) {
        enc.stats.add(&r.stats);
        enc.rate += r.rate;
        enc.distortion += r.distortion;
        enc.recon.paste(&local, x, y);
        enc.trees.push(offset_tree(r.tree, x, y));
      }
    }
  }
  enc
}

fn offset_tree(mut t: PartitionTree, dx: u32, dy: u32) -> PartitionTree {
  t.node.x += dx;
  t.node.y += dy;
  t.children = t.children.into_iter().map(|c| offset_tree(c, dx, dy)).collect();
  t
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::partition::enumerate_all_cus;
  use crate::rd::leaf_eval_counter;
  use rand::Rng;

  fn noise_frame(size: u32, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..size * size)
      .map(|i| {
        let (x, y) = (i % size, i / size);
        let base = if (x / 8 + y / 16) % 2 == 0 { 60 } else { 170 };
        (base + rng.gen_range(-25..=25)) as u8
      })
      .collect();
    Frame::new(size, size, samples).unwrap()
  }

  #[test]
  fn flat_ctu_is_one_leaf() {
    let frame = Frame::filled(64, 64, 128);
    let params = SearchParams::new(32, PartitionConstraints::default());
    let mut st = EncoderState::new(64, 64);
    let r = search_exhaustive(&frame, &CuRect::root(0, 0, 64), &params, &mut st);
    assert_eq!(r.tree.chosen, SplitMode::Ns);
    assert_eq!(r.tree.node_count(), 1);
    let full = enumerate_all_cus(64, &params.constraints, false);
    assert_eq!(r.stats.cu_reconstructions, full.cus);
    assert_eq!(r.stats.pixel_reconstructions, full.pixels);
  }

  #[test]
  fn ns_only_selector_evaluates_once() {
    let frame = noise_frame(64, 1);
    let params = SearchParams::new(27, PartitionConstraints::default());
    let mut st = EncoderState::new(64, 64);
    let r = search(
      &frame,
      &CuRect::root(0, 0, 64),
      &params,
      &mut FixedSelector(ModeSet::only(SplitMode::Ns)),
      &mut st,
    );
    assert_eq!(r.tree.node_count(), 1);
    assert_eq!(r.stats.cu_reconstructions, 1);
    assert_eq!(r.stats.pixel_reconstructions, 4096);
  }

  #[test]
  fn qt_only_exploration_matches_hevc_count() {
    let frame = noise_frame(64, 2);
    let params = SearchParams::new(22, PartitionConstraints::default().with_max_mtt_depth(0));
    let mut st = EncoderState::new(64, 64);
    let r = search_exhaustive(&frame, &CuRect::root(0, 0, 64), &params, &mut st);
    assert_eq!((r.stats.cu_reconstructions, r.stats.pixel_reconstructions), (341, 20480));
  }

  #[test]
  fn counters_match_shadow_instrumentation() {
    let frame = noise_frame(32, 3);
    let c = PartitionConstraints { ctu_size: 32, ..Default::default() };
    let params = SearchParams::new(32, c);
    let mut st = EncoderState::new(32, 32);
    let before = leaf_eval_counter();
    let r = search(&frame, &CuRect::root(0, 0, 32), &params, &mut RandomSelector::new(2, 9), &mut st);
    let after = leaf_eval_counter();
    assert_eq!(r.stats.cu_reconstructions, after.0 - before.0);
    assert_eq!(r.stats.pixel_reconstructions, after.1 - before.1);
  }

  #[test]
  fn memoized_solver_agrees_with_search() {
    for seed in 0..4 {
      let frame = noise_frame(64, 10 + seed);
      let params = SearchParams::new([22, 27, 32, 37][seed as usize], PartitionConstraints::default());
      let root = CuRect::root(0, 0, 64);
      let mut st = EncoderState::new(64, 64);
      let r = search_exhaustive(&frame, &root, &params, &mut st);
      let mut solver = OptimalSolver::new(&frame, &root, params, &ReconState::new(64, 64));
      let t = solver.tree(&root);
      assert!(compare_trees(&t, &r.tree));
      assert_eq!(t.node_cost, r.tree.node_cost);
    }
  }

  #[test]
  fn commit_tree_reproduces_search_reconstruction() {
    let frame = noise_frame(64, 5);
    let params = SearchParams::new(27, PartitionConstraints::default().with_max_mtt_depth(1));
    let root = CuRect::root(0, 0, 64);
    let mut st = EncoderState::new(64, 64);
    let r = search_exhaustive(&frame, &root, &params, &mut st);
    let mut replay = EncoderState::new(64, 64);
    commit_tree(&frame, &r.tree, &params, &mut replay);
    assert_eq!(replay.recon, st.recon);
  }

  #[test]
  fn open_loop_parallel_matches_serial() {
    let frame = noise_frame(128, 6);
    let params = SearchParams::new(32, PartitionConstraints::default().with_max_mtt_depth(1));
    let mk = |i: usize| -> Box<dyn SplitSelector> { Box::new(RandomSelector::new(3, i as u64)) };
    let a = encode_frame(&frame, &params, CtuScheduling::OpenLoop, false, &mk);
    let b = encode_frame(&frame, &params, CtuScheduling::OpenLoop, true, &mk);
    assert_eq!(a.recon, b.recon);
    assert_eq!(a.rate, b.rate);
    assert!(a.trees.iter().zip(&b.trees).all(|(x, y)| compare_trees(x, y)));
    assert_eq!(a.trees[3].node.x, 64);
  }

  #[test]
  fn compare_trees_ignores_costs() {
    let cu = CuRect::root(0, 0, 8);
    let a = PartitionTree::leaf(cu, 1.0);
    let b = PartitionTree::leaf(cu, 1.0 + f64::EPSILON);
    assert!(compare_trees(&a, &b));
    let kids =
      split_children(&cu, SplitMode::Qt).unwrap().into_iter().map(|k| PartitionTree::leaf(k, 0.0)).collect();
    let c = PartitionTree { node: cu, chosen: SplitMode::Qt, node_cost: 1.0, children: kids };
    assert!(!compare_trees(&a, &c));
  }
}
