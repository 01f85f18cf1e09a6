//! Test-side helpers: seeded textures and an independent brute-force
//! partition search written from the legality rules directly.
#![allow(dead_code)]

use qtmtt_core::partition::{CuRect, PartitionTree};
use qtmtt_core::rd::{leaf_rd_cost, Frame, PredictionReference, ReconState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixed gradient, edge and noise content.
pub fn texture(w: u32, h: u32, seed: u64) -> Frame {
  let mut rng = ChaCha8Rng::seed_from_u64(seed);
  let (gx, gy) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
  let (ex, ey) = (rng.gen_range(0..w), rng.gen_range(0..h));
  let step = rng.gen_range(-90.0..90.0);
  let noise = rng.gen_range(0.0..40.0);
  let base = rng.gen_range(40.0..200.0);
  let px = (0..w * h)
    .map(|i| {
      let (x, y) = (i % w, i / w);
      let mut v = base + gx * f64::from(x) + gy * f64::from(y) + rng.gen_range(-noise..=noise);
      if x >= ex && y < ey {
        v += step;
      }
      v.clamp(0.0, 255.0) as u8
    })
    .collect();
  Frame::new(w, h, px).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub struct Rules {
  pub min_side: u32,
  pub max_qt: u8,
  pub max_mtt: u8,
  pub max_tt: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
  pub x: u32,
  pub y: u32,
  pub w: u32,
  pub h: u32,
  pub qt: u8,
  pub mtt: u8,
  pub in_mtt: bool,
}

#[derive(Debug)]
pub enum Tree {
  Leaf(Node),
  Split(Node, usize, Vec<Tree>),
}

/// Mode indices 0..5 = NS, QT, BTH, BTV, TTH, TTV.
pub fn legal_modes(n: &Node, r: &Rules) -> Vec<usize> {
  let mut out = vec![0];
  if n.w == n.h && n.w >= 2 * r.min_side && n.qt < r.max_qt && !n.in_mtt {
    out.push(1);
  }
  if n.mtt < r.max_mtt {
    if n.h >= 2 * r.min_side {
      out.push(2);
    }
    if n.w >= 2 * r.min_side {
      out.push(3);
    }
    let tt_ok = n.w <= r.max_tt && n.h <= r.max_tt;
    if tt_ok && n.h >= 4 * r.min_side {
      out.push(4);
    }
    if tt_ok && n.w >= 4 * r.min_side {
      out.push(5);
    }
  }
  out
}

pub fn children(n: &Node, mode: usize) -> Vec<Node> {
  let mtt = |x, y, w, h| Node { x, y, w, h, qt: n.qt, mtt: n.mtt + 1, in_mtt: true };
  let (x, y, w, h) = (n.x, n.y, n.w, n.h);
  match mode {
    1 => {
      let s = w / 2;
      [(0, 0), (s, 0), (0, s), (s, s)]
        .iter()
        .map(|&(dx, dy)| Node { x: x + dx, y: y + dy, w: s, h: s, qt: n.qt + 1, mtt: 0, in_mtt: false })
        .collect()
    }
    2 => vec![mtt(x, y, w, h / 2), mtt(x, y + h / 2, w, h / 2)],
    3 => vec![mtt(x, y, w / 2, h), mtt(x + w / 2, y, w / 2, h)],
    4 => vec![mtt(x, y, w, h / 4), mtt(x, y + h / 4, w, h / 2), mtt(x, y + 3 * h / 4, w, h / 4)],
    5 => vec![mtt(x, y, w / 4, h), mtt(x + w / 4, y, w / 2, h), mtt(x + 3 * w / 4, y, w / 4, h)],
    _ => unreachable!(),
  }
}

fn rect(n: &Node) -> CuRect {
  CuRect {
    x: n.x,
    y: n.y,
    width: n.w,
    height: n.h,
    qt_depth: n.qt,
    mtt_depth: n.mtt,
    in_mtt_region: n.in_mtt,
  }
}

fn code_bits(count: usize) -> f64 {
  let mut bits = 0.0;
  while (1usize << bits as u32) < count {
    bits += 1.0;
  }
  bits
}

/// Minimum-cost partition by trying every legal mode at every node, coding
/// children in order against a reconstruction buffer. Ties keep the lower
/// mode index.
pub fn brute_force(frame: &Frame, root: Node, qp: u8, rules: &Rules) -> (f64, Tree) {
  let lambda = 0.57 * 2f64.powf((f64::from(qp) - 12.0) / 3.0);
  let mut rs = ReconState::new(frame.width, frame.height);
  best(frame, root, qp, lambda, rules, &mut rs)
}

fn best(frame: &Frame, n: Node, qp: u8, lambda: f64, r: &Rules, rs: &mut ReconState) -> (f64, Tree) {
  let modes = legal_modes(&n, r);
  let bits = code_bits(modes.len());
  let entry = rs.clone();
  let cu = rect(&n);
  let (leaf, recon) = leaf_rd_cost(frame, &cu, qp, &entry, PredictionReference::Source, bits);
  let mut after = entry.clone();
  after.commit(&cu, &recon);
  let mut winner = (leaf.cost, Tree::Leaf(n), after);
  for &m in &modes[1..] {
    let mut st = entry.clone();
    let mut sum = 0.0;
    let mut subs = Vec::new();
    for c in children(&n, m) {
      let (cost, t) = best(frame, c, qp, lambda, r, &mut st);
      sum += cost;
      subs.push(t);
    }
    let cost = sum + lambda * bits;
    if cost < winner.0 {
      winner = (cost, Tree::Split(n, m, subs), st);
    }
  }
  *rs = winner.2;
  (winner.0, winner.1)
}

/// Same geometry and modes at every node.
pub fn same_tree(o: &Tree, t: &PartitionTree) -> bool {
  match o {
    Tree::Leaf(n) => t.children.is_empty() && t.chosen.index() == 0 && rect(n) == t.node,
    Tree::Split(n, m, subs) => {
      rect(n) == t.node
        && t.chosen.index() == *m
        && subs.len() == t.children.len()
        && subs.iter().zip(&t.children).all(|(a, b)| same_tree(a, b))
    }
  }
}

pub fn root_node(size: u32) -> Node {
  Node { x: 0, y: 0, w: size, h: size, qt: 0, mtt: 0, in_mtt: false }
}

/// Distance in units in the last place.
pub fn ulps(a: f64, b: f64) -> u64 {
  (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

/// Every `.pgm` under `corpus/` at the workspace root, sorted by name.
pub fn smoke_corpus() -> Vec<(String, Frame)> {
  let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
  let mut paths: Vec<_> = std::fs::read_dir(&dir)
    .expect("corpus directory")
    .map(|e| e.unwrap().path())
    .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
    .collect();
  paths.sort();
  paths
    .into_iter()
    .map(|p| {
      let id = p.file_stem().unwrap().to_string_lossy().into_owned();
      (id, qtmtt_core::io::read_pgm(std::fs::File::open(&p).unwrap()).unwrap())
    })
    .collect()
}

/// Random two-level trajectory on a 32x32 root with `dim`-long states.
pub fn random_trajectory(rng: &mut ChaCha8Rng, dim: usize) -> qtmtt_core::agent::Trajectory {
  use qtmtt_core::agent::{ActionRecord, SubRecord, Trajectory};
  use qtmtt_core::partition::{legal_splits, split_children, PartitionConstraints, SplitMode};
  let c = PartitionConstraints::default();
  let root = CuRect { qt_depth: 1, ..CuRect::root(0, 0, 32) };
  let legal = legal_splits(&root, &c);
  let state = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
  let mut root_gt = [None; 6];
  for m in legal.iter() {
    root_gt[m.index()] = Some(rng.gen_range(0.0..3.0));
  }
  let mut actions = vec![];
  for m in legal.iter().filter(|m| *m != SplitMode::Ns) {
    if rng.gen_bool(0.5) {
      continue;
    }
    let subs = split_children(&root, m)
      .unwrap()
      .iter()
      .map(|k| SubRecord {
        state: state(rng),
        legal: legal_splits(k, &c),
        gt_cost: rng.gen_range(0.0..3.0),
        weight: k.area() as f64 / root.area() as f64,
      })
      .collect();
    actions.push(ActionRecord { mode: m, optimal: false, delta_split: rng.gen_range(0.0..0.1), subs });
  }
  Trajectory {
    qp: 32,
    frame_id: "random".into(),
    max_mtt_depth: 3,
    root,
    root_state: state(rng),
    root_legal: legal,
    root_gt,
    actions,
  }
}

/// Largest relative deviation between the analytic gradient and central
/// differences of the mean loss.
pub fn max_gradient_error(
  net: &qtmtt_core::QNetwork,
  batch: &[qtmtt_core::agent::Trajectory],
  w: &qtmtt_core::agent::LossWeights,
  step: f64,
) -> f64 {
  use qtmtt_core::agent::loss_gradient;
  let (_, grad) = loss_gradient(net, batch, w, false).unwrap();
  let mut probe = net.clone();
  let mut worst: f64 = 0.0;
  for i in 0..grad.len() {
    let p0 = probe.params()[i];
    probe.params_mut()[i] = p0 + step;
    let up = loss_gradient(&probe, batch, w, false).unwrap().0.total;
    probe.params_mut()[i] = p0 - step;
    let down = loss_gradient(&probe, batch, w, false).unwrap().0.total;
    probe.params_mut()[i] = p0;
    let fd = (up - down) / (2.0 * step);
    let scale = grad[i].abs().max(fd.abs()).max(1e-8);
    worst = worst.max((grad[i] - fd).abs() / scale);
  }
  worst
}

/// Seeded network with random biases as well as weights. Zero biases make
/// outputs of fully inactive hidden layers tie exactly, where the masked
/// minimum in the loss has no derivative.
pub fn random_net(dims: &[usize], seed: u64) -> qtmtt_core::QNetwork {
  let base = qtmtt_core::QNetwork::new(dims, seed).unwrap();
  let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
  let params = base.params().iter().map(|&p| if p == 0.0 { rng.gen_range(-0.5..0.5) } else { p }).collect();
  qtmtt_core::QNetwork::from_params(dims, params).unwrap()
}
