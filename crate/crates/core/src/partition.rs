//! Coding-unit geometry, the six QTMTT split modes and split legality.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
  #[error("NS has no children")]
  NoSplit,
  #[error("cannot apply {mode} to a {width}x{height} CU")]
  Geometry { mode: SplitMode, width: u32, height: u32 },
  #[error("invalid constraints: {0}")]
  Constraints(&'static str),
}

/// The partitioning actions available at a CU. The discriminant is the action
/// index used by the agent, the split-series code table and tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitMode {
  Ns = 0,
  Qt = 1,
  Bth = 2,
  Btv = 3,
  Tth = 4,
  Ttv = 5,
}

impl SplitMode {
  pub const ALL: [SplitMode; 6] =
    [SplitMode::Ns, SplitMode::Qt, SplitMode::Bth, SplitMode::Btv, SplitMode::Tth, SplitMode::Ttv];

  #[inline]
  pub fn index(self) -> usize {
    self as usize
  }

  pub fn from_index(i: usize) -> Option<SplitMode> {
    Self::ALL.get(i).copied()
  }

  pub fn child_count(self) -> usize {
    match self {
      SplitMode::Ns => 0,
      SplitMode::Qt => 4,
      SplitMode::Bth | SplitMode::Btv => 2,
      SplitMode::Tth | SplitMode::Ttv => 3,
    }
  }

  /// True for the binary and ternary (multi-type tree) splits.
  pub fn is_mtt(self) -> bool {
    !matches!(self, SplitMode::Ns | SplitMode::Qt)
  }

  pub fn name(self) -> &'static str {
    match self {
      SplitMode::Ns => "NS",
      SplitMode::Qt => "QT",
      SplitMode::Bth => "BTH",
      SplitMode::Btv => "BTV",
      SplitMode::Tth => "TTH",
      SplitMode::Ttv => "TTV",
    }
  }
}

impl fmt::Display for SplitMode {
  fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.write_str(self.name())
  }
}

/// A set of split modes stored as a 6-bit mask. Iteration follows mode index
/// order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSet(u8);

impl ModeSet {
  pub const EMPTY: ModeSet = ModeSet(0);
  pub const FULL: ModeSet = ModeSet(0b11_1111);

  pub fn from_bits(bits: u8) -> ModeSet {
    ModeSet(bits & Self::FULL.0)
  }

  pub fn bits(self) -> u8 {
    self.0
  }

  pub fn only(mode: SplitMode) -> ModeSet {
    ModeSet(1 << mode.index())
  }

  pub fn insert(&mut self, mode: SplitMode) {
    self.0 |= 1 << mode.index();
  }

  pub fn remove(&mut self, mode: SplitMode) {
    self.0 &= !(1 << mode.index());
  }

  pub fn contains(self, mode: SplitMode) -> bool {
    self.0 & (1 << mode.index()) != 0
  }

  pub fn len(self) -> usize {
    self.0.count_ones() as usize
  }

  pub fn is_empty(self) -> bool {
    self.0 == 0
  }

  pub fn is_subset_of(self, other: ModeSet) -> bool {
    self.0 & !other.0 == 0
  }

  pub fn intersect(self, other: ModeSet) -> ModeSet {
    ModeSet(self.0 & other.0)
  }

  pub fn iter(self) -> impl Iterator<Item = SplitMode> {
    SplitMode::ALL.into_iter().filter(move |m| self.contains(*m))
  }
}

impl FromIterator<SplitMode> for ModeSet {
  fn from_iter<I: IntoIterator<Item = SplitMode>>(iter: I) -> Self {
    let mut s = ModeSet::EMPTY;
    for m in iter {
      s.insert(m);
    }
    s
  }
}

impl fmt::Debug for ModeSet {
  fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    f.debug_set().entries(self.iter()).finish()
  }
}

/// A coding-unit rectangle inside a CTU together with its tree-depth context.
/// Positions are luma sample offsets; they are frame-absolute once a CTU is
/// placed in a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CuRect {
  pub x: u32,
  pub y: u32,
  pub width: u32,
  pub height: u32,
  pub qt_depth: u8,
  pub mtt_depth: u8,
  pub in_mtt_region: bool,
}

impl CuRect {
  /// A square CTU root at `(x, y)` with no ancestors.
  pub fn root(x: u32, y: u32, size: u32) -> CuRect {
    CuRect { x, y, width: size, height: size, qt_depth: 0, mtt_depth: 0, in_mtt_region: false }
  }

  pub fn area(&self) -> u64 {
    u64::from(self.width) * u64::from(self.height)
  }

  pub fn contains(&self, x: u32, y: u32) -> bool {
    x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
  }

  pub fn intersects(&self, o: &CuRect) -> bool {
    self.x < o.x + o.width
      && o.x < self.x + self.width
      && self.y < o.y + o.height
      && o.y < self.y + self.height
  }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConstraints {
  pub ctu_size: u32,
  pub min_cu_side: u32,
  pub max_qt_depth: u8,
  pub max_mtt_depth: u8,
  pub max_tt_side: u32,
}

impl Default for PartitionConstraints {
  fn default() -> Self {
    PartitionConstraints { ctu_size: 64, min_cu_side: 4, max_qt_depth: 4, max_mtt_depth: 3, max_tt_side: 32 }
  }
}

impl PartitionConstraints {
  pub fn with_max_mtt_depth(self, max_mtt_depth: u8) -> Self {
    PartitionConstraints { max_mtt_depth, ..self }
  }

  pub fn validate(&self) -> Result<(), PartitionError> {
    if !self.ctu_size.is_power_of_two() || self.ctu_size < 8 || self.ctu_size > 128 {
      return Err(PartitionError::Constraints("ctu_size must be a power of two in 8..=128"));
    }
    if self.min_cu_side < 4 || !self.min_cu_side.is_power_of_two() {
      return Err(PartitionError::Constraints("min_cu_side must be a power of two >= 4"));
    }
    if self.min_cu_side > self.ctu_size {
      return Err(PartitionError::Constraints("min_cu_side exceeds ctu_size"));
    }
    if self.max_tt_side > self.ctu_size {
      return Err(PartitionError::Constraints("max_tt_side exceeds ctu_size"));
    }
    Ok(())
  }
}

/// The split modes allowed at `cu`. NS is always present.
pub fn legal_splits(cu: &CuRect, c: &PartitionConstraints) -> ModeSet {
  let mut set = ModeSet::only(SplitMode::Ns);
  let (w, h) = (cu.width, cu.height);
  if w == h && w >= 2 * c.min_cu_side && cu.qt_depth < c.max_qt_depth && !cu.in_mtt_region {
    set.insert(SplitMode::Qt);
  }
  if cu.mtt_depth < c.max_mtt_depth {
    if h >= 2 * c.min_cu_side {
      set.insert(SplitMode::Bth);
    }
    if w >= 2 * c.min_cu_side {
      set.insert(SplitMode::Btv);
    }
    if w <= c.max_tt_side && h <= c.max_tt_side {
      if h >= 4 * c.min_cu_side {
        set.insert(SplitMode::Tth);
      }
      if w >= 4 * c.min_cu_side {
        set.insert(SplitMode::Ttv);
      }
    }
  }
  set
}

/// Child rectangles of `cu` under `mode`, in raster order.
pub fn split_children(cu: &CuRect, mode: SplitMode) -> Result<Vec<CuRect>, PartitionError> {
  let (w, h) = (cu.width, cu.height);
  let bad = || PartitionError::Geometry { mode, width: w, height: h };
  let mtt = |x, y, width, height| CuRect {
    x,
    y,
    width,
    height,
    qt_depth: cu.qt_depth,
    mtt_depth: cu.mtt_depth + 1,
    in_mtt_region: true,
  };
  let out = match mode {
    SplitMode::Ns => return Err(PartitionError::NoSplit),
    SplitMode::Qt => {
      if w != h || w < 2 || w % 2 != 0 {
        return Err(bad());
      }
      let s = w / 2;
      [(0, 0), (s, 0), (0, s), (s, s)]
        .into_iter()
        .map(|(dx, dy)| CuRect {
          x: cu.x + dx,
          y: cu.y + dy,
          width: s,
          height: s,
          qt_depth: cu.qt_depth + 1,
          mtt_depth: cu.mtt_depth,
          in_mtt_region: cu.in_mtt_region,
        })
        .collect()
    }
    SplitMode::Bth => {
      if h < 2 || h % 2 != 0 {
        return Err(bad());
      }
      let s = h / 2;
      vec![mtt(cu.x, cu.y, w, s), mtt(cu.x, cu.y + s, w, s)]
    }
    SplitMode::Btv => {
      if w < 2 || w % 2 != 0 {
        return Err(bad());
      }
      let s = w / 2;
      vec![mtt(cu.x, cu.y, s, h), mtt(cu.x + s, cu.y, s, h)]
    }
    SplitMode::Tth => {
      if h < 4 || h % 4 != 0 {
        return Err(bad());
      }
      let q = h / 4;
      vec![mtt(cu.x, cu.y, w, q), mtt(cu.x, cu.y + q, w, 2 * q), mtt(cu.x, cu.y + 3 * q, w, q)]
    }
    SplitMode::Ttv => {
      if w < 4 || w % 4 != 0 {
        return Err(bad());
      }
      let q = w / 4;
      vec![mtt(cu.x, cu.y, q, h), mtt(cu.x + q, cu.y, 2 * q, h), mtt(cu.x + 3 * q, cu.y, q, h)]
    }
  };
  Ok(out)
}

/// Recursive record of a partition decision. `node_cost` is the RD cost of the
/// whole subtree rooted here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
  pub node: CuRect,
  pub chosen: SplitMode,
  pub node_cost: f64,
  pub children: Vec<PartitionTree>,
}

impl PartitionTree {
  pub fn leaf(node: CuRect, cost: f64) -> PartitionTree {
    PartitionTree { node, chosen: SplitMode::Ns, node_cost: cost, children: Vec::new() }
  }

  pub fn node_count(&self) -> usize {
    1 + self.children.iter().map(PartitionTree::node_count).sum::<usize>()
  }

  /// Leaves in coding (Z-scan) order.
  pub fn leaves(&self) -> Vec<&PartitionTree> {
    let mut out = Vec::new();
    self.collect_leaves(&mut out);
    out
  }

  fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a PartitionTree>) {
    if self.children.is_empty() {
      out.push(self);
    } else {
      for c in &self.children {
        c.collect_leaves(out);
      }
    }
  }

  /// Pre-order walk over every node.
  pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a PartitionTree)) {
    f(self);
    for c in &self.children {
      c.walk(f);
    }
  }

  /// Structural equality: same geometry and chosen mode everywhere. Costs are
  /// ignored.
  pub fn same_structure(&self, other: &PartitionTree) -> bool {
    self.node == other.node
      && self.chosen == other.chosen
      && self.children.len() == other.children.len()
      && self.children.iter().zip(&other.children).all(|(a, b)| a.same_structure(b))
  }
}

/// Number of CU evaluations and reconstructed pixels performed by an
/// exhaustive search from a single CTU root.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CuCount {
  pub cus: u64,
  pub pixels: u64,
}

/// Counts every node of the exhaustive search tree rooted at a `ctu_size`
/// CTU: each node is one CU evaluation covering `width * height` pixels.
/// With `qt_only`, only QT splits are followed.
pub fn enumerate_all_cus(ctu_size: u32, c: &PartitionConstraints, qt_only: bool) -> CuCount {
  type Key = (u32, u32, u8, u8, bool);
  fn go(cu: &CuRect, c: &PartitionConstraints, qt_only: bool, memo: &mut HashMap<Key, CuCount>) -> CuCount {
    let key = (cu.width, cu.height, cu.qt_depth, cu.mtt_depth, cu.in_mtt_region);
    if let Some(&hit) = memo.get(&key) {
      return hit;
    }
    let mut total = CuCount { cus: 1, pixels: cu.area() };
    for mode in legal_splits(cu, c).iter() {
      if mode == SplitMode::Ns || (qt_only && mode != SplitMode::Qt) {
        continue;
      }
      for child in split_children(cu, mode).expect("legal split") {
        let sub = go(&child, c, qt_only, memo);
        total.cus += sub.cus;
        total.pixels += sub.pixels;
      }
    }
    memo.insert(key, total);
    total
  }
  go(&CuRect::root(0, 0, ctu_size), c, qt_only, &mut HashMap::new())
}
