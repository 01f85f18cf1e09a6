//! Fixed-dimension CU state: neighbor, parent, block and spatial (HOG)
//! feature groups, plus the packed split-series codec.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::{CuRect, SplitMode};
use crate::rd::{Frame, LeafCost};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
  #[error("split series longer than {MAX_SEGMENTS} segments")]
  TooLong,
  #[error("NS cannot appear in a split series")]
  NoSplitInSeries,
  #[error("invalid split-series code {0} at segment {1}")]
  BadCode(u64, usize),
}

/// Segments that fit in 64 bits at 5 bits each.
pub const MAX_SEGMENTS: usize = 12;
const SEGMENT_BITS: u32 = 5;
const SEGMENT_MASK: u64 = 0b1_1111;

/// Segments of each neighbor series kept in the state vector.
pub const S_MAX: usize = 10;
/// HOG orientation bins.
pub const HOG_BINS: usize = 8;
/// Upper clamp for normalized cost features.
pub const COST_CLAMP: f64 = 4.0;

pub const NI_LEN: usize = 6;
pub const SERIES_LEN: usize = 2 * S_MAX;
pub const PI_LEN: usize = 3;
pub const BI_LEN: usize = 4;
/// Length of every state vector.
pub const FEATURE_DIM: usize = NI_LEN + 2 * SERIES_LEN + PI_LEN + BI_LEN + HOG_BINS;

pub const OFF_TOP_SERIES: usize = NI_LEN;
pub const OFF_LEFT_SERIES: usize = OFF_TOP_SERIES + SERIES_LEN;
pub const OFF_PARENT: usize = OFF_LEFT_SERIES + SERIES_LEN;
pub const OFF_BLOCK: usize = OFF_PARENT + PI_LEN;
pub const OFF_HOG: usize = OFF_BLOCK + BI_LEN;

/// Split modes from the CTU root down to a CU, five bits per depth, root in
/// the low bits. Code 0 marks an unused segment, codes 1..=6 are
/// `mode index + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSeries {
  pub packed: u64,
  pub length: u8,
}

impl SplitSeries {
  pub fn push(self, mode: SplitMode) -> Result<SplitSeries, FeatureError> {
    if mode == SplitMode::Ns {
      return Err(FeatureError::NoSplitInSeries);
    }
    if usize::from(self.length) >= MAX_SEGMENTS {
      return Err(FeatureError::TooLong);
    }
    let code = mode.index() as u64 + 1;
    Ok(SplitSeries {
      packed: self.packed | code << (SEGMENT_BITS * u32::from(self.length)),
      length: self.length + 1,
    })
  }

  /// Appends `mode`, saturating at [`MAX_SEGMENTS`].
  pub fn pushed_saturating(self, mode: SplitMode) -> SplitSeries {
    self.push(mode).unwrap_or(self)
  }

  pub fn segment(&self, i: usize) -> u64 {
    (self.packed >> (SEGMENT_BITS as usize * i)) & SEGMENT_MASK
  }
}

pub fn encode_split_series(path: &[SplitMode]) -> Result<SplitSeries, FeatureError> {
  if path.len() > MAX_SEGMENTS {
    return Err(FeatureError::TooLong);
  }
  path.iter().try_fold(SplitSeries::default(), |s, &m| s.push(m))
}

/// Normalized `(N_CU / 4, orientation)` pair of one split-series segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NcuHvPair {
  pub n_cu_norm: f64,
  pub hv: f64,
}

impl NcuHvPair {
  pub fn of_mode(mode: SplitMode) -> NcuHvPair {
    let (n_cu, hv) = match mode {
      SplitMode::Ns => (0.0, 0.0),
      SplitMode::Qt => (4.0, 0.0),
      SplitMode::Bth => (2.0, 1.0),
      SplitMode::Btv => (2.0, -1.0),
      SplitMode::Tth => (3.0, 1.0),
      SplitMode::Ttv => (3.0, -1.0),
    };
    NcuHvPair { n_cu_norm: n_cu / 4.0, hv }
  }
}

/// Per-segment pairs, root first, truncated or zero-padded to [`S_MAX`].
pub fn decode_split_series(s: &SplitSeries) -> Result<Vec<NcuHvPair>, FeatureError> {
  let mut out = vec![NcuHvPair::default(); S_MAX];
  for i in 0..MAX_SEGMENTS {
    let code = s.segment(i);
    if code == 0 {
      continue;
    }
    if code > 6 {
      return Err(FeatureError::BadCode(code, i));
    }
    if code == 1 {
      return Err(FeatureError::NoSplitInSeries);
    }
    if i < S_MAX {
      out[i] = NcuHvPair::of_mode(SplitMode::from_index(code as usize - 1).unwrap());
    }
  }
  Ok(out)
}

/// Magnitude-weighted histogram of unsigned gradient orientations over the
/// block interior, L1-normalized. Bin `i` is centered on `i * pi / 8` and votes
/// are split linearly between the two nearest centers.
pub fn hog(block: &[u8], width: usize, height: usize) -> [f64; HOG_BINS] {
  let mut bins = [0.0; HOG_BINS];
  let bin_width = std::f64::consts::PI / HOG_BINS as f64;
  let at = |x: usize, y: usize| f64::from(block[y * width + x]);
  for y in 1..height.saturating_sub(1) {
    for x in 1..width.saturating_sub(1) {
      let gx = at(x + 1, y) - at(x - 1, y);
      let gy = at(x, y + 1) - at(x, y - 1);
      let mag = gx.hypot(gy);
      if mag == 0.0 {
        continue;
      }
      let mut theta = gy.atan2(gx);
      if theta < 0.0 {
        theta += std::f64::consts::PI;
      }
      if theta >= std::f64::consts::PI {
        theta -= std::f64::consts::PI;
      }
      let pos = theta / bin_width;
      let lo = pos.floor();
      let frac = pos - lo;
      let lo = lo as usize % HOG_BINS;
      bins[lo] += mag * (1.0 - frac);
      bins[(lo + 1) % HOG_BINS] += mag * frac;
    }
  }
  let total: f64 = bins.iter().sum();
  if total > 0.0 {
    bins.iter_mut().for_each(|b| *b /= total);
  }
  bins
}

/// What a committed leaf leaves behind for its neighbors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeafInfo {
  pub cost: f64,
  pub area: u32,
  pub qt_depth: u8,
  pub series: SplitSeries,
}

/// Final leaf covering each 4x4 unit of the frame, `None` where nothing has
/// been committed yet.
#[derive(Clone, Debug)]
pub struct CuMap {
  units_w: usize,
  units_h: usize,
  cells: Vec<Option<LeafInfo>>,
}

const UNIT: u32 = 4;

impl CuMap {
  pub fn new(width: u32, height: u32) -> CuMap {
    let units_w = width.div_ceil(UNIT) as usize;
    let units_h = height.div_ceil(UNIT) as usize;
    CuMap { units_w, units_h, cells: vec![None; units_w * units_h] }
  }

  fn span(cu: &CuRect) -> (usize, usize, usize, usize) {
    let x0 = (cu.x / UNIT) as usize;
    let y0 = (cu.y / UNIT) as usize;
    (x0, y0, x0 + (cu.width / UNIT) as usize, y0 + (cu.height / UNIT) as usize)
  }

  pub fn at(&self, x: u32, y: u32) -> Option<&LeafInfo> {
    let (ux, uy) = ((x / UNIT) as usize, (y / UNIT) as usize);
    if ux >= self.units_w || uy >= self.units_h {
      return None;
    }
    self.cells[uy * self.units_w + ux].as_ref()
  }

  pub fn set(&mut self, cu: &CuRect, info: Option<LeafInfo>) {
    let (x0, y0, x1, y1) = Self::span(cu);
    for y in y0..y1 {
      self.cells[y * self.units_w + x0..y * self.units_w + x1].fill(info);
    }
  }

  pub fn region(&self, cu: &CuRect) -> Vec<Option<LeafInfo>> {
    let (x0, y0, x1, y1) = Self::span(cu);
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
      out.extend_from_slice(&self.cells[y * self.units_w + x0..y * self.units_w + x1]);
    }
    out
  }

  pub fn restore_region(&mut self, cu: &CuRect, saved: &[Option<LeafInfo>]) {
    let (x0, y0, x1, y1) = Self::span(cu);
    let w = x1 - x0;
    for (r, y) in (y0..y1).enumerate() {
      self.cells[y * self.units_w + x0..y * self.units_w + x1].copy_from_slice(&saved[r * w..(r + 1) * w]);
    }
  }
}

/// Parent NS evaluation, for the PI group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParentInfo {
  pub leaf: LeafCost,
  pub area: u64,
}

/// Everything [`extract_state`] reads for one CU.
pub struct StateInputs<'a> {
  pub frame: &'a Frame,
  pub cu: &'a CuRect,
  pub qp: u8,
  pub lambda: f64,
  pub max_qt_depth: u8,
  pub map: &'a CuMap,
  pub parent: Option<ParentInfo>,
  pub current_ns: LeafCost,
}

pub type StateVector = Vec<f64>;

fn clamp_cost(v: f64) -> f64 {
  if v.is_finite() {
    v.clamp(0.0, COST_CLAMP)
  } else {
    COST_CLAMP
  }
}

fn write_series(out: &mut [f64], series: &SplitSeries) {
  let pairs = decode_split_series(series).expect("series built from legal splits");
  for (i, p) in pairs.iter().enumerate() {
    out[2 * i] = p.n_cu_norm;
    out[2 * i + 1] = p.hv;
  }
}

/// Builds the [`FEATURE_DIM`]-long state of a CU.
///
/// Layout: top/left neighbor normalized cost, top/left QT depth over
/// `max_qt_depth`, top/left availability flags; top and left split series as
/// `S_MAX` pairs each; parent NS cost, rate, distortion; log2 width and height
/// over 7, qp over 51, current NS cost; HOG of the source block.
///
/// Costs and distortions are divided by `lambda * area` and rates by `area`,
/// so a normalized cost is the sum of its normalized distortion and rate.
/// Neighbors are the committed leaves covering the sample just above and
/// just left of the CU's top-left corner.
pub fn extract_state(inp: &StateInputs<'_>) -> StateVector {
  let mut s = vec![0.0; FEATURE_DIM];
  let cu = inp.cu;
  let top = if cu.y > 0 { inp.map.at(cu.x, cu.y - 1) } else { None };
  let left = if cu.x > 0 { inp.map.at(cu.x - 1, cu.y) } else { None };
  let qt_norm = |d: u8| if inp.max_qt_depth == 0 { 0.0 } else { f64::from(d) / f64::from(inp.max_qt_depth) };
  if let Some(t) = top {
    s[0] = clamp_cost(t.cost / (inp.lambda * f64::from(t.area)));
    s[2] = qt_norm(t.qt_depth);
    s[4] = 1.0;
    write_series(&mut s[OFF_TOP_SERIES..OFF_TOP_SERIES + SERIES_LEN], &t.series);
  }
  if let Some(l) = left {
    s[1] = clamp_cost(l.cost / (inp.lambda * f64::from(l.area)));
    s[3] = qt_norm(l.qt_depth);
    s[5] = 1.0;
    write_series(&mut s[OFF_LEFT_SERIES..OFF_LEFT_SERIES + SERIES_LEN], &l.series);
  }
  if let Some(p) = inp.parent {
    let a = p.area as f64;
    s[OFF_PARENT] = clamp_cost(p.leaf.cost / (inp.lambda * a));
    s[OFF_PARENT + 1] = clamp_cost(p.leaf.rate / a);
    s[OFF_PARENT + 2] = clamp_cost(p.leaf.distortion / (inp.lambda * a));
  }
  let area = cu.area() as f64;
  s[OFF_BLOCK] = f64::from(cu.width).log2() / 7.0;
  s[OFF_BLOCK + 1] = f64::from(cu.height).log2() / 7.0;
  s[OFF_BLOCK + 2] = f64::from(inp.qp) / 51.0;
  s[OFF_BLOCK + 3] = clamp_cost(inp.current_ns.cost / (inp.lambda * area));
  let block = inp.frame.block(cu);
  s[OFF_HOG..].copy_from_slice(&hog(&block, cu.width as usize, cu.height as usize));
  s
}
