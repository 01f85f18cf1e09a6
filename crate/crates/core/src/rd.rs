//! Deterministic intra RD core: DC prediction, orthonormal DCT-II, uniform
//! quantization, a coefficient rate proxy and the QP to lambda mapping.

use std::cell::Cell;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::{CuRect, ModeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RdError {
  #[error("qp {0} outside 0..=51")]
  QpRange(i32),
  #[error("frame geometry {width}x{height} does not match {len} samples")]
  Geometry { width: u32, height: u32, len: usize },
}

pub const MAX_QP: u8 = 51;

/// An 8-bit luma plane, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
  pub width: u32,
  pub height: u32,
  pub samples: Vec<u8>,
}

impl Frame {
  pub fn new(width: u32, height: u32, samples: Vec<u8>) -> Result<Frame, RdError> {
    if samples.len() != width as usize * height as usize || width == 0 || height == 0 {
      return Err(RdError::Geometry { width, height, len: samples.len() });
    }
    Ok(Frame { width, height, samples })
  }

  pub fn filled(width: u32, height: u32, value: u8) -> Frame {
    Frame { width, height, samples: vec![value; width as usize * height as usize] }
  }

  #[inline]
  pub fn at(&self, x: u32, y: u32) -> u8 {
    self.samples[y as usize * self.width as usize + x as usize]
  }

  /// Samples of `cu` in row-major order.
  pub fn block(&self, cu: &CuRect) -> Vec<u8> {
    let mut out = Vec::with_capacity(cu.area() as usize);
    for y in cu.y..cu.y + cu.height {
      let row = y as usize * self.width as usize;
      out.extend_from_slice(&self.samples[row + cu.x as usize..row + (cu.x + cu.width) as usize]);
    }
    out
  }

  /// Pads right and bottom edges by replication up to multiples of `unit`.
  pub fn padded_to(&self, unit: u32) -> Frame {
    let w = self.width.div_ceil(unit) * unit;
    let h = self.height.div_ceil(unit) * unit;
    if w == self.width && h == self.height {
      return self.clone();
    }
    let mut samples = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
      let sy = y.min(self.height - 1);
      for x in 0..w {
        samples.push(self.at(x.min(self.width - 1), sy));
      }
    }
    Frame { width: w, height: h, samples }
  }

  /// The top-left `width` x `height` window.
  pub fn cropped(&self, width: u32, height: u32) -> Frame {
    self.cropped_at(0, 0, width, height)
  }

  pub fn cropped_at(&self, x: u32, y: u32, width: u32, height: u32) -> Frame {
    let mut samples = Vec::with_capacity(width as usize * height as usize);
    for r in y..y + height {
      let row = r as usize * self.width as usize + x as usize;
      samples.extend_from_slice(&self.samples[row..row + width as usize]);
    }
    Frame { width, height, samples }
  }

  /// Copies `src` into this frame with its top-left corner at `(x, y)`.
  pub fn paste(&mut self, src: &Frame, x: u32, y: u32) {
    for r in 0..src.height {
      let dst = (y + r) as usize * self.width as usize + x as usize;
      let s = r as usize * src.width as usize;
      self.samples[dst..dst + src.width as usize].copy_from_slice(&src.samples[s..s + src.width as usize]);
    }
  }
}

/// Which samples the DC predictor averages over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionReference {
  /// Source samples at already-reconstructed neighbor positions. Leaf costs
  /// then depend only on CU geometry, so the partition search is an exact
  /// dynamic program.
  #[default]
  Source,
  /// Reconstructed samples (closed loop). Sibling decisions leak into later
  /// leaf costs, so the recursive search is greedy rather than exact.
  Reconstruction,
}

/// Already-reconstructed samples plus the coverage mask used for neighbor
/// availability.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconState {
  pub width: u32,
  pub height: u32,
  pub recon: Vec<u8>,
  pub mask: Vec<bool>,
}

impl ReconState {
  pub fn new(width: u32, height: u32) -> ReconState {
    let n = width as usize * height as usize;
    ReconState { width, height, recon: vec![0; n], mask: vec![false; n] }
  }

  #[inline]
  fn idx(&self, x: u32, y: u32) -> usize {
    y as usize * self.width as usize + x as usize
  }

  #[inline]
  pub fn available(&self, x: u32, y: u32) -> bool {
    self.mask[self.idx(x, y)]
  }

  /// Writes a reconstructed block and marks it available.
  pub fn commit(&mut self, cu: &CuRect, block: &[u8]) {
    let w = cu.width as usize;
    for (r, y) in (cu.y..cu.y + cu.height).enumerate() {
      let i = self.idx(cu.x, y);
      self.recon[i..i + w].copy_from_slice(&block[r * w..(r + 1) * w]);
      self.mask[i..i + w].fill(true);
    }
  }

  /// Marks `cu` as not yet reconstructed.
  pub fn clear(&mut self, cu: &CuRect) {
    let w = cu.width as usize;
    for y in cu.y..cu.y + cu.height {
      let i = self.idx(cu.x, y);
      self.mask[i..i + w].fill(false);
    }
  }

  pub fn block(&self, cu: &CuRect) -> Vec<u8> {
    let w = cu.width as usize;
    let mut out = Vec::with_capacity(cu.area() as usize);
    for y in cu.y..cu.y + cu.height {
      let i = self.idx(cu.x, y);
      out.extend_from_slice(&self.recon[i..i + w]);
    }
    out
  }

  pub fn to_frame(&self) -> Frame {
    Frame { width: self.width, height: self.height, samples: self.recon.clone() }
  }
}

/// Lagrange multiplier for `qp`: `0.57 * 2^((qp - 12) / 3)`.
pub fn lambda_of_qp(qp: i32) -> Result<f64, RdError> {
  if !(0..=i32::from(MAX_QP)).contains(&qp) {
    return Err(RdError::QpRange(qp));
  }
  Ok(lambda_unchecked(qp as u8))
}

#[inline]
pub(crate) fn lambda_unchecked(qp: u8) -> f64 {
  0.57 * 2f64.powf((f64::from(qp) - 12.0) / 3.0)
}

/// Quantizer step for `qp`: `2^((qp - 4) / 6)`.
pub fn qstep(qp: u8) -> f64 {
  2f64.powf((f64::from(qp) - 4.0) / 6.0)
}

/// Fixed-length code length (bits) for choosing one mode out of `legal`.
pub fn mode_bits(legal: ModeSet) -> f64 {
  let n = legal.len();
  if n <= 1 {
    0.0
  } else {
    f64::from(usize::BITS - (n - 1).leading_zeros())
  }
}

/// Syntax cost of signaling a split out of `legal`: `lambda * ceil(log2 |legal|)`.
pub fn split_signal_cost(legal: ModeSet, qp: u8) -> f64 {
  lambda_unchecked(qp) * mode_bits(legal)
}

const DCT_SIZES: [usize; 6] = [4, 8, 16, 32, 64, 128];

/// Orthonormal DCT-II basis, `n x n`, row k holds frequency k.
fn dct_basis(n: usize) -> &'static [f64] {
  static TABLES: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
  let tables = TABLES.get_or_init(|| {
    DCT_SIZES
      .iter()
      .map(|&n| {
        let mut m = vec![0.0; n * n];
        for k in 0..n {
          let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
          for i in 0..n {
            m[k * n + i] =
              scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
          }
        }
        m
      })
      .collect()
  });
  let slot = DCT_SIZES.iter().position(|&s| s == n).expect("unsupported transform size");
  &tables[slot]
}

/// Separable 2-D orthonormal DCT-II of a `w x h` block.
pub fn forward_dct(block: &[f64], w: usize, h: usize) -> Vec<f64> {
  let (bw, bh) = (dct_basis(w), dct_basis(h));
  let mut tmp = vec![0.0; w * h];
  for r in 0..h {
    let row = &block[r * w..(r + 1) * w];
    for k in 0..w {
      let basis = &bw[k * w..(k + 1) * w];
      tmp[r * w + k] = row.iter().zip(basis).map(|(a, b)| a * b).sum();
    }
  }
  let mut out = vec![0.0; w * h];
  for k in 0..h {
    let basis = &bh[k * h..(k + 1) * h];
    for c in 0..w {
      let mut acc = 0.0;
      for (r, b) in basis.iter().enumerate() {
        acc += tmp[r * w + c] * b;
      }
      out[k * w + c] = acc;
    }
  }
  out
}

/// Inverse of [`forward_dct`].
pub fn inverse_dct(coeffs: &[f64], w: usize, h: usize) -> Vec<f64> {
  let (bw, bh) = (dct_basis(w), dct_basis(h));
  let mut tmp = vec![0.0; w * h];
  for r in 0..h {
    for c in 0..w {
      let mut acc = 0.0;
      for k in 0..h {
        acc += bh[k * h + r] * coeffs[k * w + c];
      }
      tmp[r * w + c] = acc;
    }
  }
  let mut out = vec![0.0; w * h];
  for r in 0..h {
    let row = &tmp[r * w..(r + 1) * w];
    for c in 0..w {
      let mut acc = 0.0;
      for (k, v) in row.iter().enumerate() {
        acc += bw[k * w + c] * v;
      }
      out[r * w + c] = acc;
    }
  }
  out
}

/// Forward transform and uniform quantization to integer levels.
pub fn transform_quantize(residual: &[i32], w: usize, h: usize, qp: u8) -> Vec<i32> {
  let step = qstep(qp);
  let input: Vec<f64> = residual.iter().map(|&v| f64::from(v)).collect();
  forward_dct(&input, w, h).into_iter().map(|c| (c / step).round() as i32).collect()
}

/// Dequantization and inverse transform, rounded to integer residuals.
pub fn dequantize_inverse(levels: &[i32], w: usize, h: usize, qp: u8) -> Vec<i32> {
  let step = qstep(qp);
  let coeffs: Vec<f64> = levels.iter().map(|&l| f64::from(l) * step).collect();
  inverse_dct(&coeffs, w, h).into_iter().map(|v| v.round() as i32).collect()
}

/// Bits charged for one quantized level.
#[inline]
pub fn level_bits(level: i32) -> f64 {
  if level == 0 {
    0.5
  } else {
    1.0 + 2.0 * (1.0 + f64::from(level.unsigned_abs())).log2()
  }
}

/// DC value predicted for `cu`: rounded mean of the available samples on the
/// row above and the column to the left, or 128 when none are available.
pub fn dc_prediction(frame: &Frame, cu: &CuRect, rs: &ReconState, reference: PredictionReference) -> u8 {
  let sample = |x: u32, y: u32| -> u32 {
    match reference {
      PredictionReference::Source => u32::from(frame.at(x, y)),
      PredictionReference::Reconstruction => u32::from(rs.recon[rs.idx(x, y)]),
    }
  };
  let (mut sum, mut n) = (0u32, 0u32);
  if cu.y > 0 {
    for x in cu.x..cu.x + cu.width {
      if rs.available(x, cu.y - 1) {
        sum += sample(x, cu.y - 1);
        n += 1;
      }
    }
  }
  if cu.x > 0 {
    for y in cu.y..cu.y + cu.height {
      if rs.available(cu.x - 1, y) {
        sum += sample(cu.x - 1, y);
        n += 1;
      }
    }
  }
  if n == 0 {
    128
  } else {
    ((sum + n / 2) / n) as u8
  }
}

/// The constant DC prediction block for `cu`.
pub fn predict_intra(frame: &Frame, cu: &CuRect, rs: &ReconState, reference: PredictionReference) -> Vec<u8> {
  vec![dc_prediction(frame, cu, rs, reference); cu.area() as usize]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafCost {
  pub distortion: f64,
  pub rate: f64,
  pub cost: f64,
}

impl LeafCost {
  pub fn new(distortion: f64, rate: f64, lambda: f64) -> LeafCost {
    LeafCost { distortion, rate, cost: distortion + lambda * rate }
  }
}

thread_local! {
  static LEAF_EVALS: Cell<(u64, u64)> = const { Cell::new((0, 0)) };
}

/// Per-thread `(leaf evaluations, pixels)` counted inside [`leaf_rd_cost`];
/// an instrumentation shadow of the search counters.
pub fn leaf_eval_counter() -> (u64, u64) {
  LEAF_EVALS.with(Cell::get)
}

/// RD cost of coding `cu` without further split. `mode_bits` is the cost of
/// signaling NS. The reconstruction is returned, not committed.
pub fn leaf_rd_cost(
  frame: &Frame,
  cu: &CuRect,
  qp: u8,
  rs: &ReconState,
  reference: PredictionReference,
  mode_bits: f64,
) -> (LeafCost, Vec<u8>) {
  LEAF_EVALS.with(|c| {
    let (n, p) = c.get();
    c.set((n + 1, p + cu.area()));
  });
  let (w, h) = (cu.width as usize, cu.height as usize);
  let pred = i32::from(dc_prediction(frame, cu, rs, reference));
  let src = frame.block(cu);
  let residual: Vec<i32> = src.iter().map(|&s| i32::from(s) - pred).collect();
  let levels = transform_quantize(&residual, w, h, qp);
  let rate = mode_bits + levels.iter().map(|&l| level_bits(l)).sum::<f64>();
  let recon_res = dequantize_inverse(&levels, w, h, qp);
  let mut distortion = 0.0;
  let recon: Vec<u8> = recon_res
    .iter()
    .zip(&src)
    .map(|(&r, &s)| {
      let v = (pred + r).clamp(0, 255);
      let e = f64::from(v - i32::from(s));
      distortion += e * e;
      v as u8
    })
    .collect();
  (LeafCost::new(distortion, rate, lambda_unchecked(qp)), recon)
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::partition::SplitMode;
  use rand::{Rng, SeedableRng};
  use rand_chacha::ChaCha8Rng;

  fn cu(x: u32, y: u32, w: u32, h: u32) -> CuRect {
    CuRect { x, y, width: w, height: h, qt_depth: 0, mtt_depth: 0, in_mtt_region: false }
  }

  #[test]
  fn lambda_values() {
    assert_eq!(lambda_of_qp(12).unwrap(), 0.57);
    assert!((lambda_of_qp(22).unwrap() - 0.57 * 2f64.powf(10.0 / 3.0)).abs() < 1e-12);
    let ratio = lambda_of_qp(37).unwrap() / lambda_of_qp(22).unwrap();
    assert!((ratio - 32.0).abs() < 1e-12);
    assert_eq!(lambda_of_qp(52), Err(RdError::QpRange(52)));
    assert_eq!(lambda_of_qp(-1), Err(RdError::QpRange(-1)));
    for qp in 0..51 {
      assert!(lambda_of_qp(qp + 1).unwrap() > lambda_of_qp(qp).unwrap());
    }
  }

  #[test]
  fn prediction_fallback_and_means() {
    let frame = Frame::filled(16, 16, 100);
    let mut rs = ReconState::new(16, 16);
    let target = cu(8, 8, 8, 8);
    for reference in [PredictionReference::Source, PredictionReference::Reconstruction] {
      assert!(predict_intra(&frame, &target, &rs, reference).iter().all(|&v| v == 128));
    }
    rs.commit(&cu(0, 0, 16, 8), &[100; 128]);
    rs.commit(&cu(0, 8, 8, 8), &[100; 64]);
    assert!(predict_intra(&frame, &target, &rs, PredictionReference::Reconstruction)
      .iter()
      .all(|&v| v == 100));

    let mut rs = ReconState::new(16, 16);
    rs.commit(&cu(8, 0, 8, 8), &[40; 64]);
    rs.commit(&cu(0, 8, 8, 8), &[80; 64]);
    assert_eq!(dc_prediction(&frame, &target, &rs, PredictionReference::Reconstruction), 60);
  }

  #[test]
  fn source_reference_reads_frame_at_available_positions() {
    let mut samples = vec![0u8; 256];
    for (i, s) in samples.iter_mut().enumerate() {
      *s = if i / 16 < 8 { 40 } else { 80 };
    }
    let frame = Frame::new(16, 16, samples).unwrap();
    let mut rs = ReconState::new(16, 16);
    rs.commit(&cu(8, 0, 8, 8), &[0; 64]);
    assert_eq!(dc_prediction(&frame, &cu(8, 8, 8, 8), &rs, PredictionReference::Source), 40);
  }

  #[test]
  fn zero_residual_quantizes_to_zero() {
    for qp in [0u8, 22, 51] {
      assert!(transform_quantize(&[0; 32], 8, 4, qp).iter().all(|&l| l == 0));
    }
  }

  #[test]
  fn constant_residual_is_pure_dc() {
    let coeffs = forward_dct(&[7.0; 64], 8, 8);
    assert!((coeffs[0] - 56.0).abs() < 1e-9);
    assert!(coeffs[1..].iter().all(|c| c.abs() < 1e-9));
    let rect = forward_dct(&[3.0; 128], 16, 8);
    assert!((rect[0] - 3.0 * 128f64.sqrt()).abs() < 1e-9);
  }

  #[test]
  fn dct_is_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (w, h) in [(4, 4), (8, 32), (64, 16), (128, 4)] {
      let x: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-255.0..255.0)).collect();
      let c = forward_dct(&x, w, h);
      let e_in: f64 = x.iter().map(|v| v * v).sum();
      let e_out: f64 = c.iter().map(|v| v * v).sum();
      assert!((e_in - e_out).abs() < 1e-6 * e_in);
      let back = inverse_dct(&c, w, h);
      assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }
  }

  #[test]
  fn mode_bits_is_ceil_log2() {
    let sets = [(1, 0.0), (2, 1.0), (3, 2.0), (4, 2.0), (5, 3.0), (6, 3.0)];
    for (n, bits) in sets {
      let s: ModeSet = SplitMode::ALL[..n].iter().copied().collect();
      assert_eq!(mode_bits(s), bits);
    }
    assert_eq!(split_signal_cost(ModeSet::FULL, 22), lambda_unchecked(22) * 3.0);
    assert_eq!(split_signal_cost(ModeSet::only(SplitMode::Ns), 22), 0.0);
  }

  #[test]
  fn flat_block_costs_only_the_rate_floor() {
    let frame = Frame::filled(16, 16, 128);
    let rs = ReconState::new(16, 16);
    for qp in [22u8, 37] {
      let (leaf, recon) = leaf_rd_cost(&frame, &cu(0, 0, 16, 16), qp, &rs, PredictionReference::Source, 0.0);
      assert_eq!(leaf.distortion, 0.0);
      assert_eq!(leaf.rate, 128.0);
      assert_eq!(leaf.cost, lambda_unchecked(qp) * 128.0);
      assert!(recon.iter().all(|&v| v == 128));
    }
  }

  #[test]
  fn checkerboard_at_qp51_is_lossy() {
    let samples = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 0 } else { 255 }).collect();
    let frame = Frame::new(8, 8, samples).unwrap();
    let rs = ReconState::new(8, 8);
    let (leaf, _) = leaf_rd_cost(&frame, &cu(0, 0, 8, 8), 51, &rs, PredictionReference::Source, 0.0);
    assert!(leaf.distortion > 0.0);
  }

  #[test]
  fn padding_replicates_edges() {
    let f = Frame::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
    let p = f.padded_to(4);
    assert_eq!((p.width, p.height), (4, 4));
    assert_eq!(p.samples, vec![1, 2, 3, 3, 4, 5, 6, 6, 4, 5, 6, 6, 4, 5, 6, 6]);
    assert_eq!(p.cropped(3, 2), f);
  }
}
