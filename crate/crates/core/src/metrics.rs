//! Complexity reductions, PSNR, BD-rate and trade-off reports.
//!
//! Reductions follow the usual per-QP averaged form
//! `100 / |QP| * sum_i (a_i - x_i) / a_i` and are evaluated in exact rational
//! arithmetic, so the only rounding is the final conversion to `f64`.

use std::collections::BTreeMap;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::rd::Frame;

/// QPs of the common test conditions.
pub const CTC_QPS: [u8; 4] = [22, 27, 32, 37];

/// PSNR reported for a lossless reconstruction.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
  #[error("anchor {what} counter is zero at QP {qp}")]
  ZeroAnchor { what: &'static str, qp: u8 },
  #[error("QP sets differ between test and anchor")]
  QpMismatch,
  #[error("measurement has no QP points")]
  Empty,
  #[error("wall time was not measured")]
  MissingTiming,
  #[error("{0} must be a finite non-negative value")]
  BadValue(&'static str),
  #[error("RD curve is not strictly monotone")]
  NonMonotone,
  #[error("RD curves have no overlapping PSNR range")]
  EmptyOverlap,
  #[error("RD curve needs at least two points")]
  TooFewPoints,
  #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
  SizeMismatch(u32, u32, u32, u32),
  #[error(transparent)]
  Csv(#[from] csv::Error),
  #[error(transparent)]
  Io(#[from] std::io::Error),
}

/// Work and quality of one configuration at one QP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpMeasurement {
  pub cu_reconstructions: u64,
  pub pixel_reconstructions: u64,
  /// Seconds; `None` when timing was not requested.
  pub wall_time: Option<f64>,
  pub rate_bits: f64,
  pub psnr: f64,
}

impl QpMeasurement {
  /// Sums counters, times and rates; PSNR is recomputed by the caller.
  pub fn accumulate(&mut self, o: &QpMeasurement) {
    self.cu_reconstructions += o.cu_reconstructions;
    self.pixel_reconstructions += o.pixel_reconstructions;
    self.wall_time = self.wall_time.zip(o.wall_time).map(|(a, b)| a + b);
    self.rate_bits += o.rate_bits;
  }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QpSeriesMeasurement {
  pub points: BTreeMap<u8, QpMeasurement>,
}

impl QpSeriesMeasurement {
  pub fn new(points: impl IntoIterator<Item = (u8, QpMeasurement)>) -> QpSeriesMeasurement {
    QpSeriesMeasurement { points: points.into_iter().collect() }
  }

  /// Whether rate strictly decreases as QP grows.
  pub fn rate_is_monotone(&self) -> bool {
    self.points.values().zip(self.points.values().skip(1)).all(|(a, b)| b.rate_bits < a.rate_bits)
  }

  /// `(rate, psnr)` pairs in QP order.
  pub fn rd_curve(&self) -> Vec<(f64, f64)> {
    self.points.values().map(|p| (p.rate_bits, p.psnr)).collect()
  }
}

fn exact(v: f64, what: &'static str) -> Result<BigRational, MetricsError> {
  if !v.is_finite() || v < 0.0 {
    return Err(MetricsError::BadValue(what));
  }
  BigRational::from_float(v).ok_or(MetricsError::BadValue(what))
}

fn paired<'a>(
  test: &'a QpSeriesMeasurement,
  anchor: &'a QpSeriesMeasurement,
) -> Result<impl Iterator<Item = (u8, &'a QpMeasurement, &'a QpMeasurement)>, MetricsError> {
  if anchor.points.is_empty() {
    return Err(MetricsError::Empty);
  }
  if !test.points.keys().eq(anchor.points.keys()) {
    return Err(MetricsError::QpMismatch);
  }
  Ok(anchor.points.iter().zip(test.points.values()).map(|((&qp, a), t)| (qp, t, a)))
}

/// Exact `sum_i (a_i - x_i) / a_i / n` as a rational.
fn mean_reduction(
  pairs: impl Iterator<Item = (u8, BigRational, BigRational)>,
  what: &'static str,
) -> Result<BigRational, MetricsError> {
  let mut sum = BigRational::zero();
  let mut n = 0i64;
  for (qp, x, a) in pairs {
    if a.is_zero() {
      return Err(MetricsError::ZeroAnchor { what, qp });
    }
    sum += (&a - &x) / &a;
    n += 1;
  }
  Ok(sum / BigRational::from_integer(BigInt::from(n)))
}

fn to_percent(r: BigRational) -> f64 {
  (r * BigRational::from_integer(BigInt::from(100))).to_f64().unwrap_or(f64::NAN)
}

fn counter_reduction(
  test: &QpSeriesMeasurement,
  anchor: &QpSeriesMeasurement,
  what: &'static str,
  get: fn(&QpMeasurement) -> u64,
) -> Result<f64, MetricsError> {
  let int = |v: u64| BigRational::from_integer(BigInt::from(v));
  let pairs = paired(test, anchor)?.map(|(qp, t, a)| (qp, int(get(t)), int(get(a))));
  Ok(to_percent(mean_reduction(pairs, what)?))
}

/// Mean per-QP reduction of reconstructed CUs, in percent.
pub fn cu_reduction(test: &QpSeriesMeasurement, anchor: &QpSeriesMeasurement) -> Result<f64, MetricsError> {
  counter_reduction(test, anchor, "CU", |m| m.cu_reconstructions)
}

/// Mean per-QP reduction of reconstructed pixels, in percent.
pub fn pixel_reduction(
  test: &QpSeriesMeasurement,
  anchor: &QpSeriesMeasurement,
) -> Result<f64, MetricsError> {
  counter_reduction(test, anchor, "pixel", |m| m.pixel_reconstructions)
}

/// Mean per-QP reduction of wall time, in percent.
pub fn et_reduction(test: &QpSeriesMeasurement, anchor: &QpSeriesMeasurement) -> Result<f64, MetricsError> {
  let mut pairs = Vec::new();
  for (qp, t, a) in paired(test, anchor)? {
    let (Some(tt), Some(ta)) = (t.wall_time, a.wall_time) else {
      return Err(MetricsError::MissingTiming);
    };
    pairs.push((qp, exact(tt, "wall time")?, exact(ta, "wall time")?));
  }
  Ok(to_percent(mean_reduction(pairs.into_iter(), "time")?))
}

/// Raw work ratios `100 / |QP| * sum_i x_i / a_i` for CUs and pixels; values
/// above 100 mean more work than the anchor.
pub fn work_ratios(
  test: &QpSeriesMeasurement,
  anchor: &QpSeriesMeasurement,
) -> Result<(f64, f64), MetricsError> {
  Ok((100.0 - cu_reduction(test, anchor)?, 100.0 - pixel_reduction(test, anchor)?))
}

/// Sum of squared differences between two equally sized frames.
pub fn sse(original: &Frame, recon: &Frame) -> Result<u64, MetricsError> {
  if original.width != recon.width || original.height != recon.height {
    return Err(MetricsError::SizeMismatch(original.width, original.height, recon.width, recon.height));
  }
  Ok(original.samples.iter().zip(&recon.samples).map(|(&a, &b)| (a as i64 - b as i64).pow(2) as u64).sum())
}

/// PSNR from a total SSE over `samples` 8-bit samples, capped at
/// [`PSNR_CAP`].
pub fn psnr_from_sse(sse: u64, samples: u64) -> f64 {
  if sse == 0 || samples == 0 {
    return PSNR_CAP;
  }
  let mse = sse as f64 / samples as f64;
  (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(original: &Frame, recon: &Frame) -> Result<f64, MetricsError> {
  Ok(psnr_from_sse(sse(original, recon)?, original.samples.len() as u64))
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes,
/// the same end conditions as SciPy's `PchipInterpolator`).
#[derive(Clone, Debug)]
pub struct Pchip {
  x: Vec<f64>,
  y: Vec<f64>,
  d: Vec<f64>,
}

impl Pchip {
  /// `x` must be strictly increasing.
  pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Pchip, MetricsError> {
    if x.len() < 2 || x.len() != y.len() {
      return Err(MetricsError::TooFewPoints);
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
      return Err(MetricsError::NonMonotone);
    }
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
      d[0] = m[0];
      d[1] = m[0];
      return Ok(Pchip { x, y, d });
    }
    for k in 1..n - 1 {
      if m[k - 1] * m[k] > 0.0 {
        let w1 = 2.0 * h[k] + h[k - 1];
        let w2 = h[k] + 2.0 * h[k - 1];
        d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
      }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
      let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
      if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
      } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
      } else {
        d
      }
    };
    d[0] = end(h[0], h[1], m[0], m[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    Ok(Pchip { x, y, d })
  }

  fn segment(&self, v: f64) -> usize {
    self.x.partition_point(|&xi| xi <= v).saturating_sub(1).min(self.x.len() - 2)
  }

  /// Power-basis coefficients of segment `k` in `s = v - x_k`.
  fn coeffs(&self, k: usize) -> [f64; 4] {
    let h = self.x[k + 1] - self.x[k];
    let m = (self.y[k + 1] - self.y[k]) / h;
    let (d0, d1) = (self.d[k], self.d[k + 1]);
    [self.y[k], d0, (3.0 * m - 2.0 * d0 - d1) / h, (d0 + d1 - 2.0 * m) / (h * h)]
  }

  pub fn eval(&self, v: f64) -> f64 {
    let k = self.segment(v);
    let c = self.coeffs(k);
    let s = v - self.x[k];
    c[0] + s * (c[1] + s * (c[2] + s * c[3]))
  }

  /// Exact integral over `[a, b]` inside the knot range.
  pub fn integral(&self, a: f64, b: f64) -> f64 {
    let prim = |c: &[f64; 4], s: f64| s * (c[0] + s * (c[1] / 2.0 + s * (c[2] / 3.0 + s * c[3] / 4.0)));
    let mut total = 0.0;
    for k in 0..self.x.len() - 1 {
      let lo = a.max(self.x[k]);
      let hi = b.min(self.x[k + 1]);
      if hi > lo {
        let c = self.coeffs(k);
        total += prim(&c, hi - self.x[k]) - prim(&c, lo - self.x[k]);
      }
    }
    total
  }
}

/// Interpolant of `ln(rate)` against PSNR. Points are sorted by rate and must
/// then be strictly increasing in PSNR.
fn log_rate_curve(points: &[(f64, f64)]) -> Result<Pchip, MetricsError> {
  if points.len() < 2 {
    return Err(MetricsError::TooFewPoints);
  }
  if points.iter().any(|&(r, p)| !(r > 0.0) || !r.is_finite() || !p.is_finite()) {
    return Err(MetricsError::BadValue("rate"));
  }
  let mut sorted = points.to_vec();
  sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
  if sorted.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
    return Err(MetricsError::NonMonotone);
  }
  Pchip::new(sorted.iter().map(|p| p.1).collect(), sorted.iter().map(|p| p.0.ln()).collect())
}

/// Bjontegaard delta rate of `test` against `anchor` in percent, from
/// `(rate, psnr)` points. Negative means the test saves rate.
pub fn bd_rate(test: &[(f64, f64)], anchor: &[(f64, f64)]) -> Result<f64, MetricsError> {
  let t = log_rate_curve(test)?;
  let a = log_rate_curve(anchor)?;
  let lo = t.x[0].max(a.x[0]);
  let hi = t.x[t.x.len() - 1].min(a.x[a.x.len() - 1]);
  if !(hi > lo) {
    return Err(MetricsError::EmptyOverlap);
  }
  let avg = (t.integral(lo, hi) - a.integral(lo, hi)) / (hi - lo);
  Ok(avg.exp_m1() * 100.0)
}

/// One row of a trade-off report. The `*_ratio_pct` columns hold the mean
/// per-QP reductions; the `*_fraction_pct` fields hold the raw work ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
  pub label: String,
  pub n: Option<usize>,
  pub t: Option<f64>,
  pub bd_rate_pct: f64,
  pub et_pct: Option<f64>,
  pub pixel_ratio_pct: f64,
  pub cu_ratio_pct: f64,
  pub pixel_fraction_pct: f64,
  pub cu_fraction_pct: f64,
}

pub const CSV_HEADER: [&str; 7] =
  ["label", "N", "T", "bd_rate_pct", "et_pct", "pixel_ratio_pct", "cu_ratio_pct"];

fn fmt(v: f64) -> String {
  // avoid "-0.000000"
  let s = format!("{v:.6}");
  if s.trim_start_matches('-').trim_matches(|c| c == '0' || c == '.').is_empty() {
    "0.000000".into()
  } else {
    s
  }
}

/// Writes rows as CSV with a single header line.
pub fn write_tradeoff_csv<W: Write>(points: &[TradeoffPoint], w: W) -> Result<(), MetricsError> {
  let mut out = csv::Writer::from_writer(w);
  out.write_record(CSV_HEADER)?;
  for p in points {
    out.write_record([
      p.label.clone(),
      p.n.map(|n| n.to_string()).unwrap_or_default(),
      p.t.map(|t| format!("{t}")).unwrap_or_default(),
      fmt(p.bd_rate_pct),
      p.et_pct.map(fmt).unwrap_or_default(),
      fmt(p.pixel_ratio_pct),
      fmt(p.cu_ratio_pct),
    ])?;
  }
  out.flush()?;
  Ok(())
}

/// Sorts rows by ascending pixel reduction, ties by label.
pub fn sort_by_pixel_ratio(points: &mut [TradeoffPoint]) {
  points.sort_by(|a, b| a.pixel_ratio_pct.total_cmp(&b.pixel_ratio_pct).then_with(|| a.label.cmp(&b.label)));
}
