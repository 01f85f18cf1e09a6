//! Corpus measurement of selector configurations and trade-off sweeps
//! against an exhaustive anchor.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentSelector, QNetwork};
use crate::metrics::{
  bd_rate, cu_reduction, et_reduction, pixel_reduction, psnr, sort_by_pixel_ratio, work_ratios, MetricsError,
  QpMeasurement, QpSeriesMeasurement, TradeoffPoint,
};
use crate::partition::{ModeSet, PartitionConstraints};
use crate::rd::Frame;
use crate::search::{
  encode_frame, CtuScheduling, DepthCapSelector, ExhaustiveSelector, FixedSelector, RandomSelector,
  SearchParams, SplitSelector,
};

/// A split-selection policy that can be instantiated per frame.
#[derive(Clone, Debug)]
pub enum SelectorSpec {
  Exhaustive,
  /// Tighter MTT depth and TT size caps.
  DepthCap {
    max_mtt_depth: u8,
    max_tt_side: u32,
  },
  Agent {
    net: Arc<QNetwork>,
    n: usize,
    threshold: f64,
  },
  /// Uniform-random pruning control.
  Random {
    n: usize,
    seed: u64,
  },
  /// Every CU restricted to a fixed mode mask.
  Fixed(ModeSet),
}

impl SelectorSpec {
  pub fn label(&self) -> String {
    match self {
      SelectorSpec::Exhaustive => "exhaustive".into(),
      SelectorSpec::DepthCap { max_mtt_depth, max_tt_side } => {
        format!("heuristic mtt={max_mtt_depth} tt={max_tt_side}")
      }
      SelectorSpec::Agent { n, threshold, .. } => format!("agent N={n} T={threshold}"),
      SelectorSpec::Random { n, seed } => format!("random N={n} seed={seed}"),
      SelectorSpec::Fixed(m) => format!("fixed {m:?}"),
    }
  }

  pub fn n(&self) -> Option<usize> {
    match self {
      SelectorSpec::Agent { n, .. } | SelectorSpec::Random { n, .. } => Some(*n),
      _ => None,
    }
  }

  pub fn threshold(&self) -> Option<f64> {
    match self {
      SelectorSpec::Agent { threshold, .. } => Some(*threshold),
      _ => None,
    }
  }

  /// Selector for one frame; random selectors get a per-frame stream so the
  /// result does not depend on frame scheduling.
  pub fn build(&self, frame_index: usize) -> Box<dyn SplitSelector> {
    match self {
      SelectorSpec::Exhaustive => Box::new(ExhaustiveSelector),
      SelectorSpec::DepthCap { max_mtt_depth, max_tt_side } => {
        Box::new(DepthCapSelector { max_mtt_depth: *max_mtt_depth, max_tt_side: *max_tt_side })
      }
      SelectorSpec::Agent { net, n, threshold } => Box::new(AgentSelector::new(net.clone(), *n, *threshold)),
      SelectorSpec::Random { n, seed } => Box::new(RandomSelector::new(
        *n,
        seed.wrapping_add((frame_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
      )),
      SelectorSpec::Fixed(m) => Box::new(FixedSelector(*m)),
    }
  }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MeasureOptions {
  /// Encode frames concurrently.
  pub parallel: bool,
  /// Record wall time; without it reports leave ET empty.
  pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeasurement {
  pub id: String,
  pub series: QpSeriesMeasurement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeasurement {
  pub frames: Vec<FrameMeasurement>,
  /// Counters, times and rates summed over frames; PSNR is the frame mean.
  pub total: QpSeriesMeasurement,
}

fn measure_frame(
  index: usize,
  frame: &Frame,
  spec: &SelectorSpec,
  constraints: &PartitionConstraints,
  qps: &[u8],
  timing: bool,
) -> QpSeriesMeasurement {
  let padded = frame.padded_to(constraints.ctu_size);
  QpSeriesMeasurement::new(qps.iter().map(|&qp| {
    let params = SearchParams::new(qp, *constraints);
    let enc = encode_frame(&padded, &params, CtuScheduling::Sequential, false, &|_| spec.build(index));
    let recon = enc.recon.cropped(frame.width, frame.height);
    let m = QpMeasurement {
      cu_reconstructions: enc.stats.cu_reconstructions,
      pixel_reconstructions: enc.stats.pixel_reconstructions,
      wall_time: timing.then_some(enc.stats.wall_time),
      rate_bits: enc.rate,
      psnr: psnr(frame, &recon).expect("crop matches the source"),
    };
    (qp, m)
  }))
}

/// Encodes every frame at every QP with `spec`.
pub fn measure_corpus(
  frames: &[(String, Frame)],
  spec: &SelectorSpec,
  constraints: &PartitionConstraints,
  qps: &[u8],
  opts: MeasureOptions,
) -> CorpusMeasurement {
  let run = |(i, (id, f)): (usize, &(String, Frame))| FrameMeasurement {
    id: id.clone(),
    series: measure_frame(i, f, spec, constraints, qps, opts.timing),
  };
  let frames: Vec<FrameMeasurement> = if opts.parallel {
    frames.par_iter().enumerate().map(run).collect()
  } else {
    frames.iter().enumerate().map(run).collect()
  };
  let mut total = QpSeriesMeasurement::default();
  for &qp in qps {
    let mut acc = QpMeasurement {
      cu_reconstructions: 0,
      pixel_reconstructions: 0,
      wall_time: opts.timing.then_some(0.0),
      rate_bits: 0.0,
      psnr: 0.0,
    };
    for f in &frames {
      acc.accumulate(&f.series.points[&qp]);
      acc.psnr += f.series.points[&qp].psnr / frames.len() as f64;
    }
    total.points.insert(qp, acc);
  }
  CorpusMeasurement { frames, total }
}

/// Mean per-frame BD-rate. Frames whose curves coincide contribute zero
/// without curve fitting.
pub fn corpus_bd_rate(test: &CorpusMeasurement, anchor: &CorpusMeasurement) -> Result<f64, MetricsError> {
  if test.frames.len() != anchor.frames.len() || test.frames.is_empty() {
    return Err(MetricsError::QpMismatch);
  }
  let mut sum = 0.0;
  for (t, a) in test.frames.iter().zip(&anchor.frames) {
    let (ct, ca) = (t.series.rd_curve(), a.series.rd_curve());
    if ct != ca {
      sum += bd_rate(&ct, &ca)?;
    }
  }
  Ok(sum / test.frames.len() as f64)
}

/// Trade-off row of `test` against `anchor`.
pub fn tradeoff(
  spec: &SelectorSpec,
  test: &CorpusMeasurement,
  anchor: &CorpusMeasurement,
) -> Result<TradeoffPoint, MetricsError> {
  let (cu_fraction_pct, pixel_fraction_pct) = work_ratios(&test.total, &anchor.total)?;
  let et_pct = match et_reduction(&test.total, &anchor.total) {
    Ok(v) => Some(v),
    Err(MetricsError::MissingTiming) => None,
    Err(e) => return Err(e),
  };
  Ok(TradeoffPoint {
    label: spec.label(),
    n: spec.n(),
    t: spec.threshold(),
    bd_rate_pct: corpus_bd_rate(test, anchor)?,
    et_pct,
    pixel_ratio_pct: pixel_reduction(&test.total, &anchor.total)?,
    cu_ratio_pct: cu_reduction(&test.total, &anchor.total)?,
    pixel_fraction_pct,
    cu_fraction_pct,
  })
}

pub struct SweepOutcome {
  pub anchor: CorpusMeasurement,
  /// Successful rows sorted by pixel reduction.
  pub points: Vec<TradeoffPoint>,
  /// Rows whose metrics failed, with the reason.
  pub failures: Vec<(String, MetricsError)>,
}

/// Measures the exhaustive anchor and every configuration, one trade-off
/// row per configuration.
pub fn pareto_sweep(
  frames: &[(String, Frame)],
  configs: &[SelectorSpec],
  constraints: &PartitionConstraints,
  qps: &[u8],
  opts: MeasureOptions,
) -> SweepOutcome {
  let anchor = measure_corpus(frames, &SelectorSpec::Exhaustive, constraints, qps, opts);
  let mut points = Vec::new();
  let mut failures = Vec::new();
  for spec in configs {
    let m = measure_corpus(frames, spec, constraints, qps, opts);
    match tradeoff(spec, &m, &anchor) {
      Ok(p) => points.push(p),
      Err(e) => failures.push((spec.label(), e)),
    }
  }
  sort_by_pixel_ratio(&mut points);
  SweepOutcome { anchor, points, failures }
}
