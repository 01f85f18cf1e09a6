//! Command implementations behind the `qtmtt` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qtmtt_core::agent::{
  collect_trajectories, load_checkpoint, load_model, save_checkpoint, save_model, train, AgentError,
  CollectConfig, QNetwork, TrainConfig, TrainState, DEFAULT_HIDDEN,
};
use qtmtt_core::io::{read_pgm, read_raw_luma, read_trajectories, write_pgm, IoError, TrajectoryWriter};
use qtmtt_core::metrics::{write_tradeoff_csv, MetricsError, CTC_QPS};
use qtmtt_core::rd::MAX_QP;
use qtmtt_core::search::{encode_frame, CtuScheduling, SearchParams};
use qtmtt_core::sweep::{
  measure_corpus, pareto_sweep, tradeoff, CorpusMeasurement, MeasureOptions, SelectorSpec,
};
use qtmtt_core::{metrics, Frame, ModeSet, PartitionConstraints, SplitMode, FEATURE_DIM};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const EXIT_HELP: &str = "Exit status: 0 success, 2 configuration error, 3 I/O or input-format error, \
4 numeric failure (non-finite training loss, degenerate RD curves).";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
  #[error("{0}")]
  Config(String),
  #[error("{0}")]
  Io(String),
  #[error("{0}")]
  Numeric(String),
}

impl CliError {
  pub fn exit_code(&self) -> i32 {
    match self {
      CliError::Config(_) => EXIT_CONFIG,
      CliError::Io(_) => EXIT_IO,
      CliError::Numeric(_) => EXIT_NUMERIC,
    }
  }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
  CliError::Io(format!("{}: {e}", path.display()))
}

impl From<AgentError> for CliError {
  fn from(e: AgentError) -> Self {
    match e {
      AgentError::Io(e) => CliError::Io(e.to_string()),
      AgentError::NonFinite { .. } => CliError::Numeric(e.to_string()),
      AgentError::Corrupt(_) | AgentError::Version { .. } => CliError::Io(e.to_string()),
      _ => CliError::Config(e.to_string()),
    }
  }
}

impl From<MetricsError> for CliError {
  fn from(e: MetricsError) -> Self {
    match e {
      MetricsError::Io(_) | MetricsError::Csv(_) => CliError::Io(e.to_string()),
      MetricsError::QpMismatch | MetricsError::Empty => CliError::Config(e.to_string()),
      _ => CliError::Numeric(e.to_string()),
    }
  }
}

#[derive(Parser, Debug)]
#[command(name = "qtmtt", version, about = "QTMTT partition search with learned split pruning", after_help = EXIT_HELP)]
pub struct Cli {
  #[command(subcommand)]
  pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
  /// Encode frames and write reconstructions plus an RD report.
  Encode(EncodeArgs),
  /// Collect two-level training trajectories.
  Collect(CollectArgs),
  /// Train a Q-network on a trajectory file.
  Train(TrainArgs),
  /// Compare one selector configuration against the exhaustive anchor.
  Eval(EvalArgs),
  /// Trade-off curve over a grid of selector configurations.
  Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
  /// PGM files, raw luma files (.yuv, .raw, .y) or directories of them.
  pub inputs: Vec<PathBuf>,
  /// Width of raw luma input.
  #[arg(long)]
  pub width: Option<u32>,
  /// Height of raw luma input.
  #[arg(long)]
  pub height: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct CodecArgs {
  /// Quantization parameter; repeat for several (default 22 27 32 37).
  #[arg(long = "qp")]
  pub qps: Vec<u8>,
  #[arg(long, default_value_t = 64)]
  pub ctu: u32,
  #[arg(long, default_value_t = 4)]
  pub min_cu: u32,
  #[arg(long, default_value_t = 4)]
  pub max_qt_depth: u8,
  #[arg(long, default_value_t = 3)]
  pub max_mtt_depth: u8,
  /// Largest side on which ternary splits are allowed.
  #[arg(long, default_value_t = 32)]
  pub max_tt: u32,
  /// Worker threads; 1 is the reproducibility reference.
  #[arg(long, default_value_t = 1)]
  pub jobs: usize,
  #[arg(long, default_value_t = 0)]
  pub seed: u64,
  /// Record wall-clock encoding time (makes reports run-dependent).
  #[arg(long)]
  pub timing: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectorKind {
  Exhaustive,
  /// Tighter MTT depth / TT size caps.
  Heuristic,
  Agent,
  /// Uniform-random pruning control.
  Random,
  /// Never split.
  NsOnly,
}

#[derive(Args, Debug, Clone)]
pub struct SelectorArgs {
  #[arg(long, value_enum, default_value_t = SelectorKind::Exhaustive)]
  pub selector: SelectorKind,
  /// Model file for the agent selector.
  #[arg(long)]
  pub model: Option<PathBuf>,
  /// Split modes kept per CU by the agent and random selectors.
  #[arg(long, default_value_t = 6)]
  pub topn: usize,
  /// Normalized Q-gap threshold in [0, 1]; 1 disables it.
  #[arg(long, default_value_t = 1.0)]
  pub threshold: f64,
  /// MTT depth cap of the heuristic selector.
  #[arg(long, default_value_t = 1)]
  pub heuristic_mtt: u8,
  /// TT side cap of the heuristic selector.
  #[arg(long, default_value_t = 16)]
  pub heuristic_tt: u32,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
  #[command(flatten)]
  pub input: InputArgs,
  #[command(flatten)]
  pub codec: CodecArgs,
  #[command(flatten)]
  pub selector: SelectorArgs,
  /// Output directory for reconstructions and report.json.
  #[arg(long)]
  pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
  #[command(flatten)]
  pub input: InputArgs,
  #[command(flatten)]
  pub codec: CodecArgs,
  /// Exploration probability per non-optimal split.
  #[arg(long, default_value_t = 0.3)]
  pub epsilon: f64,
  /// MTT depth caps to collect under; repeatable (default 4 6).
  #[arg(long = "depth-cap")]
  pub depth_caps: Vec<u8>,
  /// Current policy used for greedy actions.
  #[arg(long)]
  pub model: Option<PathBuf>,
  /// Trajectory file to write.
  #[arg(long)]
  pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
  /// Trajectory file from `collect`.
  pub trajectories: PathBuf,
  /// Output directory for model.json, checkpoint.json and loss.csv.
  #[arg(long)]
  pub out: PathBuf,
  #[arg(long)]
  pub epochs: Option<u32>,
  #[arg(long)]
  pub batch: Option<usize>,
  #[arg(long)]
  pub lr: Option<f64>,
  /// Per-epoch learning-rate multiplier.
  #[arg(long)]
  pub lr_decay: Option<f64>,
  /// Hidden layer widths, comma separated.
  #[arg(long, value_delimiter = ',')]
  pub hidden: Vec<usize>,
  /// Continue from a checkpoint written by a previous run.
  #[arg(long)]
  pub resume: Option<PathBuf>,
  /// Write the checkpoint every this many epochs (and after the last).
  #[arg(long, default_value_t = 1)]
  pub checkpoint_every: u32,
  #[arg(long, default_value_t = 0)]
  pub seed: u64,
  #[arg(long, default_value_t = 1)]
  pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
  #[command(flatten)]
  pub input: InputArgs,
  #[command(flatten)]
  pub codec: CodecArgs,
  #[command(flatten)]
  pub selector: SelectorArgs,
  /// Anchor measurement from `--save-anchor`; computed when omitted.
  #[arg(long)]
  pub anchor: Option<PathBuf>,
  /// Write the anchor measurement for reuse.
  #[arg(long)]
  pub save_anchor: Option<PathBuf>,
  /// CSV file to write.
  #[arg(long)]
  pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
  #[command(flatten)]
  pub input: InputArgs,
  #[command(flatten)]
  pub codec: CodecArgs,
  /// Model for agent rows; without it only heuristic rows are produced.
  #[arg(long)]
  pub model: Option<PathBuf>,
  /// Agent N values.
  #[arg(long = "n", value_delimiter = ',', default_values_t = [2usize, 3, 4, 5])]
  pub ns: Vec<usize>,
  /// Agent T values.
  #[arg(long = "t", value_delimiter = ',', default_values_t = [1.0f64])]
  pub ts: Vec<f64>,
  /// Heuristic MTT depth caps.
  #[arg(long = "heuristic-mtt", value_delimiter = ',', default_values_t = [0u8, 1, 2])]
  pub heuristic_mtt: Vec<u8>,
  /// Seeds of random-control rows (one row per N and seed).
  #[arg(long = "random-seed", value_delimiter = ',')]
  pub random_seeds: Vec<u64>,
  /// CSV file to write.
  #[arg(long)]
  pub out: PathBuf,
}

impl CodecArgs {
  pub fn constraints(&self) -> Result<PartitionConstraints, CliError> {
    let c = PartitionConstraints {
      ctu_size: self.ctu,
      min_cu_side: self.min_cu,
      max_qt_depth: self.max_qt_depth,
      max_mtt_depth: self.max_mtt_depth,
      max_tt_side: self.max_tt,
    };
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
  }

  pub fn qps(&self) -> Result<Vec<u8>, CliError> {
    let mut qps = if self.qps.is_empty() { CTC_QPS.to_vec() } else { self.qps.clone() };
    if let Some(q) = qps.iter().find(|&&q| q > MAX_QP) {
      return Err(CliError::Config(format!("QP {q} outside 0..={MAX_QP}")));
    }
    qps.sort_unstable();
    qps.dedup();
    Ok(qps)
  }

  fn options(&self) -> MeasureOptions {
    MeasureOptions { parallel: self.jobs > 1, timing: self.timing }
  }
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
  if jobs == 0 {
    return Err(CliError::Config("--jobs must be at least 1".into()));
  }
  let pool =
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Config(e.to_string()))?;
  Ok(pool.install(f))
}

fn is_raw(p: &Path) -> bool {
  matches!(p.extension().and_then(|e| e.to_str()), Some("yuv" | "raw" | "y"))
}

fn is_pgm(p: &Path) -> bool {
  matches!(p.extension().and_then(|e| e.to_str()), Some("pgm"))
}

/// Loads every frame named by the inputs; directories contribute their PGM
/// and raw files in name order. Frame ids are file stems, with a frame index
/// for multi-frame raw files.
pub fn load_frames(input: &InputArgs) -> Result<Vec<(String, Frame)>, CliError> {
  let mut files = Vec::new();
  for p in &input.inputs {
    if p.is_dir() {
      let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
        .map_err(|e| io_err(p, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| is_pgm(f) || is_raw(f))
        .collect();
      entries.sort();
      files.extend(entries);
    } else {
      files.push(p.clone());
    }
  }
  let mut frames = Vec::new();
  for f in files {
    let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let reader = BufReader::new(File::open(&f).map_err(|e| io_err(&f, e))?);
    if is_raw(&f) {
      let (Some(w), Some(h)) = (input.width, input.height) else {
        return Err(CliError::Config(format!("{}: raw input needs --width and --height", f.display())));
      };
      let raw = read_raw_luma(reader, w, h).map_err(|e| io_err(&f, e))?;
      let many = raw.len() > 1;
      for (i, fr) in raw.into_iter().enumerate() {
        frames.push((if many { format!("{stem}#{i}") } else { stem.clone() }, fr));
      }
    } else {
      frames.push((stem, read_pgm(reader).map_err(|e: IoError| io_err(&f, e))?));
    }
  }
  Ok(frames)
}

fn load_net(path: &Path) -> Result<QNetwork, CliError> {
  load_model(path, FEATURE_DIM).map_err(|e| match e {
    AgentError::Io(io) => io_err(path, io),
    AgentError::Dimension { .. } => CliError::Config(format!("{}: {e}", path.display())),
    other => io_err(path, other),
  })
}

fn selector_spec(s: &SelectorArgs, seed: u64) -> Result<SelectorSpec, CliError> {
  if !(0.0..=1.0).contains(&s.threshold) {
    return Err(CliError::Config(format!("--threshold {} outside [0, 1]", s.threshold)));
  }
  let n_ok = || {
    if (1..=6).contains(&s.topn) {
      Ok(())
    } else {
      Err(CliError::Config(format!("--topn {} outside 1..=6", s.topn)))
    }
  };
  Ok(match s.selector {
    SelectorKind::Exhaustive => SelectorSpec::Exhaustive,
    SelectorKind::NsOnly => SelectorSpec::Fixed(ModeSet::only(SplitMode::Ns)),
    SelectorKind::Heuristic => {
      SelectorSpec::DepthCap { max_mtt_depth: s.heuristic_mtt, max_tt_side: s.heuristic_tt }
    }
    SelectorKind::Random => {
      n_ok()?;
      SelectorSpec::Random { n: s.topn, seed }
    }
    SelectorKind::Agent => {
      n_ok()?;
      let path = s.model.as_ref().ok_or_else(|| CliError::Config("--selector agent needs --model".into()))?;
      SelectorSpec::Agent { net: Arc::new(load_net(path)?), n: s.topn, threshold: s.threshold }
    }
  })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
  if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
  }
  Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
  let mut w = create(path)?;
  serde_json::to_writer_pretty(&mut w, v).map_err(|e| io_err(path, e))?;
  w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct QpReport {
  qp: u8,
  cu_reconstructions: u64,
  pixel_reconstructions: u64,
  #[serde(skip_serializing_if = "Option::is_none")]
  wall_time: Option<f64>,
  rate_bits: f64,
  distortion: f64,
  psnr: f64,
  leaves: usize,
  recon: String,
}

#[derive(Serialize)]
struct FrameReport {
  id: String,
  width: u32,
  height: u32,
  qps: Vec<QpReport>,
}

#[derive(Serialize)]
struct EncodeReport {
  selector: String,
  constraints: PartitionConstraints,
  frames: Vec<FrameReport>,
}

pub fn cmd_encode(a: &EncodeArgs, log: &mut dyn Write) -> Result<(), CliError> {
  let constraints = a.codec.constraints()?;
  let qps = a.codec.qps()?;
  let spec = selector_spec(&a.selector, a.codec.seed)?;
  let frames = load_frames(&a.input)?;
  std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
  let jobs: Vec<(usize, u8)> = (0..frames.len()).flat_map(|i| qps.iter().map(move |&q| (i, q))).collect();
  let run = |&(i, qp): &(usize, u8)| {
    let (id, frame) = &frames[i];
    let padded = frame.padded_to(constraints.ctu_size);
    let params = SearchParams::new(qp, constraints);
    let enc = encode_frame(&padded, &params, CtuScheduling::Sequential, false, &|_| spec.build(i));
    let recon = enc.recon.cropped(frame.width, frame.height);
    let sse = metrics::sse(frame, &recon).expect("same size");
    (id.clone(), qp, enc, recon, sse)
  };
  let results = with_jobs(a.codec.jobs, || {
    use rayon::prelude::*;
    if a.codec.jobs > 1 {
      jobs.par_iter().map(run).collect::<Vec<_>>()
    } else {
      jobs.iter().map(run).collect()
    }
  })?;
  let mut report = EncodeReport { selector: spec.label(), constraints, frames: Vec::new() };
  for (id, qp, enc, recon, sse) in results {
    let name = format!("{}_qp{qp}.pgm", id.replace('#', "_f"));
    let path = a.out.join(&name);
    let mut w = create(&path)?;
    write_pgm(&recon, &mut w).and_then(|_| w.flush().map_err(IoError::from)).map_err(|e| io_err(&path, e))?;
    let psnr = metrics::psnr_from_sse(sse, recon.samples.len() as u64);
    let leaves: usize = enc.trees.iter().map(|t| t.leaves().len()).sum();
    writeln!(
      log,
      "{id} qp={qp} cus={} pixels={} rate={:.1} psnr={psnr:.3} leaves={leaves}",
      enc.stats.cu_reconstructions, enc.stats.pixel_reconstructions, enc.rate
    )
    .ok();
    if report.frames.last().is_none_or(|f| f.id != id) {
      report.frames.push(FrameReport {
        id: id.clone(),
        width: recon.width,
        height: recon.height,
        qps: Vec::new(),
      });
    }
    report.frames.last_mut().unwrap().qps.push(QpReport {
      qp,
      cu_reconstructions: enc.stats.cu_reconstructions,
      pixel_reconstructions: enc.stats.pixel_reconstructions,
      wall_time: a.codec.timing.then_some(enc.stats.wall_time),
      rate_bits: enc.rate,
      distortion: enc.distortion,
      psnr,
      leaves,
      recon: name,
    });
  }
  write_json(&a.out.join("report.json"), &report)
}

pub fn cmd_collect(a: &CollectArgs, log: &mut dyn Write) -> Result<(), CliError> {
  let cfg = CollectConfig {
    qps: a.codec.qps()?,
    depth_caps: if a.depth_caps.is_empty() { vec![4, 6] } else { a.depth_caps.clone() },
    epsilon: a.epsilon,
    seed: a.codec.seed,
    constraints: a.codec.constraints()?,
  };
  cfg.validate()?;
  let policy = a.model.as_deref().map(load_net).transpose()?;
  let frames = load_frames(&a.input)?;
  let mut w = TrajectoryWriter::new(create(&a.out)?, FEATURE_DIM).map_err(|e| io_err(&a.out, e))?;
  let n = collect_trajectories(&frames, &cfg, policy.as_ref(), |t| {
    w.write(&t).map_err(|e| match e {
      IoError::Io(io) => AgentError::Io(io),
      other => AgentError::Io(std::io::Error::other(other.to_string())),
    })
  })?;
  w.into_inner().map_err(|e| io_err(&a.out, e))?;
  writeln!(log, "{n} trajectories from {} frames", frames.len()).ok();
  Ok(())
}

pub fn cmd_train(a: &TrainArgs, log: &mut dyn Write) -> Result<(), CliError> {
  let file = File::open(&a.trajectories).map_err(|e| io_err(&a.trajectories, e))?;
  let (header, data) = read_trajectories(BufReader::new(file)).map_err(|e| match e {
    IoError::Io(io) => io_err(&a.trajectories, io),
    other => io_err(&a.trajectories, other),
  })?;
  if header.feature_dim != FEATURE_DIM {
    return Err(CliError::Config(format!(
      "{}: trajectories have {} features, this build uses {FEATURE_DIM}",
      a.trajectories.display(),
      header.feature_dim
    )));
  }
  let defaults = TrainConfig::default();
  let cfg = TrainConfig {
    epochs: a.epochs.unwrap_or(defaults.epochs),
    batch_size: a.batch.unwrap_or(defaults.batch_size),
    learning_rate: a.lr.unwrap_or(defaults.learning_rate),
    lr_decay: a.lr_decay.unwrap_or(defaults.lr_decay),
    seed: a.seed,
    parallel: a.jobs > 1,
    ..defaults
  };
  if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
    return Err(CliError::Config("--lr must be positive".into()));
  }
  if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
    return Err(CliError::Config("--lr-decay must lie in (0, 1]".into()));
  }
  let mut state = match &a.resume {
    Some(p) => load_checkpoint(p).map_err(|e| match e {
      AgentError::Io(io) => io_err(p, io),
      other => io_err(p, other),
    })?,
    None => {
      let hidden = if a.hidden.is_empty() { DEFAULT_HIDDEN.to_vec() } else { a.hidden.clone() };
      let dims: Vec<usize> = std::iter::once(FEATURE_DIM).chain(hidden).chain(std::iter::once(6)).collect();
      TrainState::new(QNetwork::new(&dims, a.seed)?)
    }
  };
  if state.net.feature_dim() != FEATURE_DIM {
    return Err(CliError::Config("checkpoint feature dimension does not match".into()));
  }
  std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
  let ck_path = a.out.join("checkpoint.json");
  let loss_path = a.out.join("loss.csv");
  let mut loss = csv::Writer::from_writer(create(&loss_path)?);
  loss.write_record(["step", "mse1", "mse2", "mse3", "total"]).map_err(|e| io_err(&loss_path, e))?;
  let history = with_jobs(a.jobs, || {
    train(&data, &mut state, &cfg, |s, recs| {
      for r in recs {
        let l = r.loss;
        loss
          .write_record([
            r.step.to_string(),
            l.mse1.to_string(),
            l.mse2.to_string(),
            l.mse3.to_string(),
            l.total.to_string(),
          ])
          .map_err(|e| AgentError::Io(std::io::Error::other(e.to_string())))?;
      }
      if s.epoch % a.checkpoint_every.max(1) == 0 || s.epoch == cfg.epochs {
        save_checkpoint(s, &ck_path)?;
      }
      Ok(())
    })
  })??;
  loss.flush().map_err(|e| io_err(&loss_path, e))?;
  let model_path = a.out.join("model.json");
  save_model(&state.net, &model_path).map_err(|e| io_err(&model_path, e))?;
  if let Some(last) = history.last() {
    writeln!(log, "trained to step {} (epoch {}), loss {:.6}", last.step, state.epoch, last.loss.total).ok();
  } else {
    writeln!(log, "nothing to do: checkpoint already at epoch {}", state.epoch).ok();
  }
  Ok(())
}

fn read_anchor(path: &Path) -> Result<CorpusMeasurement, CliError> {
  let f = File::open(path).map_err(|e| io_err(path, format!("missing anchor: {e}")))?;
  serde_json::from_reader(BufReader::new(f)).map_err(|e| io_err(path, e))
}

pub fn cmd_eval(a: &EvalArgs, log: &mut dyn Write) -> Result<(), CliError> {
  let constraints = a.codec.constraints()?;
  let qps = a.codec.qps()?;
  let spec = selector_spec(&a.selector, a.codec.seed)?;
  let frames = load_frames(&a.input)?;
  let opts = a.codec.options();
  let anchor = match &a.anchor {
    Some(p) => read_anchor(p)?,
    None => with_jobs(a.codec.jobs, || {
      measure_corpus(&frames, &SelectorSpec::Exhaustive, &constraints, &qps, opts)
    })?,
  };
  if let Some(p) = &a.save_anchor {
    write_json(p, &anchor)?;
  }
  let test = with_jobs(a.codec.jobs, || measure_corpus(&frames, &spec, &constraints, &qps, opts))?;
  if test.frames.iter().map(|f| &f.id).ne(anchor.frames.iter().map(|f| &f.id)) {
    return Err(CliError::Config("anchor was measured on different frames".into()));
  }
  let row = tradeoff(&spec, &test, &anchor)?;
  writeln!(
    log,
    "{}: bd_rate={:.4}% pixel_reduction={:.4}% cu_reduction={:.4}%",
    row.label, row.bd_rate_pct, row.pixel_ratio_pct, row.cu_ratio_pct
  )
  .ok();
  write_tradeoff_csv(&[row], create(&a.out)?).map_err(|e| io_err(&a.out, e))
}

pub fn cmd_sweep(a: &SweepArgs, log: &mut dyn Write) -> Result<(), CliError> {
  let constraints = a.codec.constraints()?;
  let qps = a.codec.qps()?;
  let frames = load_frames(&a.input)?;
  let mut configs = Vec::new();
  for &m in &a.heuristic_mtt {
    configs.push(SelectorSpec::DepthCap { max_mtt_depth: m, max_tt_side: constraints.max_tt_side });
  }
  if let Some(p) = &a.model {
    let net = Arc::new(load_net(p)?);
    for &n in &a.ns {
      for &t in &a.ts {
        if !(1..=6).contains(&n) || !(0.0..=1.0).contains(&t) {
          return Err(CliError::Config(format!("grid point N={n} T={t} out of range")));
        }
        configs.push(SelectorSpec::Agent { net: net.clone(), n, threshold: t });
      }
    }
  }
  for &seed in &a.random_seeds {
    for &n in &a.ns {
      configs.push(SelectorSpec::Random { n, seed });
    }
  }
  let out =
    with_jobs(a.codec.jobs, || pareto_sweep(&frames, &configs, &constraints, &qps, a.codec.options()))?;
  for (label, e) in &out.failures {
    writeln!(log, "row {label} failed: {e}").ok();
  }
  write_tradeoff_csv(&out.points, create(&a.out)?).map_err(|e| io_err(&a.out, e))?;
  writeln!(log, "{} rows written, {} failed", out.points.len(), out.failures.len()).ok();
  if out.points.is_empty() && !out.failures.is_empty() {
    return Err(CliError::Numeric("every sweep row failed".into()));
  }
  Ok(())
}

pub fn run(cli: &Cli, log: &mut dyn Write) -> Result<(), CliError> {
  match &cli.command {
    Command::Encode(a) => cmd_encode(a, log),
    Command::Collect(a) => cmd_collect(a, log),
    Command::Train(a) => cmd_train(a, log),
    Command::Eval(a) => cmd_eval(a, log),
    Command::Sweep(a) => cmd_sweep(a, log),
  }
}
