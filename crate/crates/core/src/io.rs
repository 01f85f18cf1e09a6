//! Frame and trajectory files.
//!
//! Trajectory files are JSON lines. The first line is a header
//! `{"format":"qtmtt-trajectories","version":1,"feature_dim":61}`; every
//! following line is one trajectory object carrying its own `"version"`.
//! Unavailable root actions have `null` ground-truth costs.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::partition::ModeSet;
use crate::rd::Frame;

pub const TRAJECTORY_FORMAT: &str = "qtmtt-trajectories";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
  #[error(transparent)]
  Io(#[from] std::io::Error),
  #[error("invalid PGM: {0}")]
  Pgm(String),
  #[error("raw input of {bytes} bytes is not a whole number of {width}x{height} frames")]
  Geometry { bytes: usize, width: u32, height: u32 },
  #[error("invalid frame size {0}x{1}")]
  FrameSize(u32, u32),
  #[error("invalid trajectory header: {0}")]
  Header(String),
  #[error("line {line}: unsupported trajectory version {found}")]
  Version { line: usize, found: u64 },
  #[error("line {line}: {msg}")]
  Record { line: usize, msg: String },
}

fn pgm_token(data: &[u8], pos: &mut usize) -> Result<String, IoError> {
  loop {
    while *pos < data.len() && data[*pos].is_ascii_whitespace() {
      *pos += 1;
    }
    if *pos < data.len() && data[*pos] == b'#' {
      while *pos < data.len() && data[*pos] != b'\n' {
        *pos += 1;
      }
    } else {
      break;
    }
  }
  let start = *pos;
  while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
    *pos += 1;
  }
  if start == *pos {
    return Err(IoError::Pgm("truncated header".into()));
  }
  Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

/// Parses a binary (P5) 8-bit greymap.
pub fn read_pgm(mut r: impl Read) -> Result<Frame, IoError> {
  let mut data = Vec::new();
  r.read_to_end(&mut data)?;
  let mut pos = 0;
  if pgm_token(&data, &mut pos)? != "P5" {
    return Err(IoError::Pgm("expected P5 magic".into()));
  }
  let mut num = |what: &str| -> Result<u32, IoError> {
    pgm_token(&data, &mut pos)?.parse().map_err(|_| IoError::Pgm(format!("bad {what}")))
  };
  let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
  if maxval == 0 || maxval > 255 {
    return Err(IoError::Pgm(format!("maxval {maxval} is not 8-bit")));
  }
  if w == 0 || h == 0 {
    return Err(IoError::FrameSize(w, h));
  }
  // exactly one whitespace byte separates the header from the raster
  pos += 1;
  let n = w as usize * h as usize;
  if data.len() < pos + n {
    return Err(IoError::Pgm(format!("raster has {} of {n} bytes", data.len().saturating_sub(pos))));
  }
  Frame::new(w, h, data[pos..pos + n].to_vec()).map_err(|e| IoError::Pgm(e.to_string()))
}

pub fn write_pgm(frame: &Frame, mut w: impl Write) -> Result<(), IoError> {
  write!(w, "P5\n{} {}\n255\n", frame.width, frame.height)?;
  w.write_all(&frame.samples)?;
  Ok(())
}

/// Splits raw 8-bit planar luma into `width x height` frames.
pub fn read_raw_luma(mut r: impl Read, width: u32, height: u32) -> Result<Vec<Frame>, IoError> {
  if width == 0 || height == 0 {
    return Err(IoError::FrameSize(width, height));
  }
  let mut data = Vec::new();
  r.read_to_end(&mut data)?;
  let n = width as usize * height as usize;
  if data.is_empty() || data.len() % n != 0 {
    return Err(IoError::Geometry { bytes: data.len(), width, height });
  }
  Ok(data.chunks(n).map(|c| Frame::new(width, height, c.to_vec()).expect("chunk matches geometry")).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
  pub format: String,
  pub version: u32,
  pub feature_dim: usize,
}

#[derive(Serialize)]
struct LineOut<'a> {
  version: u32,
  #[serde(flatten)]
  t: &'a Trajectory,
}

pub struct TrajectoryWriter<W: Write> {
  w: W,
}

impl<W: Write> TrajectoryWriter<W> {
  pub fn new(mut w: W, feature_dim: usize) -> Result<Self, IoError> {
    let h = TrajectoryHeader { format: TRAJECTORY_FORMAT.into(), version: TRAJECTORY_VERSION, feature_dim };
    serde_json::to_writer(&mut w, &h).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(TrajectoryWriter { w })
  }

  pub fn write(&mut self, t: &Trajectory) -> Result<(), IoError> {
    serde_json::to_writer(&mut self.w, &LineOut { version: TRAJECTORY_VERSION, t })
      .map_err(std::io::Error::from)?;
    self.w.write_all(b"\n")?;
    Ok(())
  }

  pub fn into_inner(mut self) -> Result<W, IoError> {
    self.w.flush()?;
    Ok(self.w)
  }
}

fn check_record(t: &Trajectory, dim: usize) -> Result<(), String> {
  let mut masks = vec![t.root_legal];
  let mut states = vec![&t.root_state];
  for a in &t.actions {
    if a.subs.len() != a.mode.child_count() {
      return Err(format!("{} action has {} sub-records", a.mode.name(), a.subs.len()));
    }
    for s in &a.subs {
      masks.push(s.legal);
      states.push(&s.state);
    }
  }
  if masks.iter().any(|m| !m.is_subset_of(ModeSet::FULL)) {
    return Err("invalid legality mask".into());
  }
  if let Some(s) = states.iter().find(|s| s.len() != dim) {
    return Err(format!("state has {} features, header declares {dim}", s.len()));
  }
  Ok(())
}

/// Reads a whole trajectory file. Line numbers in errors are 1-based and
/// count the header.
pub fn read_trajectories(r: impl BufRead) -> Result<(TrajectoryHeader, Vec<Trajectory>), IoError> {
  let mut lines = r.lines();
  let header_line = lines.next().ok_or_else(|| IoError::Header("empty file".into()))??;
  let header: TrajectoryHeader =
    serde_json::from_str(&header_line).map_err(|e| IoError::Header(e.to_string()))?;
  if header.format != TRAJECTORY_FORMAT {
    return Err(IoError::Header(format!("format {:?}", header.format)));
  }
  if header.version != TRAJECTORY_VERSION {
    return Err(IoError::Version { line: 1, found: header.version.into() });
  }
  let mut out = Vec::new();
  for (i, line) in lines.enumerate() {
    let line_no = i + 2;
    let line = line?;
    if line.trim().is_empty() {
      continue;
    }
    let bad = |msg: String| IoError::Record { line: line_no, msg };
    let mut v: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
    let obj = v.as_object_mut().ok_or_else(|| bad("not an object".into()))?;
    match obj.remove("version").and_then(|v| v.as_u64()) {
      Some(found) if found == u64::from(TRAJECTORY_VERSION) => {}
      Some(found) => return Err(IoError::Version { line: line_no, found }),
      None => return Err(bad("missing version".into())),
    }
    let t: Trajectory = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
    check_record(&t, header.feature_dim).map_err(bad)?;
    out.push(t);
  }
  Ok((header, out))
}
