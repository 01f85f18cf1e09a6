mod common;

use common::texture;
use proptest::prelude::*;
use qtmtt_core::features::*;
use qtmtt_core::partition::{CuRect, ModeSet, PartitionConstraints, SplitMode};
use qtmtt_core::rd::{Frame, LeafCost};
use qtmtt_core::search::{is_pruned_size, search, EncoderState, SearchParams, SelectorContext, PRUNED_SIZES};
use qtmtt_core::SplitSelector;

struct Recorder(Vec<(CuRect, Vec<f64>)>);

impl SplitSelector for Recorder {
  fn wants_state(&self, _cu: &CuRect) -> bool {
    true
  }

  fn select(&mut self, ctx: &SelectorContext<'_>) -> ModeSet {
    self.0.push((*ctx.cu, ctx.state.unwrap().to_vec()));
    ctx.legal
  }
}

fn all_paths(max_len: usize) -> Vec<Vec<SplitMode>> {
  let mut out = vec![vec![]];
  let mut frontier = vec![vec![]];
  for _ in 0..max_len {
    frontier = frontier
      .iter()
      .flat_map(|p: &Vec<SplitMode>| SplitMode::ALL.iter().map(move |&m| [p.clone(), vec![m]].concat()))
      .collect();
    out.extend(frontier.iter().cloned());
  }
  out
}

#[test]
fn split_series_round_trip_over_short_paths() {
  let paths = all_paths(4);
  assert_eq!(paths.len(), 1 + 6 + 36 + 216 + 1296);
  let mut accepted = 0;
  for p in &paths {
    let enc = encode_split_series(p);
    if p.contains(&SplitMode::Ns) {
      assert_eq!(enc, Err(FeatureError::NoSplitInSeries));
      continue;
    }
    let s = enc.unwrap();
    assert_eq!(usize::from(s.length), p.len());
    let pairs = decode_split_series(&s).unwrap();
    assert_eq!(pairs.len(), S_MAX);
    for (i, pair) in pairs.iter().enumerate() {
      let (n, hv) = match p.get(i) {
        None => (0.0, 0.0),
        Some(SplitMode::Qt) => (1.0, 0.0),
        Some(SplitMode::Bth) => (0.5, 1.0),
        Some(SplitMode::Btv) => (0.5, -1.0),
        Some(SplitMode::Tth) => (0.75, 1.0),
        Some(SplitMode::Ttv) => (0.75, -1.0),
        Some(SplitMode::Ns) => unreachable!(),
      };
      assert_eq!((pair.n_cu_norm, pair.hv), (n, hv), "{p:?} segment {i}");
    }
    accepted += 1;
  }
  assert_eq!(accepted, 1 + 5 + 25 + 125 + 625);
}

#[test]
fn hog_of_diagonal_ramp_peaks_at_quarter_pi() {
  let (w, h) = (16usize, 16usize);
  let block: Vec<u8> = (0..w * h).map(|i| ((i % w) * 4 + (i / w) * 4) as u8).collect();
  let bins = hog(&block, w, h);
  // Bin i is centered on i * pi / 8, so pi / 4 is bin 2.
  let expected = (std::f64::consts::FRAC_PI_4 / (std::f64::consts::PI / 8.0)).round() as usize;
  assert_eq!(expected, 2);
  assert!((bins[expected] - 1.0).abs() < 1e-12, "{bins:?}");
}

#[test]
fn states_have_fixed_dimension_and_bounded_entries() {
  let frame = texture(64, 64, 3);
  let params = SearchParams::new(27, PartitionConstraints::default().with_max_mtt_depth(2));
  let mut rec = Recorder(vec![]);
  let mut st = EncoderState::new(64, 64);
  search(&frame, &CuRect::root(0, 0, 64), &params, &mut rec, &mut st);
  let mut sizes = std::collections::HashSet::new();
  for (cu, s) in &rec.0 {
    assert_eq!(s.len(), FEATURE_DIM);
    assert!(s.iter().all(|v| v.is_finite()));
    for i in [0, 1, OFF_PARENT, OFF_PARENT + 1, OFF_PARENT + 2, OFF_BLOCK + 3] {
      assert!((0.0..=COST_CLAMP).contains(&s[i]), "{cu:?} entry {i} = {}", s[i]);
    }
    assert!(s[4] == 0.0 || s[4] == 1.0);
    assert!(s[5] == 0.0 || s[5] == 1.0);
    if s[4] == 0.0 {
      assert!(
        s[0] == 0.0
          && s[2] == 0.0
          && s[OFF_TOP_SERIES..OFF_TOP_SERIES + SERIES_LEN].iter().all(|v| *v == 0.0)
      );
    }
    assert_eq!(s[OFF_BLOCK], f64::from(cu.width).log2() / 7.0);
    assert_eq!(s[OFF_BLOCK + 1], f64::from(cu.height).log2() / 7.0);
    assert_eq!(s[OFF_BLOCK + 2], 27.0 / 51.0);
    let hog_sum: f64 = s[OFF_HOG..].iter().sum();
    assert!(hog_sum == 0.0 || (hog_sum - 1.0).abs() < 1e-12);
    if is_pruned_size(cu) {
      sizes.insert((cu.width, cu.height));
    }
  }
  assert_eq!(sizes.len(), PRUNED_SIZES.len());
  let (root, s) = &rec.0[0];
  assert_eq!((root.x, root.y), (0, 0));
  assert!(s[..NI_LEN + 2 * SERIES_LEN].iter().all(|v| *v == 0.0));
}

fn flat_state(size: u32) -> Vec<f64> {
  let frame = Frame::filled(64, 64, 128);
  let cu = CuRect::root(0, 0, size);
  let lambda = 10.0;
  let bits = 2.0;
  let current_ns = LeafCost::new(0.0, bits + 0.5 * cu.area() as f64, lambda);
  let map = CuMap::new(64, 64);
  extract_state(&StateInputs {
    frame: &frame,
    cu: &cu,
    qp: 30,
    lambda,
    max_qt_depth: 4,
    map: &map,
    parent: None,
    current_ns,
  })
}

#[test]
fn flat_content_gives_size_independent_features() {
  let (a, b) = (flat_state(16), flat_state(32));
  assert_eq!(a[OFF_HOG..], b[OFF_HOG..]);
  assert!(a[OFF_HOG..].iter().all(|v| *v == 0.0));
  // Normalized NS costs differ only by the flag bits spread over the area.
  let floor = 2.0 / 256.0;
  assert!((a[OFF_BLOCK + 3] - b[OFF_BLOCK + 3]).abs() <= floor);
  assert!((a[OFF_BLOCK + 3] - 0.5).abs() <= floor);
}

proptest! {
  #![proptest_config(ProptestConfig::with_cases(64))]

  #[test]
  fn hog_is_l1_normalized(block in proptest::collection::vec(any::<u8>(), 64)) {
    let bins = hog(&block, 8, 8);
    let sum: f64 = bins.iter().sum();
    prop_assert!(bins.iter().all(|b| *b >= 0.0));
    prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12);
  }

  #[test]
  fn cost_features_are_scale_free(
    top in 0.0f64..5e4, left in 0.0f64..5e4, parent_d in 0.0f64..1e5, parent_r in 0.0f64..2e3,
    cur_d in 0.0f64..1e4, cur_r in 0.0f64..500.0, lambda in 0.5f64..200.0, k_exp in -4i32..8,
  ) {
    let frame = texture(64, 64, 9);
    let cu = CuRect { x: 16, y: 16, width: 16, height: 16, qt_depth: 2, mtt_depth: 0, in_mtt_region: false };
    let k = 2f64.powi(k_exp);
    let build = |scale: f64| {
      let mut map = CuMap::new(64, 64);
      let series = encode_split_series(&[SplitMode::Qt, SplitMode::Bth]).unwrap();
      map.set(&CuRect { x: 16, y: 0, width: 16, height: 16, ..cu }, Some(LeafInfo { cost: top * scale, area: 256, qt_depth: 2, series }));
      map.set(&CuRect { x: 0, y: 16, width: 16, height: 16, ..cu }, Some(LeafInfo { cost: left * scale, area: 256, qt_depth: 1, series }));
      let parent = ParentInfo { leaf: LeafCost::new(parent_d * scale, parent_r, lambda * scale), area: 1024 };
      let current_ns = LeafCost::new(cur_d * scale, cur_r, lambda * scale);
      extract_state(&StateInputs { frame: &frame, cu: &cu, qp: 32, lambda: lambda * scale, max_qt_depth: 4, map: &map, parent: Some(parent), current_ns })
    };
    prop_assert_eq!(build(1.0), build(k));
  }
}
