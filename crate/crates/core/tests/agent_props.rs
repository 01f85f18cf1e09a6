mod common;

use common::{max_gradient_error, random_net, random_trajectory, smoke_corpus};
use proptest::prelude::*;
use qtmtt_core::agent::*;
use qtmtt_core::partition::{ModeSet, PartitionConstraints, SplitMode};
use qtmtt_core::FEATURE_DIM;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_central_differences() {
  for seed in 0..20u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_net(&[FEATURE_DIM, 8, 6], seed);
    let batch: Vec<Trajectory> = (0..5).map(|_| random_trajectory(&mut rng, FEATURE_DIM)).collect();
    let err = max_gradient_error(&net, &batch, &LossWeights::default(), 1e-5);
    assert!(err <= 1e-4, "instance {seed}: {err}");
  }
}

#[test]
fn zero_loss_point_has_zero_gradient() {
  let mut rng = ChaCha8Rng::seed_from_u64(1);
  let net = QNetwork::zeros(&[FEATURE_DIM, 8, 6]).unwrap();
  let mut t = random_trajectory(&mut rng, FEATURE_DIM);
  for g in t.root_gt.iter_mut().flatten() {
    *g = 0.0;
  }
  for a in &mut t.actions {
    a.delta_split = 0.0;
    a.subs.iter_mut().for_each(|s| s.gt_cost = 0.0);
  }
  let (loss, grad) = loss_gradient(&net, &[t], &LossWeights::default(), false).unwrap();
  assert_eq!(loss.total, 0.0);
  assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn consistency_gradient_is_linear_in_its_weight() {
  let mut rng = ChaCha8Rng::seed_from_u64(2);
  let net = QNetwork::new(&[FEATURE_DIM, 8, 6], 3).unwrap();
  let batch: Vec<Trajectory> = (0..4).map(|_| random_trajectory(&mut rng, FEATURE_DIM)).collect();
  let w = |a3| LossWeights { alpha1: 0.0, alpha2: 0.0, alpha3: a3 };
  let (_, one) = loss_gradient(&net, &batch, &w(1.0), false).unwrap();
  let (_, two) = loss_gradient(&net, &batch, &w(2.0), false).unwrap();
  assert!(one.iter().any(|g| *g != 0.0));
  assert!(one.iter().zip(&two).all(|(a, b)| 2.0 * a == *b));
}

proptest! {
  #![proptest_config(ProptestConfig::with_cases(256))]

  #[test]
  fn selection_respects_legality(q in proptest::array::uniform6(-5.0f64..5.0), n in 1usize..=6, t in 0.0f64..=1.0) {
    for bits in 1u8..64 {
      let legal = ModeSet::from_bits(bits);
      let s = select_top_n(&q, legal, n, t);
      prop_assert!(s.is_subset_of(legal));
      prop_assert!(s.len() <= n.min(legal.len()) + 1);
      let argmin = legal.iter().min_by(|a, b| q[a.index()].total_cmp(&q[b.index()]).then(a.index().cmp(&b.index()))).unwrap();
      prop_assert!(s.contains(argmin));
      if legal.contains(SplitMode::Ns) {
        prop_assert!(s.contains(SplitMode::Ns));
      }
      prop_assert_eq!(select_top_n(&q, legal, 6, 1.0), legal);
    }
  }

  #[test]
  fn batched_forward_matches_single_rows(seed in 0u64..1000, rows in 1usize..9) {
    let net = QNetwork::new(&[FEATURE_DIM, 16, 8, 6], seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<f64> = (0..rows * FEATURE_DIM).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
    let acts = net.forward(&states, rows).unwrap();
    for r in 0..rows {
      prop_assert_eq!(acts.q(r), net.q_values(&states[r * FEATURE_DIM..(r + 1) * FEATURE_DIM]).unwrap());
    }
  }
}

fn mse1(net: &QNetwork, data: &[Trajectory]) -> f64 {
  mean_loss(net, data, &LossWeights { alpha1: 1.0, alpha2: 0.0, alpha3: 0.0 }).unwrap().mse1
}

#[test]
fn shuffled_labels_do_not_beat_true_labels() {
  let corpus = smoke_corpus();
  let (train_frames, val_frames) = (&corpus[..6], &corpus[6..9]);
  let cfg = CollectConfig {
    qps: vec![22, 37],
    depth_caps: vec![3],
    constraints: PartitionConstraints::default(),
    ..Default::default()
  };
  let gather = |frames| {
    let mut out = vec![];
    collect_trajectories(frames, &cfg, None, |t| {
      out.push(t);
      Ok(())
    })
    .unwrap();
    out
  };
  let (data, val) = (gather(train_frames), gather(val_frames));
  let mut shuffled = data.clone();
  let mut labels: Vec<_> = data.iter().map(|t| t.root_gt).collect();
  labels.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
  for (t, l) in shuffled.iter_mut().zip(labels) {
    t.root_gt = l;
  }
  let tc = TrainConfig {
    epochs: 40,
    batch_size: 32,
    learning_rate: 1e-3,
    lr_decay: 0.98,
    parallel: true,
    ..Default::default()
  };
  let fit = |d: &[Trajectory]| {
    let mut st = TrainState::new(QNetwork::new(&[FEATURE_DIM, 64, 64, 6], 1).unwrap());
    train(d, &mut st, &tc, |_, _| Ok(())).unwrap();
    st.net
  };
  let (real, fake) = (mse1(&fit(&data), &val), mse1(&fit(&shuffled), &val));
  assert!(fake >= real, "shuffled {fake} vs true {real}");
}
