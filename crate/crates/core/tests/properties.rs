//! Property tests for the geometric, environment and metric invariants.

use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shape_assembly::env::{gt_policy, rollout, Action, AssemblyState};
use shape_assembly::fan::{observe, Fan, FanConfig, Observation};
use shape_assembly::fragmenter::{
    episode_from_text, episode_to_text, generate_dataset, generate_episode, split_for_index, DatasetConfig, Scenario, TargetShape,
};
use shape_assembly::geometry::{place, rasterize, sample_cut, split_polygon, transform, CutMode, Point, RasterMask, CUT_T_MAX, CUT_T_MIN};
use shape_assembly::metrics::{cov_at, coverage, iou, EvalRecord};
use shape_assembly::ndnum::Checkpoint;

fn any_shape() -> impl Strategy<Value = TargetShape> {
    prop::sample::select(TargetShape::ALL.to_vec())
}

fn convex_seed() -> impl Strategy<Value = TargetShape> {
    prop::sample::select(vec![TargetShape::Square, TargetShape::Pentagon, TargetShape::Hexagon])
}

fn mask_strategy(n: usize) -> impl Strategy<Value = RasterMask> {
    prop::collection::vec(any::<bool>(), n * n)
        .prop_map(move |bits| RasterMask::from_cells(n, n, bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_conserves_area_and_respects_cut_rules(shape in convex_seed(), seed in any::<u64>(), depth in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poly = shape.polygon();
        for _ in 0..=depth {
            let cut = sample_cut(&poly, CutMode::Random, &mut rng).unwrap();
            prop_assert!((CUT_T_MIN..=CUT_T_MAX).contains(&cut.t_a) && (CUT_T_MIN..=CUT_T_MAX).contains(&cut.t_b));
            let n = poly.len();
            prop_assert!(cut.edge_a != cut.edge_b && (cut.edge_a + 1) % n != cut.edge_b && (cut.edge_b + 1) % n != cut.edge_a);
            let (a, b) = split_polygon(&poly, &cut).unwrap();
            prop_assert!((a.area() + b.area() - poly.area()).abs() <= 1e-9);
            poly = if seed % 2 == 0 { a } else { b };
        }
    }

    #[test]
    fn rigid_transform_preserves_area(shape in convex_seed(), bins in 1usize..24, bin in 0usize..24, x in -1.0f64..2.0, y in -1.0f64..2.0) {
        let poly = shape.polygon();
        let moved = transform(&poly, bin % bins, bins, Point::new(x, y));
        prop_assert!((moved.area() - poly.area()).abs() <= 1e-9);
        let placed = place(&poly, bin % bins, bins, Point::new(x, y));
        prop_assert!((placed.area() - poly.area()).abs() <= 1e-9);
    }

    #[test]
    fn mondrian_fragments_partition_the_raster(k in 1usize..4, seed in any::<u64>(), res in prop::sample::select(vec![16usize, 32, 64])) {
        let cfg = DatasetConfig { resolution: res, seed, ..DatasetConfig::new(TargetShape::MondrianSquare, k) };
        let ep = generate_episode(&cfg, 0).unwrap();
        let mut hits = vec![0u8; res * res];
        for i in 0..ep.len() {
            let m = rasterize(&ep.gt_polygon(i), res, res);
            for (h, &v) in hits.iter_mut().zip(m.cells()) {
                *h += (v > 0.5) as u8;
            }
        }
        prop_assert!(hits.iter().all(|&h| h <= 1));
        let target = rasterize(&ep.target, res, res);
        prop_assert_eq!(hits.iter().filter(|&&h| h == 1).count(), target.count());
    }

    #[test]
    fn episodes_have_two_to_the_k_fragments_and_conserve_area(shape in any_shape(), k in 0usize..4, seed in any::<u64>(), bins in 1usize..6) {
        let cfg = DatasetConfig { num_bins: bins, seed, ..DatasetConfig::new(shape, k) };
        let ep = generate_episode(&cfg, 3).unwrap();
        prop_assert_eq!(ep.len(), 1 << k);
        let total: f64 = (0..ep.len()).map(|i| ep.fragments[i].canonical.area()).sum();
        prop_assert!((total - ep.target.area()).abs() <= 1e-6);
        prop_assert!(ep.fragments.iter().all(|f| f.gt_bin < bins));
    }

    #[test]
    fn ground_truth_replay_is_exact(shape in any_shape(), k in 0usize..4, seed in any::<u64>(), bins in 1usize..6) {
        let cfg = DatasetConfig { num_bins: bins, seed, ..DatasetConfig::new(shape, k) };
        let ep = generate_episode(&cfg, 1).unwrap();
        let r = rollout(&ep, gt_policy(&ep)).unwrap();
        prop_assert_eq!(r.cov, 1.0);
        prop_assert_eq!(r.iou, 1.0);
    }

    #[test]
    fn steps_consume_one_fragment_and_never_lose_coverage(
        seed in any::<u64>(),
        moves in prop::collection::vec((0usize..64, -4i64..36, -4i64..36, 0usize..4), 4),
    ) {
        let cfg = DatasetConfig { num_bins: 4, seed, ..DatasetConfig::new(TargetShape::Hexagon, 2) };
        let ep = generate_episode(&cfg, 0).unwrap();
        let mut state = AssemblyState::reset(&ep);
        let mut again = state.clone();
        let mut cov = 0.0;
        for (pick, r, c, bin) in moves {
            let remaining = state.remaining();
            let a = Action { fragment_index: remaining[pick % remaining.len()], center: (r, c), bin };
            state.step(a).unwrap();
            again.step(a).unwrap();
            prop_assert_eq!(state.remaining().len(), remaining.len() - 1);
            let now = state.coverage().unwrap();
            prop_assert!(now >= cov);
            prop_assert!(state.current.is_binary());
            cov = now;
        }
        prop_assert!(state.is_done());
        prop_assert_eq!(state.current.cells(), again.current.cells());
    }

    #[test]
    fn metric_bounds_and_symmetry(a in mask_strategy(6), b in mask_strategy(6)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        let c = coverage(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        if a.count() + b.count() > 0 {
            prop_assert_eq!(ab == 1.0, a.cells() == b.cells());
        }
    }

    #[test]
    fn cov_at_is_non_increasing(covs in prop::collection::vec(0.0f64..=1.0, 1..30), t1 in 0.01f64..=1.0, t2 in 0.01f64..=1.0) {
        let recs: Vec<EvalRecord> = covs.iter().enumerate().map(|(i, &c)| EvalRecord { episode_id: i, cov: c, iou: c, wall_time_sec: 0.0 }).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(cov_at(&recs, lo).unwrap() >= cov_at(&recs, hi).unwrap());
    }

    #[test]
    fn episode_text_round_trip(shape in any_shape(), k in 0usize..3, seed in any::<u64>(), abnormal in any::<bool>()) {
        let scenario = if abnormal { Scenario::Distorted } else { Scenario::Normal };
        // Degraded scenarios need at least four fragments.
        let k = if abnormal { k.max(2) } else { k };
        let cfg = DatasetConfig { num_bins: 4, scenario, seed, ..DatasetConfig::new(shape, k) };
        let ep = generate_episode(&cfg, 2).unwrap();
        let text = episode_to_text(&ep);
        let back = episode_from_text(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(episode_to_text(&back), text);
        prop_assert_eq!(back.fragments.iter().map(|f| (f.gt_center, f.gt_bin)).collect::<Vec<_>>(),
                        ep.fragments.iter().map(|f| (f.gt_center, f.gt_bin)).collect::<Vec<_>>());
        let r = rollout(&back, gt_policy(&back)).unwrap();
        prop_assert_eq!((r.cov, r.iou), (1.0, 1.0));
    }

    #[test]
    fn split_assignment_is_stable(seed in any::<u64>(), n in 1usize..200, extra in 1usize..100) {
        let small: Vec<_> = (0..n).map(|i| split_for_index(seed, i)).collect();
        let big: Vec<_> = (0..n + extra).map(|i| split_for_index(seed, i)).collect();
        prop_assert_eq!(&small[..], &big[..n]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selection_scores_follow_any_reordering(seed in any::<u64>(), perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let model = Fan::new(FanConfig { resolution: 16, embed_dim: 16, heads: 2, d_key: 8, d_value: 8, stacks: 1, seed, ..FanConfig::default() }).unwrap();
        let ep = generate_episode(&DatasetConfig { resolution: 16, seed, ..DatasetConfig::new(TargetShape::Square, 3) }, 0).unwrap();
        let state = AssemblyState::reset(&ep);
        let obs = observe(&state, &state.remaining());
        let base = model.select_scores(&obs).unwrap();
        let shuffled = Observation {
            ids: perm.iter().map(|&i| obs.ids[i]).collect(),
            fragments: perm.iter().map(|&i| obs.fragments[i].clone()).collect(),
            remaining: obs.remaining.clone(),
        };
        let y = model.select_scores(&shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((y[k] - base[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), bins in 1usize..5) {
        let model = Fan::new(FanConfig { resolution: 16, embed_dim: 8, heads: 2, d_key: 4, d_value: 4, stacks: 1, num_bins: bins, seed, ..FanConfig::default() }).unwrap();
        let bytes = model.to_checkpoint().to_bytes();
        let back = Fan::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn generation_is_order_independent(seed in any::<u64>(), shape in any_shape()) {
        let cfg = DatasetConfig { n_samples: 6, seed, ..DatasetConfig::new(shape, 1) };
        let ds = generate_dataset(&cfg).unwrap();
        for (i, ep) in ds.episodes.iter().enumerate().rev() {
            prop_assert_eq!(ep, &generate_episode(&cfg, i).unwrap());
        }
    }
}
