use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fragmenter::{generate_episode, DatasetConfig, TargetShape};

fn episode(shape: TargetShape, k: usize, bins: usize, idx: usize) -> Episode {
    let cfg = DatasetConfig { num_bins: bins, seed: 21, ..DatasetConfig::new(shape, k) };
    generate_episode(&cfg, idx).unwrap()
}

#[test]
fn scorer_matches_env_metrics() {
    let ep = episode(TargetShape::Pentagon, 2, 4, 0);
    let mut state = AssemblyState::reset(&ep);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !state.is_done() {
        let rem = state.remaining();
        let a = Action { fragment_index: rem[0], center: (rng.gen_range(0..32), rng.gen_range(0..32)), bin: rng.gen_range(0..4) };
        let predicted = Scorer::new(&state).iou(&a);
        state.step(a).unwrap();
        assert_eq!(predicted, state.iou().unwrap());
    }
}

#[test]
fn oracle_reconstructs_mondrian_exactly() {
    for idx in 0..5 {
        let ep = episode(TargetShape::MondrianSquare, 2, 1, idx);
        let r = greedy_oracle_assemble(&ep, 1).unwrap();
        assert_eq!(r.cov, 1.0, "episode {idx}");
        assert_eq!(r.log.len(), ep.len());
    }
}

#[test]
fn single_fragment_oracle_is_global_optimum_and_stride_refines() {
    let ep = episode(TargetShape::Hexagon, 0, 4, 3);
    let state = AssemblyState::reset(&ep);
    let (a, f) = oracle_step(&state, 1).unwrap();
    let mut scorer = Scorer::new(&state);
    for bin in 0..4 {
        for row in 0..32 {
            for col in 0..32 {
                assert!(scorer.iou(&Action { fragment_index: 0, center: (row, col), bin }) <= f);
            }
        }
    }
    assert_eq!(scorer.iou(&a), f);
    for stride in [2, 3, 5] {
        assert!(oracle_step(&state, stride).unwrap().1 <= f);
    }
    assert!(oracle_step(&state, 0).is_err());
}

#[test]
fn sa_traces_are_monotone_and_deterministic() {
    let ep = episode(TargetShape::Square, 2, 4, 1);
    let cfg = SaConfig { seed: 5, ..SaConfig::default() };
    let a = sa_assemble(&ep, &cfg).unwrap();
    let b = sa_assemble(&ep, &cfg).unwrap();
    assert_eq!(a.rollout.log, b.rollout.log);
    assert_eq!(a.traces.len(), ep.len());
    for t in &a.traces {
        assert_eq!(t.len(), 200);
        assert!(t.windows(2).all(|w| w[1] >= w[0]));
    }
    let mut sorted = a.order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..ep.len()).collect::<Vec<_>>());
}

#[test]
fn cold_sa_never_accepts_worse_moves() {
    let ep = episode(TargetShape::Pentagon, 2, 4, 2);
    let out = sa_assemble(&ep, &SaConfig { t0: 1e-300, ..SaConfig::default() }).unwrap();
    assert!(out.worsening_accepted.iter().all(|&w| w == 0));
    assert!(SaConfig { t0: 0.0, ..SaConfig::default() }.validate().is_err());
    assert!(SaConfig { alpha: 1.0, ..SaConfig::default() }.validate().is_err());
}

#[test]
fn frozen_sa_is_a_fixed_point() {
    let ep = episode(TargetShape::Square, 1, 1, 0);
    let cfg = SaConfig { t0: 1e-300, sigma: Some(0.0), ..SaConfig::default() };
    let a = sa_assemble(&ep, &cfg).unwrap();
    let b = sa_assemble(&ep, &cfg).unwrap();
    assert_eq!(a.rollout.log, b.rollout.log);
    for t in &a.traces {
        assert!(t.iter().all(|&v| v == t[0]));
    }
}

#[test]
fn sa_single_fragment_reaches_optimum() {
    let ep = episode(TargetShape::Square, 0, 1, 4);
    let out = sa_assemble(&ep, &SaConfig { iters_per_fragment: 500, ..SaConfig::default() }).unwrap();
    let gt = ep.fragments[0].gt_center;
    let a = out.rollout.state.action_log[0];
    assert!((a.center.0 - gt.0).abs() <= 2 && (a.center.1 - gt.1).abs() <= 2);
    assert!(out.rollout.iou >= 0.95);
}

#[test]
fn gp_interpolates_and_decays() {
    let pts = [[0.2, 0.3], [0.6, 0.6], [0.9, 0.1]];
    let vals = [0.5, -0.2, 0.9];
    let gp = Gp::fit(&pts, &vals, SeKernel::default(), 0.0).unwrap();
    for (p, v) in pts.iter().zip(vals) {
        let (m, var) = gp.predict(p);
        assert!((m - v).abs() < 1e-6);
        assert!(var <= 1e-6 + 1e-6);
    }
    let (m, var) = gp.predict(&[40.0, 40.0]);
    assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    let shifted = Gp::fit(&pts, &vals, SeKernel::default(), 0.3).unwrap();
    assert!((shifted.predict(&[40.0, 40.0]).0 - 0.3).abs() < 1e-12);
}

#[test]
fn gp_regresses_a_sine() {
    let xs: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 / 9.0, 0.0]).collect();
    let f = |x: f64| (std::f64::consts::TAU * x).sin();
    let ys: Vec<f64> = xs.iter().map(|p| f(p[0])).collect();
    let gp = Gp::fit(&xs, &ys, SeKernel::default(), 0.0).unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mse = grid.iter().map(|&x| (gp.predict(&[x, 0.0]).0 - f(x)).powi(2)).sum::<f64>() / grid.len() as f64;
    assert!(mse.sqrt() < 0.1, "{}", mse.sqrt());
}

#[test]
fn gp_survives_duplicate_points() {
    let pts = [[0.5, 0.5], [0.5, 0.5]];
    let gp = Gp::fit(&pts, &[1.0, 1.0], SeKernel { noise: 0.0, ..SeKernel::default() }, 0.0).unwrap();
    assert!((gp.predict(&[0.5, 0.5]).0 - 1.0).abs() < 1e-6);
}

#[test]
fn expected_improvement_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let ei = expected_improvement(rng.gen_range(-2.0..2.0), rng.gen_range(0.0..1.0), rng.gen_range(-2.0..2.0));
        assert!(ei >= 0.0);
    }
    assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.5);
    assert_eq!(expected_improvement(0.0, 0.0, 0.5), 0.0);
}

#[test]
fn bo_is_deterministic_and_places_every_fragment() {
    let ep = episode(TargetShape::Square, 1, 4, 2);
    let cfg = BoConfig { seed: 3, ..BoConfig::default() };
    let a = bo_assemble(&ep, &cfg).unwrap();
    let b = bo_assemble(&ep, &cfg).unwrap();
    assert_eq!(a.rollout.log, b.rollout.log);
    assert_eq!(a.rollout.log.len(), ep.len());
    assert!(a.evaluations.iter().all(|e| e.len() == 15 * 4));
    assert!(BoConfig { evals: 3, ..BoConfig::default() }.validate().is_err());
}

/// The peak of a single-fragment IoU landscape is about one pixel wide at
/// 32x32, so this uses a length scale of 0.05 rather than the default.
#[test]
fn bo_single_fragment_near_oracle() {
    let ep = episode(TargetShape::Square, 0, 1, 5);
    let opt = oracle_step(&AssemblyState::reset(&ep), 1).unwrap().1;
    let hits = (0..20)
        .filter(|&seed| {
            let out = bo_assemble(&ep, &BoConfig { evals: 20, length_scale: 0.05, seed, ..BoConfig::default() }).unwrap();
            out.rollout.iou >= opt - 0.05
        })
        .count();
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn random_policy_is_seeded_and_in_band() {
    let eps: Vec<Episode> = (0..20).map(|i| episode(TargetShape::Square, 2, 1, i)).collect();
    let covs: Vec<f64> = eps.iter().map(|e| random_assemble(e, 0).unwrap().cov).collect();
    let again: Vec<f64> = eps.iter().map(|e| random_assemble(e, 0).unwrap().cov).collect();
    assert_eq!(covs, again);
    let mean = covs.iter().sum::<f64>() / covs.len() as f64;
    assert!(mean > 0.0 && mean < 1.0);
}
