//! Assembly state machine: a target mask, the current canvas and the set of
//! fragments not yet placed.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fragmenter::{Episode, EpisodeFragment, Scenario};
use crate::geometry::{pixel_center, place, raster_pixels, rasterize, Polygon, RasterMask};
use crate::metrics::{self, MetricError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("policy failed at step {step}: {source}")]
    Policy {
        step: usize,
        #[source]
        source: Box<EnvError>,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

/// Place fragment `fragment_index` (its id within the episode) with its
/// anchor at the center of pixel `center`, after rotating by `bin` steps.
/// The pixel may lie off the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub fragment_index: usize,
    pub center: (i64, i64),
    pub bin: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyState {
    pub resolution: usize,
    pub num_bins: usize,
    pub target: RasterMask,
    pub current: RasterMask,
    pub fragments: Vec<EpisodeFragment>,
    pub consumed: Vec<bool>,
    pub step: usize,
    pub action_log: Vec<Action>,
}

/// Mask the assembly is scored against. For abnormal scenarios this is the
/// union of the provided fragments at their true poses, so a perfect solver
/// is not penalized for material that was never handed to it.
pub fn evaluation_target(ep: &Episode) -> RasterMask {
    let n = ep.resolution;
    if ep.scenario == Scenario::Normal {
        return rasterize(&ep.target, n, n);
    }
    let mut mask = RasterMask::zeros(n, n);
    let mut px = Vec::new();
    for i in 0..ep.fragments.len() {
        px.clear();
        raster_pixels(&ep.gt_polygon(i), n, n, &mut px);
        mask.fill(&px);
    }
    mask
}

/// Fragment polygon after applying `bin` and moving its anchor to `center`.
pub fn placed_polygon(frag: &EpisodeFragment, center: (i64, i64), bin: usize, num_bins: usize, resolution: usize) -> Polygon<f64> {
    let anchor = pixel_center(center.0, center.1, resolution, resolution);
    place(&frag.canonical, bin, num_bins, anchor)
}

pub fn gt_action(ep: &Episode, i: usize) -> Action {
    let f = &ep.fragments[i];
    Action { fragment_index: i, center: f.gt_center, bin: f.gt_bin }
}

impl AssemblyState {
    pub fn reset(ep: &Episode) -> Self {
        let n = ep.resolution;
        Self {
            resolution: n,
            num_bins: ep.num_bins,
            target: evaluation_target(ep),
            current: RasterMask::zeros(n, n),
            fragments: ep.fragments.clone(),
            consumed: vec![false; ep.fragments.len()],
            step: 0,
            action_log: Vec::new(),
        }
    }

    /// `max(S - c, 0)` per pixel.
    pub fn remaining_shape(&self) -> RasterMask {
        self.target.subtract(&self.current).expect("matching dims")
    }

    /// Ids of fragments still to place, ascending.
    pub fn remaining(&self) -> Vec<usize> {
        (0..self.fragments.len()).filter(|&i| !self.consumed[i]).collect()
    }

    pub fn is_done(&self) -> bool {
        self.consumed.iter().all(|&c| c)
    }

    pub fn coverage(&self) -> Result<f64> {
        Ok(metrics::coverage(&self.current, &self.target)?)
    }

    pub fn iou(&self) -> Result<f64> {
        Ok(metrics::iou(&self.current, &self.target)?)
    }

    pub fn validate(&self, a: &Action) -> Result<()> {
        if a.fragment_index >= self.fragments.len() {
            return Err(EnvError::InvalidAction(format!(
                "fragment {} out of range ({} fragments)",
                a.fragment_index,
                self.fragments.len()
            )));
        }
        if self.consumed[a.fragment_index] {
            return Err(EnvError::InvalidAction(format!("fragment {} already placed", a.fragment_index)));
        }
        if a.bin >= self.num_bins {
            return Err(EnvError::InvalidAction(format!("bin {} out of range ({} bins)", a.bin, self.num_bins)));
        }
        Ok(())
    }

    /// Pixels the action would set (clipped to the canvas).
    pub fn action_pixels(&self, a: &Action, out: &mut Vec<usize>) {
        let poly = placed_polygon(&self.fragments[a.fragment_index], a.center, a.bin, self.num_bins, self.resolution);
        raster_pixels(&poly, self.resolution, self.resolution, out);
    }

    /// Applies `a`; on error the state is left untouched.
    pub fn step(&mut self, a: Action) -> Result<()> {
        self.validate(&a)?;
        let mut px = Vec::new();
        self.action_pixels(&a, &mut px);
        self.current.fill(&px);
        self.consumed[a.fragment_index] = true;
        self.step += 1;
        self.action_log.push(a);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub fragment_index: usize,
    pub row: i64,
    pub col: i64,
    pub bin: usize,
    pub cov_after: f64,
    pub iou_after: f64,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub state: AssemblyState,
    pub cov: f64,
    pub iou: f64,
    pub log: Vec<StepRecord>,
}

/// Runs `policy` until every fragment is placed.
pub fn rollout<P>(ep: &Episode, mut policy: P) -> Result<Rollout>
where
    P: FnMut(&AssemblyState) -> Result<Action>,
{
    let mut state = AssemblyState::reset(ep);
    let mut log = Vec::with_capacity(ep.fragments.len());
    while !state.is_done() {
        let step = state.step;
        let wrap = |e: EnvError| EnvError::Policy { step, source: Box::new(e) };
        let a = policy(&state).map_err(wrap)?;
        state.step(a).map_err(wrap)?;
        log.push(StepRecord {
            step,
            fragment_index: a.fragment_index,
            row: a.center.0,
            col: a.center.1,
            bin: a.bin,
            cov_after: state.coverage()?,
            iou_after: state.iou()?,
        });
    }
    let (cov, iou) = (state.coverage()?, state.iou()?);
    Ok(Rollout { state, cov, iou, log })
}

/// Places the lowest remaining fragment at its ground-truth pose.
pub fn gt_policy(ep: &Episode) -> impl FnMut(&AssemblyState) -> Result<Action> + '_ {
    move |s| {
        let i = *s.remaining().first().ok_or_else(|| EnvError::InvalidAction("nothing left".into()))?;
        Ok(gt_action(ep, i))
    }
}

pub fn write_rollout_log<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if log.is_empty() {
        wr.write_record(["step", "fragment_index", "row", "col", "bin", "cov_after", "iou_after"])?;
    }
    for r in log {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rollout_log<R: Read>(r: R) -> Result<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Re-applies a logged rollout, returning the state after every step.
pub fn replay(ep: &Episode, log: &[StepRecord]) -> Result<Vec<AssemblyState>> {
    let mut state = AssemblyState::reset(ep);
    let mut out = vec![state.clone()];
    for r in log {
        state.step(Action { fragment_index: r.fragment_index, center: (r.row, r.col), bin: r.bin })?;
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragmenter::{generate_episode, DatasetConfig, TargetShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn episode(shape: TargetShape, k: usize, bins: usize, idx: usize) -> Episode {
        let cfg = DatasetConfig { num_bins: bins, seed: 11, ..DatasetConfig::new(shape, k) };
        generate_episode(&cfg, idx).unwrap()
    }

    #[test]
    fn reset_is_empty() {
        let ep = episode(TargetShape::Square, 3, 4, 0);
        let s = AssemblyState::reset(&ep);
        assert_eq!(s.coverage().unwrap(), 0.0);
        assert_eq!(s.remaining().len(), 8);
        assert_eq!(s.remaining_shape(), s.target);
        let expect = ep.target.area() * 1024.0;
        assert!((s.target.count() as f64 - expect).abs() <= ep.target.perimeter() * 32.0 + 4.0);
    }

    #[test]
    fn gt_replay_is_exact() {
        for shape in TargetShape::ALL {
            for bins in [1, 4, 20] {
                for idx in 0..5 {
                    let ep = episode(shape, 3, bins, idx);
                    let r = rollout(&ep, gt_policy(&ep)).unwrap();
                    assert_eq!((r.cov, r.iou), (1.0, 1.0), "{shape} b={bins} ep={idx}");
                    assert_eq!(r.state.remaining_shape().count(), 0);
                }
            }
        }
    }

    #[test]
    fn remaining_drops_by_fragment_pixels() {
        let ep = episode(TargetShape::Hexagon, 3, 4, 1);
        let mut s = AssemblyState::reset(&ep);
        let before = s.remaining_shape().count();
        let a = gt_action(&ep, 0);
        let mut px = Vec::new();
        s.action_pixels(&a, &mut px);
        s.step(a).unwrap();
        assert_eq!(s.remaining_shape().count(), before - px.len());
    }

    #[test]
    fn invalid_actions_leave_state_unchanged() {
        let ep = episode(TargetShape::Square, 2, 4, 0);
        let mut s = AssemblyState::reset(&ep);
        s.step(gt_action(&ep, 0)).unwrap();
        let snapshot = s.clone();
        for a in [
            gt_action(&ep, 0),
            Action { fragment_index: 9, center: (0, 0), bin: 0 },
            Action { fragment_index: 1, center: (0, 0), bin: 4 },
        ] {
            assert!(matches!(s.step(a), Err(EnvError::InvalidAction(_))));
            assert_eq!(s, snapshot);
        }
    }

    #[test]
    fn off_canvas_placement_consumes_without_drawing() {
        let ep = episode(TargetShape::Square, 2, 1, 0);
        let mut s = AssemblyState::reset(&ep);
        s.step(Action { fragment_index: 2, center: (-500, 900), bin: 0 }).unwrap();
        assert_eq!(s.current.count(), 0);
        assert_eq!(s.remaining(), vec![0, 1, 3]);
    }

    #[test]
    fn center_policy_loses_coverage_and_stays_binary() {
        let ep = episode(TargetShape::Square, 3, 1, 2);
        let r = rollout(&ep, |s: &AssemblyState| {
            Ok(Action { fragment_index: s.remaining()[0], center: (16, 16), bin: 0 })
        })
        .unwrap();
        assert!(r.cov < 1.0);
        assert!(r.state.current.is_binary());
        assert_eq!(r.log.len(), 8);
        assert!(r.log.windows(2).all(|w| w[0].cov_after <= w[1].cov_after));
    }

    #[test]
    fn random_policy_band() {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let ep = episode(TargetShape::Square, 3, 1, seed as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rollout(&ep, |s: &AssemblyState| {
                let rem = s.remaining();
                Ok(Action {
                    fragment_index: rem[rng.gen_range(0..rem.len())],
                    center: (rng.gen_range(0..32), rng.gen_range(0..32)),
                    bin: 0,
                })
            })
            .unwrap();
            total += r.cov;
        }
        let mean = total / 20.0;
        assert!(mean > 0.0 && mean < 1.0, "mean {mean}");
    }

    #[test]
    fn policy_error_carries_step() {
        let ep = episode(TargetShape::Square, 2, 1, 0);
        let err = rollout(&ep, |s: &AssemblyState| Ok(Action { fragment_index: 0, center: (0, 0), bin: s.step })).unwrap_err();
        assert!(matches!(err, EnvError::Policy { step: 1, .. }), "{err}");
    }

    #[test]
    fn abnormal_target_is_union_of_fragments() {
        let cfg = DatasetConfig { scenario: Scenario::Eroded, num_bins: 4, ..DatasetConfig::new(TargetShape::Square, 3) };
        let ep = generate_episode(&cfg, 0).unwrap();
        let full = rasterize(&ep.target, 32, 32);
        let s = AssemblyState::reset(&ep);
        assert!(s.target.count() < full.count());
        let r = rollout(&ep, gt_policy(&ep)).unwrap();
        assert_eq!(r.cov, 1.0);
    }

    #[test]
    fn rollout_csv_columns() {
        let ep = episode(TargetShape::Square, 1, 1, 0);
        let r = rollout(&ep, gt_policy(&ep)).unwrap();
        let mut buf = Vec::new();
        write_rollout_log(&mut buf, &r.log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,fragment_index,row,col,bin,cov_after,iou_after");
        assert_eq!(text.lines().count(), 3);
        let back = read_rollout_log(text.as_bytes()).unwrap();
        assert_eq!(back, r.log);
        let states = replay(&ep, &back).unwrap();
        assert_eq!(states.len(), 3);
        assert_eq!(states[2].current, r.state.current);
    }
}
