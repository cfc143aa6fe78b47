//! Exhaustive one-step lookahead over every remaining fragment, bin and
//! grid center.

use super::{run, BaselineError, Result, Scorer};
use crate::env::{Action, AssemblyState, Rollout};
use crate::fragmenter::Episode;

/// Placement with the highest resulting IoU. Ties go to the lowest
/// `(fragment, bin, row, col)`.
pub fn oracle_step(state: &AssemblyState, stride: usize) -> Result<(Action, f64)> {
    if stride == 0 {
        return Err(BaselineError::Config("stride must be at least 1".into()));
    }
    let n = state.resolution as i64;
    let mut scorer = Scorer::new(state);
    let mut best: Option<(Action, (usize, usize))> = None;
    for fragment_index in state.remaining() {
        for bin in 0..state.num_bins {
            for row in (0..n).step_by(stride) {
                for col in (0..n).step_by(stride) {
                    let a = Action { fragment_index, center: (row, col), bin };
                    let (i, u) = scorer.counts(&a);
                    // i/u > bi/bu without division.
                    if best.map_or(true, |(_, (bi, bu))| i * bu > bi * u) {
                        best = Some((a, (i, u)));
                    }
                }
            }
        }
    }
    let (a, (i, u)) = best.ok_or_else(|| BaselineError::Config("no fragment left to place".into()))?;
    Ok((a, if u == 0 { 0.0 } else { i as f64 / u as f64 }))
}

pub fn greedy_oracle_assemble(ep: &Episode, stride: usize) -> Result<Rollout> {
    run(ep, |s| Ok(oracle_step(s, stride)?.0))
}
