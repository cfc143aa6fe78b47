//! Non-learned assembly methods: simulated annealing, Bayesian optimization
//! with one Gaussian process per rotation bin, an exhaustive greedy oracle
//! and a uniform random policy.
//!
//! Every method drives the same [`AssemblyState`] through [`rollout`], so
//! scores come from the identical environment and metric code as the
//! network.

mod bo;
mod gp;
mod oracle;
mod sa;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use bo::{bo_assemble, expected_improvement, BoConfig, BoOutcome};
pub use gp::{Gp, SeKernel};
pub use oracle::{greedy_oracle_assemble, oracle_step};
pub use sa::{sa_assemble, SaConfig, SaOutcome};

use crate::env::{rollout, Action, AssemblyState, EnvError, Rollout};
use crate::fragmenter::{derive_seed, Episode};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid baseline configuration: {0}")]
    Config(String),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// Incremental IoU of tentative placements against the current state.
pub struct Scorer<'a> {
    state: &'a AssemblyState,
    inter: usize,
    union: usize,
    buf: Vec<usize>,
}

impl<'a> Scorer<'a> {
    pub fn new(state: &'a AssemblyState) -> Self {
        let (c, s) = (state.current.cells(), state.target.cells());
        let inter = c.iter().zip(s).filter(|(a, b)| **a > 0.5 && **b > 0.5).count();
        let union = c.iter().zip(s).filter(|(a, b)| **a > 0.5 || **b > 0.5).count();
        Self { state, inter, union, buf: Vec::new() }
    }

    /// `(|c' ∩ S|, |c' ∪ S|)` after OR-ing the placement into `c`.
    pub fn counts(&mut self, a: &Action) -> (usize, usize) {
        self.buf.clear();
        self.state.action_pixels(a, &mut self.buf);
        let (c, s) = (self.state.current.cells(), self.state.target.cells());
        let (mut inter, mut union) = (self.inter, self.union);
        for &p in &self.buf {
            if c[p] <= 0.5 {
                if s[p] > 0.5 {
                    inter += 1;
                } else {
                    union += 1;
                }
            }
        }
        (inter, union)
    }

    /// Assembly IoU after the placement; 0 for an empty union.
    pub fn iou(&mut self, a: &Action) -> f64 {
        let (i, u) = self.counts(a);
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }
}

/// Runs a per-step optimizer that may fail with its own error type.
pub(crate) fn run<F>(ep: &Episode, mut policy: F) -> Result<Rollout>
where
    F: FnMut(&AssemblyState) -> Result<Action>,
{
    let mut failure = None;
    let out = rollout(ep, |s| {
        policy(s).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            EnvError::InvalidAction(msg)
        })
    });
    match (out, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}

/// Standard normal draw by Box-Muller.
pub(crate) fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniformly random visiting order of the episode's fragments.
pub fn visiting_order(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Pixel-center mean of the unfilled target, or the canvas center if the
/// target is complete.
pub fn remaining_centroid(state: &AssemblyState) -> (i64, i64) {
    let n = state.resolution;
    let rem = state.remaining_shape();
    let (mut sr, mut sc, mut k) = (0.0, 0.0, 0.0);
    for (p, &v) in rem.cells().iter().enumerate() {
        if v > 0.5 {
            sr += (p / n) as f64;
            sc += (p % n) as f64;
            k += 1.0;
        }
    }
    if k == 0.0 {
        return ((n / 2) as i64, (n / 2) as i64);
    }
    ((sr / k).round() as i64, (sc / k).round() as i64)
}

/// Random fragment, uniform center pixel and uniform bin at every step.
pub fn random_assemble(ep: &Episode, seed: u64) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 8, ep.id as u64));
    run(ep, |s| {
        let rem = s.remaining();
        let i = rem[rng.gen_range(0..rem.len())];
        let n = s.resolution as i64;
        Ok(Action { fragment_index: i, center: (rng.gen_range(0..n), rng.gen_range(0..n)), bin: rng.gen_range(0..s.num_bins) })
    })
}

#[cfg(test)]
mod tests;
