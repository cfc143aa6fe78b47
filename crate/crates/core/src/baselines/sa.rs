//! Simulated annealing over (center, bin) for one fragment at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal, remaining_centroid, run, visiting_order, BaselineError, Result, Scorer};
use crate::env::{Action, Rollout};
use crate::fragmenter::{derive_seed, Episode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    pub iters_per_fragment: usize,
    pub t0: f64,
    pub alpha: f64,
    /// Proposal standard deviation in pixels; `None` means resolution / 8.
    pub sigma: Option<f64>,
    /// Iterations between halvings of the proposal width.
    pub sigma_halving: usize,
    pub bin_flip: f64,
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self { iters_per_fragment: 200, t0: 0.2, alpha: 0.97, sigma: None, sigma_halving: 50, bin_flip: 0.2, seed: 0 }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BaselineError::Config(format!("need T0 > 0 and 0 < alpha < 1, got {} and {}", self.t0, self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.bin_flip) || self.sigma.is_some_and(|s| !(s >= 0.0)) || self.sigma_halving == 0 {
            return Err(BaselineError::Config("invalid proposal parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SaOutcome {
    pub rollout: Rollout,
    pub order: Vec<usize>,
    /// Best-so-far IoU after every iteration, per visited fragment.
    pub traces: Vec<Vec<f64>>,
    /// Accepted moves that lowered the current IoU, per fragment.
    pub worsening_accepted: Vec<usize>,
}

pub fn sa_assemble(ep: &Episode, cfg: &SaConfig) -> Result<SaOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 9, ep.id as u64));
    let order = visiting_order(ep.len(), &mut rng);
    let mut traces = Vec::with_capacity(ep.len());
    let mut worse = Vec::with_capacity(ep.len());
    let mut next = 0;
    let rollout = run(ep, |s| {
        let frag = order[next];
        next += 1;
        let n = s.resolution as i64;
        let b = s.num_bins;
        let sigma0 = cfg.sigma.unwrap_or(s.resolution as f64 / 8.0);
        let mut scorer = Scorer::new(s);
        let mut cur = Action { fragment_index: frag, center: remaining_centroid(s), bin: if b > 1 { rng.gen_range(0..b) } else { 0 } };
        let mut cur_f = scorer.iou(&cur);
        let (mut best, mut best_f) = (cur, cur_f);
        let mut trace = Vec::with_capacity(cfg.iters_per_fragment);
        let mut accepted_worse = 0;
        let mut temp = cfg.t0;
        for it in 0..cfg.iters_per_fragment {
            let sigma = sigma0 / 2f64.powi((it / cfg.sigma_halving) as i32);
            let mut cand = cur;
            let dr = (normal(&mut rng) * sigma).round() as i64;
            let dc = (normal(&mut rng) * sigma).round() as i64;
            cand.center = ((cur.center.0 + dr).clamp(0, n - 1), (cur.center.1 + dc).clamp(0, n - 1));
            if b > 1 && rng.gen::<f64>() < cfg.bin_flip {
                cand.bin = (cur.bin + rng.gen_range(1..b)) % b;
            }
            let f = scorer.iou(&cand);
            let accept = f >= cur_f || (temp > 0.0 && rng.gen::<f64>() < ((f - cur_f) / temp).exp());
            if accept {
                if f < cur_f {
                    accepted_worse += 1;
                }
                cur = cand;
                cur_f = f;
                if f > best_f {
                    best = cand;
                    best_f = f;
                }
            }
            trace.push(best_f);
            temp *= cfg.alpha;
        }
        traces.push(trace);
        worse.push(accepted_worse);
        Ok(best)
    })?;
    Ok(SaOutcome { rollout, order, traces, worsening_accepted: worse })
}
