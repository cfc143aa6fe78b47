//! Bayesian optimization of each fragment's center, one GP per rotation bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::{Gp, SeKernel};
use super::{run, visiting_order, BaselineError, Result, Scorer};
use crate::env::{Action, Rollout};
use crate::fragmenter::{derive_seed, Episode};
use crate::geometry::pixel_center;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Objective evaluations per fragment and bin, initial design included.
    pub evals: usize,
    pub initial: usize,
    pub length_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { evals: 15, initial: 5, length_scale: 0.2, noise: 1e-6, seed: 0 }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial == 0 || self.evals < self.initial {
            return Err(BaselineError::Config(format!("need 1 <= initial <= evals, got {} and {}", self.initial, self.evals)));
        }
        if !(self.length_scale > 0.0) || !(self.noise >= 0.0) {
            return Err(BaselineError::Config("length scale must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// `E[max(f - best, 0)]` under a Gaussian posterior.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.sqrt();
    let gain = mean - best;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let n = Normal::standard();
    (gain * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

#[derive(Clone, Debug)]
pub struct BoOutcome {
    pub rollout: Rollout,
    pub order: Vec<usize>,
    /// Evaluated `(bin, row, col, iou)` per visited fragment.
    pub evaluations: Vec<Vec<(usize, i64, i64, f64)>>,
}

pub fn bo_assemble(ep: &Episode, cfg: &BoConfig) -> Result<BoOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10, ep.id as u64));
    let order = visiting_order(ep.len(), &mut rng);
    let kernel = SeKernel { length: cfg.length_scale, signal_var: 1.0, noise: cfg.noise };
    let mut evaluations = Vec::with_capacity(ep.len());
    let mut next = 0;
    let rollout = run(ep, |s| {
        let frag = order[next];
        next += 1;
        let n = s.resolution;
        let coords: Vec<[f64; 2]> = (0..n * n)
            .map(|p| {
                let c = pixel_center::<f64>((p / n) as i64, (p % n) as i64, n, n);
                [c.x, c.y]
            })
            .collect();
        let mut scorer = Scorer::new(s);
        let mut log = Vec::with_capacity(cfg.evals * s.num_bins);
        let mut best: Option<(f64, Action)> = None;
        for bin in 0..s.num_bins {
            let mut seen = vec![false; n * n];
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for e in 0..cfg.evals {
                let p = if e < cfg.initial {
                    rng.gen_range(0..n * n)
                } else {
                    // Standardized targets keep the unit signal variance
                    // on the scale of the observed spread.
                    let k = ys.len() as f64;
                    let mean = ys.iter().sum::<f64>() / k;
                    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / k).sqrt().max(1e-9);
                    let zs: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
                    let gp = Gp::fit(&xs, &zs, kernel, 0.0)?;
                    let fbest = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut pick = None;
                    for p in (0..n * n).filter(|&p| !seen[p]) {
                        let (m, v) = gp.predict(&coords[p]);
                        let ei = expected_improvement(m, v, fbest);
                        if pick.map_or(true, |(_, b)| ei > b) {
                            pick = Some((p, ei));
                        }
                    }
                    match pick {
                        Some((p, _)) => p,
                        None => break,
                    }
                };
                seen[p] = true;
                let a = Action { fragment_index: frag, center: ((p / n) as i64, (p % n) as i64), bin };
                let f = scorer.iou(&a);
                xs.push(coords[p]);
                ys.push(f);
                log.push((bin, a.center.0, a.center.1, f));
                if best.map_or(true, |(bf, _)| f > bf) {
                    best = Some((f, a));
                }
            }
        }
        evaluations.push(log);
        Ok(best.expect("at least one evaluation").1)
    })?;
    Ok(BoOutcome { rollout, order, evaluations })
}
