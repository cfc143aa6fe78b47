//! Runs any assembly method over a set of episodes.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{bo_assemble, greedy_oracle_assemble, random_assemble, sa_assemble, BaselineError, BoConfig, SaConfig};
use crate::env::{rollout, EnvError, Rollout, StepRecord};
use crate::fan::{Fan, FanError};
use crate::fragmenter::Episode;
use crate::metrics::EvalRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Clone, Debug)]
pub enum Method {
    Fan(Box<Fan>),
    Sa(SaConfig),
    Bo(BoConfig),
    Oracle { stride: usize },
    Random { seed: u64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fan(_) => "fan",
            Self::Sa(_) => "sa",
            Self::Bo(_) => "bo",
            Self::Oracle { .. } => "oracle",
            Self::Random { .. } => "random",
        }
    }
}

/// Greedy rollout of the network's argmax decisions.
pub fn fan_assemble(model: &Fan, ep: &Episode) -> Result<Rollout> {
    let mut failure = None;
    let out = rollout(ep, |s| {
        model.act(s).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            EnvError::InvalidAction(msg)
        })
    });
    match (out, failure) {
        (_, Some(e)) => Err(e.into()),
        (r, None) => Ok(r?),
    }
}

pub fn assemble(method: &Method, ep: &Episode) -> Result<Rollout> {
    Ok(match method {
        Method::Fan(m) => fan_assemble(m, ep)?,
        Method::Sa(c) => sa_assemble(ep, c)?.rollout,
        Method::Bo(c) => bo_assemble(ep, c)?.rollout,
        Method::Oracle { stride } => greedy_oracle_assemble(ep, *stride)?,
        Method::Random { seed } => random_assemble(ep, *seed)?,
    })
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub record: EvalRecord,
    pub log: Vec<StepRecord>,
}

/// Evaluates every episode in parallel; results follow episode id order.
/// With `timed` unset the recorded wall time is zero, which keeps reports
/// byte-reproducible.
pub fn evaluate(method: &Method, episodes: &[&Episode], timed: bool) -> Result<Vec<EpisodeResult>> {
    let mut out: Vec<EpisodeResult> = episodes
        .par_iter()
        .map(|ep| {
            let start = Instant::now();
            let r = assemble(method, ep).map_err(|e| EvalError::Episode { episode: ep.id, source: Box::new(e) })?;
            let wall_time_sec = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
            Ok(EpisodeResult { record: EvalRecord { episode_id: ep.id, cov: r.cov, iou: r.iou, wall_time_sec }, log: r.log })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|r| r.record.episode_id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fan::FanConfig;
    use crate::fragmenter::{generate_dataset, DatasetConfig, TargetShape};

    #[test]
    fn every_method_places_every_fragment() {
        let ds = generate_dataset(&DatasetConfig { n_samples: 3, resolution: 16, ..DatasetConfig::new(TargetShape::Square, 1) }).unwrap();
        let eps: Vec<&Episode> = ds.episodes.iter().rev().collect();
        let fan = Fan::new(FanConfig { resolution: 16, embed_dim: 8, heads: 2, d_key: 4, d_value: 4, stacks: 1, ..FanConfig::default() }).unwrap();
        let methods = [
            Method::Fan(Box::new(fan)),
            Method::Sa(SaConfig { iters_per_fragment: 20, ..SaConfig::default() }),
            Method::Bo(BoConfig { evals: 6, ..BoConfig::default() }),
            Method::Oracle { stride: 2 },
            Method::Random { seed: 1 },
        ];
        for m in &methods {
            let res = evaluate(m, &eps, false).unwrap();
            assert_eq!(res.iter().map(|r| r.record.episode_id).collect::<Vec<_>>(), vec![0, 1, 2], "{}", m.name());
            for r in &res {
                assert_eq!(r.log.len(), 2);
                assert_eq!(r.record.wall_time_sec, 0.0);
                assert_eq!(r.record.cov, r.log.last().unwrap().cov_after);
            }
        }
    }

    #[test]
    fn mismatched_model_is_an_episode_error() {
        let ds = generate_dataset(&DatasetConfig { n_samples: 1, ..DatasetConfig::new(TargetShape::Square, 1) }).unwrap();
        let fan = Fan::new(FanConfig { resolution: 16, embed_dim: 8, heads: 2, d_key: 4, d_value: 4, stacks: 1, ..FanConfig::default() }).unwrap();
        let err = evaluate(&Method::Fan(Box::new(fan)), &[&ds.episodes[0]], true).unwrap_err();
        assert!(matches!(err, EvalError::Episode { episode: 0, .. }));
    }
}
