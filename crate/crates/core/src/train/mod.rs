//! Teacher-forced training of the assembly network.
//!
//! Every episode with `N` fragments expands to `N` samples. Sample `k` sees
//! the first `k` fragments already placed at their ground-truth poses and
//! must select fragment `k` among the remaining ones, then predict its
//! center pixel and rotation bin.

mod adam;
mod loss;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use loss::{cross_entropy, loss_placement, loss_pose, loss_select, one_hot_index};

use crate::env::{gt_action, AssemblyState, EnvError};
use crate::fan::{argmax, observe, pose_forward, rotation_renders, select_forward, Fan, FanError, Graph, Observation};
use crate::fragmenter::{derive_seed, Episode};
use crate::geometry::RasterMask;
use crate::ndnum::{NdError, Tensor, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Fan(#[from] FanError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("label error: {0}")]
    Label(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("epoch {epoch}, step {step}: {source}")]
    Fault {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Training-set thresholds that end a run early once both are met.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub select_acc: f64,
    pub center_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Pooled levels of the placement loss beyond the full-resolution one.
    pub pool_levels: usize,
    pub lambda_pos: f64,
    pub lambda_rot: f64,
    pub seed: u64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub stop: Option<StopRule>,
    /// Epochs between checks of `stop`.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            pool_levels: 2,
            lambda_pos: 1000.0,
            lambda_rot: 10.0,
            seed: 0,
            max_steps: None,
            stop: None,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if self.batch_size == 0 || !finite_pos(self.lr) || !finite_pos(self.eps) || self.eval_every == 0 {
            return Err(TrainError::Config("batch size, learning rate, eps and eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.lambda_pos < 0.0 || self.lambda_rot < 0.0 {
            return Err(TrainError::Config("loss coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// One teacher-forced decision step.
#[derive(Clone, Debug)]
pub struct Sample {
    pub episode_id: usize,
    pub step: usize,
    /// Candidates in shuffled order.
    pub obs: Observation,
    /// Position of the ground-truth fragment within `obs.ids`.
    pub target: usize,
    pub rotations: Vec<RasterMask>,
    pub center: (i64, i64),
    pub tau: usize,
    pub rho: usize,
}

/// Expands an episode into one sample per step. Candidate order is shuffled
/// with a seed derived from `seed` and the episode id.
pub fn teacher_forcing(ep: &Episode, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, ep.id as u64));
    let mut state = AssemblyState::reset(ep);
    let res = ep.resolution;
    let mut out = Vec::with_capacity(ep.len());
    for k in 0..ep.len() {
        let mut ids = state.remaining();
        ids.shuffle(&mut rng);
        let target = ids.iter().position(|&i| i == k).expect("fragment k remains at step k");
        let frag = &ep.fragments[k];
        let (row, col) = frag.gt_center;
        out.push(Sample {
            episode_id: ep.id,
            step: k,
            obs: observe(&state, &ids),
            target,
            rotations: rotation_renders(frag, ep.num_bins, res),
            center: frag.gt_center,
            tau: row as usize * res + col as usize,
            rho: frag.gt_bin,
        });
        state.step(gt_action(ep, k))?;
    }
    Ok(out)
}

pub fn expand<'a>(episodes: impl IntoIterator<Item = &'a Episode>, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for ep in episodes {
        out.extend(teacher_forcing(ep, seed)?);
    }
    Ok(out)
}

struct Forward {
    scores: Var,
    map_logits: Var,
    rot_logits: Var,
    select: Var,
    placement: Var,
    rotation: Var,
    total: Var,
}

fn forward(g: &mut Graph<'_>, s: &Sample, cfg: &TrainConfig) -> Result<Forward> {
    let res = g.config().resolution;
    let scores = select_forward(g, &s.obs)?;
    let pose = pose_forward(g, &s.obs, s.target, &s.rotations)?;
    let select = cross_entropy(&mut g.tape, scores, s.target)?;
    let placement = loss_placement(&mut g.tape, pose.map_logits, res, s.tau, cfg.pool_levels)?;
    let rotation = cross_entropy(&mut g.tape, pose.rot_logits, s.rho)?;
    let wp = g.tape.scale(placement, cfg.lambda_pos)?;
    let wr = g.tape.scale(rotation, cfg.lambda_rot)?;
    let t = g.tape.add(select, wp)?;
    let total = g.tape.add(t, wr)?;
    Ok(Forward { scores, map_logits: pose.map_logits, rot_logits: pose.rot_logits, select, placement, rotation, total })
}

/// Loss terms of one sample: `(select, placement, rotation, total)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub select: f64,
    pub placement: f64,
    pub rotation: f64,
    pub total: f64,
}

impl LossTerms {
    fn read(g: &Graph<'_>, f: &Forward) -> Self {
        let v = |x: Var| g.tape.value(x).item();
        Self { select: v(f.select), placement: v(f.placement), rotation: v(f.rotation), total: v(f.total) }
    }

    fn add(&mut self, o: &Self) {
        self.select += o.select;
        self.placement += o.placement;
        self.rotation += o.rotation;
        self.total += o.total;
    }

    fn scaled(mut self, c: f64) -> Self {
        self.select *= c;
        self.placement *= c;
        self.rotation *= c;
        self.total *= c;
        self
    }
}

struct SampleGrad {
    terms: LossTerms,
    grads: Vec<Option<Tensor<f64>>>,
    bn: Vec<crate::fan::BnObservation>,
}

fn sample_grad(model: &Fan, s: &Sample, cfg: &TrainConfig, seed: u64) -> Result<SampleGrad> {
    let mut g = Graph::for_training(model, true, seed);
    let f = forward(&mut g, s, cfg)?;
    let terms = LossTerms::read(&g, &f);
    let grads = g.tape.backward(f.total)?;
    Ok(SampleGrad { terms, grads: g.param_grads(&grads), bn: std::mem::take(&mut g.bn_observed) })
}

/// Loss and gradient of the summed objective over `batch`. Per-sample work
/// runs in parallel; the reduction follows batch order.
pub fn batch_gradients(model: &Fan, samples: &[&Sample], cfg: &TrainConfig, seed: u64) -> Result<(LossTerms, Vec<Option<Tensor<f64>>>, Vec<crate::fan::BnObservation>)> {
    let parts: Vec<Result<SampleGrad>> = samples.par_iter().enumerate().map(|(i, s)| sample_grad(model, s, cfg, derive_seed(seed, 4, i as u64))).collect();
    let mut terms = LossTerms::default();
    let mut sum: Vec<Option<Tensor<f64>>> = vec![None; model.params.len()];
    let mut bn = Vec::new();
    for p in parts {
        let p = p?;
        terms.add(&p.terms);
        bn.extend(p.bn);
        for (acc, g) in sum.iter_mut().zip(p.grads) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    Ok((terms, sum, bn))
}

/// Accuracy-style metrics over teacher-forced samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub loss_select: f64,
    pub loss_placement: f64,
    pub loss_rotation: f64,
    pub loss_total: f64,
    /// Fraction of samples whose top score is the ground-truth fragment.
    pub select_acc: f64,
    /// Median pixel distance between the heat-map mode and the true center.
    pub center_err: f64,
    /// Fraction of samples whose most likely bin is the true one.
    pub rotation_acc: f64,
}

pub fn evaluate(model: &Fan, samples: &[Sample], cfg: &TrainConfig) -> Result<SampleMetrics> {
    if samples.is_empty() {
        return Ok(SampleMetrics::default());
    }
    let res = model.config.resolution;
    let per: Vec<Result<(LossTerms, bool, f64, bool)>> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::for_inference(model);
            let f = forward(&mut g, s, cfg)?;
            let terms = LossTerms::read(&g, &f);
            let hit = argmax(g.tape.value(f.scores).data()) == s.target;
            let px = argmax(g.tape.value(f.map_logits).data());
            let (dr, dc) = ((px / res) as f64 - s.center.0 as f64, (px % res) as f64 - s.center.1 as f64);
            let rot_hit = argmax(g.tape.value(f.rot_logits).data()) == s.rho;
            Ok((terms, hit, dr.hypot(dc), rot_hit))
        })
        .collect();
    let mut terms = LossTerms::default();
    let (mut hits, mut rot_hits) = (0usize, 0usize);
    let mut errs = Vec::with_capacity(samples.len());
    for p in per {
        let (t, hit, e, rh) = p?;
        terms.add(&t);
        hits += hit as usize;
        rot_hits += rh as usize;
        errs.push(e);
    }
    let n = samples.len() as f64;
    let terms = terms.scaled(1.0 / n);
    Ok(SampleMetrics {
        loss_select: terms.select,
        loss_placement: terms.placement,
        loss_rotation: terms.rotation,
        loss_total: terms.total,
        select_acc: hits as f64 / n,
        center_err: median(&mut errs),
        rotation_acc: rot_hits as f64 / n,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One row of the training log. Train losses are sample means over the
/// optimization pass of the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss_select: f64,
    pub train_loss_pose: f64,
    pub train_loss_rotation: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_select_acc: f64,
    pub val_center_err: f64,
}

pub fn write_history<W: Write>(w: W, history: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in history {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the lowest validation loss (the last one without a
    /// validation set).
    pub best: Fan,
    pub last: Fan,
    pub history: Vec<EpochLog>,
    pub steps: usize,
    /// Whether the stop rule ended the run.
    pub stopped_early: bool,
}

const BN_MOMENTUM: f64 = 0.1;

fn update_running_stats(model: &mut Fan, observed: &[crate::fan::BnObservation]) {
    let mut prefixes: Vec<&str> = observed.iter().map(|o| o.0.as_str()).collect();
    prefixes.dedup();
    prefixes.sort_unstable();
    prefixes.dedup();
    for prefix in prefixes {
        let rows: Vec<_> = observed.iter().filter(|o| o.0 == prefix).collect();
        let n = rows.len() as f64;
        for (suffix, pick) in [("running_mean", 1usize), ("running_var", 2)] {
            let Some(id) = model.params.id(&format!("{prefix}.{suffix}")) else { continue };
            let t = model.params.get_mut(id).data_mut();
            for (c, slot) in t.iter_mut().enumerate() {
                let avg = rows.iter().map(|r| if pick == 1 { r.1[c] } else { r.2[c] }).sum::<f64>() / n;
                *slot = (1.0 - BN_MOMENTUM) * *slot + BN_MOMENTUM * avg;
            }
        }
    }
}

/// Adam over shuffled mini-batches with gradients summed per batch.
pub fn train(model: Fan, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::Config("empty training set".into()));
    }
    let mut model = model;
    let mut opt = Adam::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5, 0));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone());
    let mut steps = 0usize;
    let mut stopped_early = false;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let fault = |e: TrainError| TrainError::Fault { epoch, step: steps, source: Box::new(e) };
            let (terms, grads, bn) = batch_gradients(&model, &batch, cfg, derive_seed(cfg.seed, 6, steps as u64)).map_err(fault)?;
            let trainable: Vec<bool> = (0..model.params.len()).map(|i| model.is_trainable(i)).collect();
            opt.step(&mut model.params, &grads, |i| trainable[i]).map_err(|e| fault(e.into()))?;
            update_running_stats(&mut model, &bn);
            sum.add(&terms);
            seen += batch.len();
            steps += 1;
        }
        let mean = sum.scaled(1.0 / seen.max(1) as f64);
        let val = evaluate(&model, val_set, cfg).map_err(|e| TrainError::Fault { epoch, step: steps, source: Box::new(e) })?;
        let score = if val_set.is_empty() { f64::NEG_INFINITY } else { val.loss_total };
        if score < best.0 || val_set.is_empty() {
            best = (score, model.clone());
        }
        history.push(EpochLog {
            epoch,
            steps,
            train_loss_select: mean.select,
            train_loss_pose: mean.placement,
            train_loss_rotation: mean.rotation,
            train_loss: mean.total,
            val_loss: val.loss_total,
            val_select_acc: val.select_acc,
            val_center_err: val.center_err,
        });
        if let Some(rule) = cfg.stop {
            if epoch % cfg.eval_every == 0 {
                let m = evaluate(&model, train_set, cfg)?;
                if m.select_acc >= rule.select_acc && m.center_err <= rule.center_err {
                    stopped_early = true;
                    if val_set.is_empty() {
                        best = (f64::NEG_INFINITY, model.clone());
                    }
                    break 'epochs;
                }
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    Ok(TrainOutcome { best: best.1, last: model, history, steps, stopped_early })
}
