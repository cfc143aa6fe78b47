use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Fan, FanConfig, Result};
use crate::ndnum::{BnStats, Gradients, Tape, Tensor, Var};

/// Batch statistics observed for one batchnorm layer during a training
/// forward pass: `(parameter prefix, mean, variance)`.
pub type BnObservation = (String, Vec<f64>, Vec<f64>);

/// One forward pass over a model: a tape plus the leaves created for the
/// parameters it touched.
pub struct Graph<'m> {
    pub tape: Tape<f64>,
    model: &'m Fan,
    leaves: Vec<Option<Var>>,
    trainable: bool,
    train: bool,
    rng: ChaCha8Rng,
    pub bn_observed: Vec<BnObservation>,
}

impl<'m> Graph<'m> {
    /// Parameters become trainable leaves; dropout and batch statistics are
    /// active if `train` is set and enabled in the config.
    pub fn for_training(model: &'m Fan, train: bool, seed: u64) -> Self {
        Self::build(model, true, train, seed)
    }

    /// Parameters are constants, so no gradient bookkeeping is recorded.
    pub fn for_inference(model: &'m Fan) -> Self {
        Self::build(model, false, false, 0)
    }

    fn build(model: &'m Fan, trainable: bool, train: bool, seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            model,
            leaves: vec![None; model.params.len()],
            trainable,
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_observed: Vec::new(),
        }
    }

    pub fn config(&self) -> &'m FanConfig {
        &self.model.config
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Leaf for the named parameter, created on first use.
    pub fn p(&mut self, name: &str) -> Var {
        let id = self.model.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(v) = self.leaves[id] {
            return v;
        }
        let t = self.model.params.get(id).clone();
        let v = if self.trainable { self.tape.leaf(t) } else { self.tape.constant(t) };
        self.leaves[id] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<f64>) -> Var {
        self.tape.constant(t)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let rate = self.config().dropout;
        Ok(self.tape.dropout(x, rate, self.train, &mut self.rng)?)
    }

    /// Batchnorm over channels when enabled, otherwise the identity.
    pub fn maybe_batchnorm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        if !self.config().batchnorm {
            return Ok(x);
        }
        let (gamma, beta) = (self.p(&format!("{prefix}.gamma")), self.p(&format!("{prefix}.beta")));
        let params = &self.model.params;
        if self.train {
            let (y, stats) = self.tape.batchnorm(x, gamma, beta, 1e-5, BnStats::Batch)?;
            let (m, v) = stats.expect("batch statistics");
            self.bn_observed.push((prefix.to_string(), m, v));
            Ok(y)
        } else {
            let mean = params.by_name(&format!("{prefix}.running_mean")).expect("running mean").data();
            let var = params.by_name(&format!("{prefix}.running_var")).expect("running var").data();
            Ok(self.tape.batchnorm(x, gamma, beta, 1e-5, BnStats::Running { mean, var })?.0)
        }
    }

    /// Gradient for every parameter id (zeros where untouched).
    pub fn param_grads(&self, grads: &Gradients<f64>) -> Vec<Option<Tensor<f64>>> {
        self.leaves.iter().map(|l| l.and_then(|v| grads.get(v).cloned())).collect()
    }
}
