//! Fragment assembly network: a selection branch that scores every remaining
//! fragment and a pose branch that predicts a placement heat map and a
//! rotation distribution for the selected one.
//!
//! Both branches embed single-channel masks with their own CNN encoder, pass
//! each fragment embedding (concatenated with the remaining-shape embedding)
//! through a shared MLP, and relate fragments with FRAM set attention. The
//! pose decoder upsamples with skip connections from the remaining-shape
//! encoder features.

mod attention;
mod graph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{fram, multi_head, scaled_dot_product};
pub use graph::{BnObservation, Graph};

use crate::env::{Action, AssemblyState};
use crate::fragmenter::EpisodeFragment;
use crate::geometry::{place, pixel_center, rasterize, RasterMask};
use crate::ndnum::{Checkpoint, NdError, ParamStore, Tensor, Var};

#[derive(Debug, Error)]
pub enum FanError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = FanError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanConfig {
    pub resolution: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Per-head query/key width.
    pub d_key: usize,
    /// Per-head value width.
    pub d_value: usize,
    /// Self-attention layers per FRAM.
    pub stacks: usize,
    pub num_bins: usize,
    /// Output channels of each encoder stage; every stage halves the side.
    pub channels: Vec<usize>,
    pub dropout: f64,
    pub batchnorm: bool,
    pub seed: u64,
}

impl Default for FanConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            embed_dim: 64,
            heads: 4,
            d_key: 16,
            d_value: 16,
            stacks: 2,
            num_bins: 1,
            channels: vec![4, 8],
            dropout: 0.0,
            batchnorm: false,
            seed: 0,
        }
    }
}

impl FanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FanError::Config(m));
        let dims = [self.resolution, self.embed_dim, self.heads, self.d_key, self.d_value, self.num_bins];
        if dims.contains(&0) || self.channels.is_empty() || self.channels.contains(&0) {
            return bad("all dimensions must be at least 1".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        let scale = 1usize << self.channels.len();
        if self.resolution % scale != 0 {
            return bad(format!("resolution {} not divisible by 2^{}", self.resolution, self.channels.len()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn bottleneck(&self) -> usize {
        self.resolution >> self.channels.len()
    }
}

/// Fragment masks for one decision step, in candidate order.
#[derive(Clone, Debug)]
pub struct Observation {
    /// Episode fragment ids, aligned with `fragments`.
    pub ids: Vec<usize>,
    pub fragments: Vec<RasterMask>,
    pub remaining: RasterMask,
}

/// The fragment at `bin`, rendered with its anchor on the canvas center.
pub fn render_centered(frag: &EpisodeFragment, bin: usize, num_bins: usize, resolution: usize) -> RasterMask {
    let half = (resolution / 2) as i64;
    let anchor = pixel_center(half, half, resolution, resolution);
    rasterize(&place(&frag.canonical, bin, num_bins, anchor), resolution, resolution)
}

pub fn rotation_renders(frag: &EpisodeFragment, num_bins: usize, resolution: usize) -> Vec<RasterMask> {
    (0..num_bins).map(|k| render_centered(frag, k, num_bins, resolution)).collect()
}

/// Observation of `state` listing the fragments `ids` in the given order.
pub fn observe(state: &AssemblyState, ids: &[usize]) -> Observation {
    let (b, r) = (state.num_bins, state.resolution);
    Observation {
        ids: ids.to_vec(),
        fragments: ids.iter().map(|&i| render_centered(&state.fragments[i], 0, b, r)).collect(),
        remaining: state.remaining_shape(),
    }
}

fn stack_masks(masks: &[&RasterMask], res: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(masks.len() * res * res);
    for m in masks {
        data.extend_from_slice(m.cells());
    }
    Tensor::new(vec![masks.len(), 1, res, res], data).expect("consistent mask sizes")
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fan {
    pub config: FanConfig,
    pub params: ParamStore<f64>,
}

struct Init<'a> {
    params: &'a mut ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform in `±sqrt(gain / fan_in)`; gain 6 ahead of a ReLU, 3 otherwise.
    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize, relu: bool) {
        let bound = ((if relu { 6.0 } else { 3.0 }) / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.params.add(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    fn filled(&mut self, name: &str, shape: &[usize], v: f64) {
        self.params.add(name, Tensor::full(shape, v));
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize, relu: bool) {
        self.weight(&format!("{prefix}.w"), &[i, o], i, relu);
        self.filled(&format!("{prefix}.b"), &[o], 0.0);
    }

    fn attention(&mut self, prefix: &str, cfg: &FanConfig) {
        let d = cfg.embed_dim;
        for i in 0..cfg.heads {
            self.weight(&format!("{prefix}.q{i}"), &[d, cfg.d_key], d, false);
            self.weight(&format!("{prefix}.k{i}"), &[d, cfg.d_key], d, false);
            self.weight(&format!("{prefix}.v{i}"), &[d, cfg.d_value], d, false);
        }
        let hv = cfg.heads * cfg.d_value;
        self.weight(&format!("{prefix}.o"), &[hv, d], hv, false);
    }

    fn fram(&mut self, prefix: &str, cfg: &FanConfig) {
        for s in 0..cfg.stacks {
            self.attention(&format!("{prefix}.mh{s}"), cfg);
        }
        self.attention(&format!("{prefix}.agg"), cfg);
    }

    fn batchnorm(&mut self, prefix: &str, c: usize) {
        self.filled(&format!("{prefix}.gamma"), &[c], 1.0);
        self.filled(&format!("{prefix}.beta"), &[c], 0.0);
        self.filled(&format!("{prefix}.running_mean"), &[c], 0.0);
        self.filled(&format!("{prefix}.running_var"), &[c], 1.0);
    }

    fn encoder(&mut self, prefix: &str, cfg: &FanConfig) {
        let mut c_prev = 1;
        for (s, &c) in cfg.channels.iter().enumerate() {
            self.weight(&format!("{prefix}.conv{s}.w"), &[c, c_prev, 3, 3], c_prev * 9, true);
            self.filled(&format!("{prefix}.conv{s}.b"), &[c], 0.0);
            if cfg.batchnorm {
                self.batchnorm(&format!("{prefix}.bn{s}"), c);
            }
            c_prev = c;
        }
        let side = cfg.bottleneck();
        self.linear(&format!("{prefix}.fc"), c_prev * side * side, cfg.embed_dim, true);
    }

    fn head(&mut self, prefix: &str, d: usize) {
        self.linear(&format!("{prefix}.l0"), 2 * d, d, true);
        self.linear(&format!("{prefix}.l1"), d, 1, false);
    }
}

impl Fan {
    pub fn new(config: FanConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { params: &mut params, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let cfg = &config;
        let d = cfg.embed_dim;
        init.encoder("sel.enc", cfg);
        init.encoder("pose.enc", cfg);
        init.linear("mlp", 2 * d, d, true);
        init.fram("sel.fram", cfg);
        init.fram("pose.fram", cfg);
        init.fram("rot.fram", cfg);
        init.head("sel.head", d);
        init.head("rot.head", d);
        init.linear("pose.z", 3 * d, d, true);
        let side = cfg.bottleneck();
        let mut cur = *cfg.channels.last().expect("nonempty channels");
        init.linear("pose.dec.fc", d, cur * side * side, true);
        for (s, &c) in cfg.channels.iter().enumerate().rev() {
            init.weight(&format!("pose.dec.up{s}.w"), &[cur, c, 2, 2], cur, true);
            init.filled(&format!("pose.dec.up{s}.b"), &[c], 0.0);
            init.weight(&format!("pose.dec.conv{s}.w"), &[c, 2 * c, 3, 3], 2 * c * 9, true);
            init.filled(&format!("pose.dec.conv{s}.b"), &[c], 0.0);
            cur = c;
        }
        init.weight("pose.dec.out.w", &[1, cur, 1, 1], cur, false);
        init.filled("pose.dec.out.b", &[1], 0.0);
        Ok(Self { config, params })
    }

    /// Running batchnorm statistics are state, not trainable weights.
    pub fn is_trainable(&self, id: usize) -> bool {
        let n = self.params.name(id);
        !(n.ends_with(".running_mean") || n.ends_with(".running_var"))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        let meta = serde_json::json!({ "kind": "fan", "config": self.config });
        Checkpoint { meta, params: self.params.clone() }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<f64>) -> Result<Self> {
        let cfg = ckpt
            .meta
            .get("config")
            .cloned()
            .ok_or_else(|| FanError::Config("checkpoint has no model config".into()))?;
        let config: FanConfig = serde_json::from_value(cfg).map_err(|e| FanError::Config(e.to_string()))?;
        let fresh = Fan::new(config.clone())?;
        if !fresh.params.same_layout(&ckpt.params) {
            return Err(FanError::Config("checkpoint tensors do not match the model layout".into()));
        }
        Ok(Self { config, params: ckpt.params })
    }

    /// Scores `[n]` over the candidates of `obs`. Not yet normalized.
    pub fn select_scores(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut g = Graph::for_inference(self);
        let y = select_forward(&mut g, obs)?;
        Ok(g.tape.value(y).data().to_vec())
    }

    /// Placement distribution over `res*res` pixels and rotation
    /// distribution over bins for candidate `sel`.
    pub fn pose(&self, obs: &Observation, sel: usize, rotations: &[RasterMask]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::for_inference(self);
        let out = pose_forward(&mut g, obs, sel, rotations)?;
        let m = g.tape.softmax(out.map_logits, 0)?;
        let r = g.tape.softmax(out.rot_logits, 0)?;
        Ok((g.tape.value(m).data().to_vec(), g.tape.value(r).data().to_vec()))
    }

    /// Highest-scoring fragment, placed at the mode of its heat map with the
    /// most likely bin. Candidates are the remaining ids in ascending order,
    /// so exact ties go to the lowest id.
    pub fn act(&self, state: &AssemblyState) -> Result<Action> {
        if state.num_bins != self.config.num_bins || state.resolution != self.config.resolution {
            return Err(FanError::Config(format!(
                "model is {}x{} with {} bins, episode is {}x{} with {} bins",
                self.config.resolution, self.config.resolution, self.config.num_bins, state.resolution, state.resolution, state.num_bins
            )));
        }
        let ids = state.remaining();
        let obs = observe(state, &ids);
        let i = argmax(&self.select_scores(&obs)?);
        let rots = rotation_renders(&state.fragments[ids[i]], state.num_bins, state.resolution);
        let (m, r) = self.pose(&obs, i, &rots)?;
        let px = argmax(&m);
        let res = self.config.resolution;
        Ok(Action { fragment_index: ids[i], center: ((px / res) as i64, (px % res) as i64), bin: argmax(&r) })
    }
}

/// CNN embedding of each mask plus the post-activation feature map of every
/// stage (before pooling), for skip connections.
pub fn encoder(g: &mut Graph<'_>, prefix: &str, masks: &[&RasterMask]) -> Result<(Var, Vec<Var>)> {
    let cfg = g.config();
    let mut x = g.input(stack_masks(masks, cfg.resolution));
    let mut skips = Vec::with_capacity(cfg.channels.len());
    for s in 0..cfg.channels.len() {
        let (w, b) = (g.p(&format!("{prefix}.conv{s}.w")), g.p(&format!("{prefix}.conv{s}.b")));
        x = g.tape.conv2d(x, w, Some(b), 1, 1)?;
        x = g.maybe_batchnorm(&format!("{prefix}.bn{s}"), x)?;
        x = g.tape.relu(x)?;
        skips.push(x);
        x = g.tape.maxpool2d(x, 2)?;
    }
    let flat = g.tape.flatten(x)?;
    let e = linear(g, &format!("{prefix}.fc"), flat)?;
    let e = g.tape.relu(e)?;
    Ok((e, skips))
}

fn linear(g: &mut Graph<'_>, prefix: &str, x: Var) -> Result<Var> {
    let (w, b) = (g.p(&format!("{prefix}.w")), g.p(&format!("{prefix}.b")));
    Ok(g.tape.linear(x, w, Some(b))?)
}

fn relu_linear(g: &mut Graph<'_>, prefix: &str, x: Var) -> Result<Var> {
    let y = linear(g, prefix, x)?;
    Ok(g.tape.relu(y)?)
}

/// `[n, d]` rows of `rows` each joined with the single row `ctx: [1, d]`.
fn pair_with(g: &mut Graph<'_>, rows: Var, ctx: Var) -> Result<Var> {
    let n = g.tape.shape(rows)[0];
    let ones = g.input(Tensor::full(&[n, 1], 1.0));
    let tiled = g.tape.matmul(ones, ctx)?;
    Ok(g.tape.concat(&[rows, tiled], 1)?)
}

/// Two-layer scoring head over `[rows | ctx]`, giving `[n]`.
fn head(g: &mut Graph<'_>, prefix: &str, rows: Var, ctx: Var) -> Result<Var> {
    let n = g.tape.shape(rows)[0];
    let x = pair_with(g, rows, ctx)?;
    let h = relu_linear(g, &format!("{prefix}.l0"), x)?;
    let s = linear(g, &format!("{prefix}.l1"), h)?;
    Ok(g.tape.reshape(s, &[n])?)
}

/// Selection logits `[n]`.
pub fn select_forward(g: &mut Graph<'_>, obs: &Observation) -> Result<Var> {
    g.model_check(obs)?;
    let n = obs.fragments.len();
    let mut masks: Vec<&RasterMask> = obs.fragments.iter().collect();
    masks.push(&obs.remaining);
    let (e, _) = encoder(g, "sel.enc", &masks)?;
    let frags = g.tape.rows(e, 0, n)?;
    let rem = g.tape.rows(e, n, 1)?;
    let x = pair_with(g, frags, rem)?;
    let x = relu_linear(g, "mlp", x)?;
    let (h, agg) = fram(g, "sel.fram", x)?;
    head(g, "sel.head", h, agg)
}

pub struct PoseOutput {
    /// Placement logits over `res*res` pixels, row-major.
    pub map_logits: Var,
    /// Rotation logits over bins.
    pub rot_logits: Var,
}

pub fn pose_forward(g: &mut Graph<'_>, obs: &Observation, sel: usize, rotations: &[RasterMask]) -> Result<PoseOutput> {
    g.model_check(obs)?;
    let cfg = g.config();
    let (n, b, res) = (obs.fragments.len(), cfg.num_bins, cfg.resolution);
    if sel >= n {
        return Err(FanError::Input(format!("selected index {sel} out of {n}")));
    }
    if rotations.len() != b {
        return Err(FanError::Config(format!("{} rotation renders for {b} bins", rotations.len())));
    }
    if rotations.iter().any(|m| m.dims() != (res, res)) {
        return Err(FanError::Input(format!("rotation renders must be {res}x{res}")));
    }
    let mut masks: Vec<&RasterMask> = obs.fragments.iter().collect();
    masks.push(&obs.remaining);
    masks.extend(rotations);
    let (e, skips) = encoder(g, "pose.enc", &masks)?;
    let frags = g.tape.rows(e, 0, n)?;
    let rem = g.tape.rows(e, n, 1)?;
    let rots = g.tape.rows(e, n + 1, b)?;

    let x = pair_with(g, frags, rem)?;
    let x = relu_linear(g, "mlp", x)?;
    let (h, agg) = fram(g, "pose.fram", x)?;
    let h_sel = g.tape.rows(h, sel, 1)?;

    let gx = pair_with(g, rots, rem)?;
    let gx = relu_linear(g, "mlp", gx)?;
    let (gh, gagg) = fram(g, "rot.fram", gx)?;
    let rot_logits = head(g, "rot.head", gh, h_sel)?;

    let zin = g.tape.concat(&[h_sel, agg, gagg], 1)?;
    let z = relu_linear(g, "pose.z", zin)?;
    let side = res >> cfg.channels.len();
    let last = *cfg.channels.last().expect("nonempty channels");
    let y = relu_linear(g, "pose.dec.fc", z)?;
    let mut y = g.tape.reshape(y, &[1, last, side, side])?;
    for s in (0..cfg.channels.len()).rev() {
        let (w, bias) = (g.p(&format!("pose.dec.up{s}.w")), g.p(&format!("pose.dec.up{s}.b")));
        y = g.tape.conv_transpose2d(y, w, Some(bias), 2, 0)?;
        y = g.tape.relu(y)?;
        let skip = g.tape.rows(skips[s], n, 1)?;
        y = g.tape.concat(&[y, skip], 1)?;
        let (w, bias) = (g.p(&format!("pose.dec.conv{s}.w")), g.p(&format!("pose.dec.conv{s}.b")));
        y = g.tape.conv2d(y, w, Some(bias), 1, 1)?;
        y = g.tape.relu(y)?;
    }
    let (w, bias) = (g.p("pose.dec.out.w"), g.p("pose.dec.out.b"));
    let y = g.tape.conv2d(y, w, Some(bias), 1, 0)?;
    let map_logits = g.tape.reshape(y, &[res * res])?;
    Ok(PoseOutput { map_logits, rot_logits })
}

impl Graph<'_> {
    fn model_check(&self, obs: &Observation) -> Result<()> {
        let r = self.config().resolution;
        if obs.fragments.is_empty() {
            return Err(FanError::Input("no candidate fragments".into()));
        }
        let ok = |m: &RasterMask| m.dims() == (r, r);
        if !ok(&obs.remaining) || !obs.fragments.iter().all(ok) {
            return Err(FanError::Input(format!("masks must be {r}x{r}")));
        }
        Ok(())
    }
}
