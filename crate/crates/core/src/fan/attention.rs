//! Scaled dot-product attention, multi-head attention and the FRAM stack.

use super::graph::Graph;
use super::Result;
use crate::ndnum::{Tape, Tensor, Var};

/// `softmax(Q Kᵀ / sqrt(d1)) V` with the softmax taken over keys.
pub fn scaled_dot_product(tape: &mut Tape<f64>, q: Var, k: Var, v: Var) -> Result<Var> {
    let d1 = tape.shape(q)[1] as f64;
    let kt = tape.transpose(k)?;
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / d1.sqrt())?;
    let a = tape.softmax(s, 1)?;
    Ok(tape.matmul(a, v)?)
}

/// `[DP_1, ..., DP_h] W^O` where head `i` attends from `x` to `y` through its
/// own projections `prefix.q{i}`, `prefix.k{i}`, `prefix.v{i}`.
pub fn multi_head(g: &mut Graph<'_>, prefix: &str, x: Var, y: Var) -> Result<Var> {
    let heads = g.config().heads;
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let (wq, wk, wv) = (g.p(&format!("{prefix}.q{i}")), g.p(&format!("{prefix}.k{i}")), g.p(&format!("{prefix}.v{i}")));
        let q = g.tape.matmul(x, wq)?;
        let k = g.tape.matmul(y, wk)?;
        let v = g.tape.matmul(y, wv)?;
        outs.push(scaled_dot_product(&mut g.tape, q, k, v)?);
    }
    let cat = g.tape.concat(&outs, 1)?;
    let wo = g.p(&format!("{prefix}.o"));
    Ok(g.tape.matmul(cat, wo)?)
}

/// Stacked self-attention with a residual input, then a ones-query
/// aggregation. Returns `(H, h)` with shapes `[n, d]` and `[1, d]`.
pub fn fram(g: &mut Graph<'_>, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let d = g.config().embed_dim;
    let mut h = x;
    for s in 0..g.config().stacks {
        let att = multi_head(g, &format!("{prefix}.mh{s}"), h, h)?;
        let att = g.dropout(att)?;
        h = g.tape.add(h, att)?;
    }
    let ones = g.tape.constant(Tensor::full(&[1, d], 1.0));
    let agg = multi_head(g, &format!("{prefix}.agg"), ones, h)?;
    Ok((h, agg))
}
