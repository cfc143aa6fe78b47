//! Selection and pose cross-entropies on the tape.

use super::{Result, TrainError};
use crate::ndnum::{NdError, Tape, Tensor, Var};

/// Index of the hot entry of a one-hot label.
pub fn one_hot_index(t: &[f64]) -> Result<usize> {
    let hot: Vec<usize> = (0..t.len()).filter(|&i| t[i] != 0.0).collect();
    match hot.as_slice() {
        [i] if t[*i] == 1.0 => Ok(*i),
        _ => Err(TrainError::Label(format!("not a one-hot vector of length {}", t.len()))),
    }
}

/// `-log softmax(y)[target]` for one sample's score vector `[n]`.
pub fn cross_entropy(tape: &mut Tape<f64>, logits: Var, target: usize) -> Result<Var> {
    let n = tape.shape(logits).iter().product::<usize>();
    if target >= n {
        return Err(TrainError::Label(format!("target {target} out of range for {n} classes")));
    }
    let ls = tape.log_softmax(logits, 0)?;
    let mut onehot = vec![0.0; n];
    onehot[target] = -1.0;
    let t = tape.constant(Tensor::new(vec![n], onehot)?);
    let p = tape.mul(ls, t)?;
    Ok(tape.sum(p)?)
}

/// Selection loss of one sample given its one-hot label.
pub fn loss_select(tape: &mut Tape<f64>, scores: Var, t: &[f64]) -> Result<Var> {
    let n = tape.shape(scores)[0];
    if t.len() != n {
        return Err(TrainError::Label(format!("label length {} for {n} candidates", t.len())));
    }
    cross_entropy(tape, scores, one_hot_index(t)?)
}

/// Multi-level placement cross-entropy over a `res x res` map of logits.
///
/// Level `l` pools with window and stride `2l` (level 0 is the map itself).
/// The pooled one-hot target is hot in exactly the block containing `tau`,
/// and the renormalized pooled probability of that block is the block's
/// share of the softmax mass, so each level is `-(lse(block) - lse(all))`
/// evaluated on log-probabilities.
pub fn loss_placement(tape: &mut Tape<f64>, map_logits: Var, res: usize, tau: usize, levels: usize) -> Result<Var> {
    if tape.shape(map_logits).iter().product::<usize>() != res * res || tau >= res * res {
        return Err(TrainError::Label(format!("placement target {tau} for a {res}x{res} map")));
    }
    for l in 1..=levels {
        if res % (2 * l) != 0 {
            return Err(NdError::Shape { op: "loss_placement", detail: format!("side {res} not divisible by pool size {}", 2 * l) }.into());
        }
    }
    let flat = tape.reshape(map_logits, &[res * res])?;
    let lp = tape.log_softmax(flat, 0)?;
    let mut total = cross_entropy(tape, flat, tau)?;
    if levels == 0 {
        return Ok(total);
    }
    let probs = tape.exp(lp)?;
    let (tr, tc) = (tau / res, tau % res);
    for l in 1..=levels {
        let s = 2 * l;
        let (br, bc) = (tr / s * s, tc / s * s);
        let mut mask = vec![0.0; res * res];
        for r in br..br + s {
            for c in bc..bc + s {
                mask[r * res + c] = 1.0;
            }
        }
        let m = tape.constant(Tensor::new(vec![res * res], mask)?);
        let block = tape.mul(probs, m)?;
        let mass = tape.sum(block)?;
        let lg = tape.log(mass)?;
        let neg = tape.scale(lg, -1.0)?;
        total = tape.add(total, neg)?;
    }
    Ok(total)
}

/// Placement term plus the rotation cross-entropy.
pub fn loss_pose(tape: &mut Tape<f64>, map_logits: Var, res: usize, tau: usize, rot_logits: Var, rho: usize, levels: usize) -> Result<Var> {
    let p = loss_placement(tape, map_logits, res, tau, levels)?;
    let r = cross_entropy(tape, rot_logits, rho)?;
    Ok(tape.add(p, r)?)
}
