use rand::Rng;

use super::conv::{
    avgpool_backward, avgpool_forward, conv2d_backward, conv2d_forward, conv_t2d_backward, conv_t2d_forward, maxpool_forward,
    ConvGeom,
};
use super::{shape_err, NdError, Result, Tensor};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `big + small`, with `small` repeated over the leading dims of `big`.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, planes: usize, size: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape(Var),
    Transpose(Var),
    Rows { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Statistics to normalize with in [`Tape::batchnorm`].
#[derive(Clone, Copy, Debug)]
pub enum BnStats<'a, T> {
    /// Use the batch's own per-channel mean and variance.
    Batch,
    /// Use fixed running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` for constants and for leaves the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

fn suffix_of(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NdError::NumericFault(name));
        }
        let grad = parents.iter().any(|p| self.nodes[p.0].grad);
        let op = if grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), "matmul", &[a, b])
    }

    fn broadcast_pair(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if suffix_of(sa, sb) {
            Ok((a, b))
        } else if suffix_of(sb, sa) {
            Ok((b, a))
        } else {
            shape_err(op, format!("{sa:?} and {sb:?} do not broadcast"))
        }
    }

    /// Elementwise sum; the lower-rank operand must match a suffix of the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small) = self.broadcast_pair("add", a, b)?;
        let s = self.value(small).data();
        let mut t = self.value(big).clone();
        let n = s.len();
        for (i, v) in t.data.iter_mut().enumerate() {
            *v += s[i % n];
        }
        self.push(t, Op::Add(big, small), "add", &[big, small])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small) = self.broadcast_pair("mul", a, b)?;
        let s = self.value(small).data();
        let mut t = self.value(big).clone();
        let n = s.len();
        for (i, v) in t.data.iter_mut().enumerate() {
            *v *= s[i % n];
        }
        self.push(t, Op::Mul(big, small), "mul", &[big, small])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -T::one())?;
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let mut t = self.value(a).clone();
        t.data.iter_mut().for_each(|v| *v *= c);
        self.push(t, Op::Scale(a, c), "scale", &[a])
    }

    fn map(&mut self, a: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let mut t = self.value(a).clone();
        t.data.iter_mut().for_each(|v| *v = f(*v));
        self.push(t, op, name, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Log(a), "log", T::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), "exp", T::exp)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        let s = self.shape(a);
        if axis >= s.len() || s[axis] == 0 {
            return shape_err(op, format!("axis {axis} of {s:?}"));
        }
        Ok(())
    }

    fn softmax_values(&self, a: Var, axis: usize, log: bool) -> Tensor<T> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x.data[at(k)]).fold(T::neg_infinity(), T::max);
                let z: T = (0..n).map(|k| (x.data[at(k)] - m).exp()).sum();
                let lz = z.ln();
                for k in 0..n {
                    let d = x.data[at(k)] - m;
                    out.data[at(k)] = if log { d - lz } else { d.exp() / z };
                }
            }
        }
        out
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let t = self.softmax_values(a, axis, false);
        self.push(t, Op::Softmax(a, axis), "softmax", &[a])
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let t = self.softmax_values(a, axis, true);
        self.push(t, Op::LogSoftmax(a, axis), "log_softmax", &[a])
    }

    fn conv_geom(&self, op: &'static str, x: Var, w: Var, b: Option<Var>, transposed: bool, stride: usize, pad: usize) -> Result<ConvGeom> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || stride == 0 {
            return shape_err(op, format!("x {sx:?}, w {sw:?}, stride {stride}"));
        }
        let (c_in, c_out) = if transposed { (sw[0], sw[1]) } else { (sw[1], sw[0]) };
        if sx[1] != c_in {
            return shape_err(op, format!("x {sx:?} has {} channels, w {sw:?} expects {c_in}", sx[1]));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return shape_err(op, format!("bias {:?}, expected [{c_out}]", self.shape(b)));
            }
        }
        let (h, wd, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
        let (oh, ow) = if transposed {
            let oh = ((h as i64 - 1) * stride as i64 + kh as i64 - 2 * pad as i64).max(0) as usize;
            let ow = ((wd as i64 - 1) * stride as i64 + kw as i64 - 2 * pad as i64).max(0) as usize;
            (oh, ow)
        } else {
            if h + 2 * pad < kh || wd + 2 * pad < kw {
                return shape_err(op, format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"));
            }
            ((h + 2 * pad - kh) / stride + 1, (wd + 2 * pad - kw) / stride + 1)
        };
        if oh == 0 || ow == 0 || h == 0 || wd == 0 {
            return shape_err(op, format!("empty output for x {sx:?}, w {sw:?}"));
        }
        Ok(ConvGeom { n: sx[0], c_in, h, w: wd, c_out, kh, kw, stride, pad, oh, ow })
    }

    /// NCHW cross-correlation with `w: [c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, w, b, false, stride, pad)?;
        let mut out = vec![T::zero(); geom.n * geom.c_out * geom.oh * geom.ow];
        let bias = b.map(|b| self.value(b).data());
        conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias, &mut out);
        let t = Tensor { shape: vec![geom.n, geom.c_out, geom.oh, geom.ow], data: out };
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(t, Op::Conv2d { x, w, b, geom }, "conv2d", &parents)
    }

    /// Transposed convolution with `w: [c_in, c_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv_transpose2d", x, w, b, true, stride, pad)?;
        let mut out = vec![T::zero(); geom.n * geom.c_out * geom.oh * geom.ow];
        let bias = b.map(|b| self.value(b).data());
        conv_t2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias, &mut out);
        let t = Tensor { shape: vec![geom.n, geom.c_out, geom.oh, geom.ow], data: out };
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(t, Op::ConvT2d { x, w, b, geom }, "conv_transpose2d", &parents)
    }

    fn pool_dims(&self, op: &'static str, x: Var, size: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
        let s = self.shape(x);
        if s.len() < 2 || size == 0 || s[s.len() - 2] % size != 0 || s[s.len() - 1] % size != 0 {
            return shape_err(op, format!("{s:?} not divisible by pool size {size}"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = s[..s.len() - 2].iter().product();
        let mut out_shape = s.to_vec();
        let r = out_shape.len();
        out_shape[r - 2] = h / size;
        out_shape[r - 1] = w / size;
        Ok((planes, h, w, out_shape))
    }

    /// Max over non-overlapping `size×size` windows of the last two dims.
    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let (planes, h, w, shape) = self.pool_dims("maxpool2d", x, size)?;
        let mut out = vec![T::zero(); shape.iter().product()];
        let argmax = maxpool_forward(planes, h, w, size, self.value(x).data(), &mut out);
        self.push(Tensor { shape, data: out }, Op::MaxPool { x, argmax }, "maxpool2d", &[x])
    }

    pub fn avgpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let (planes, h, w, shape) = self.pool_dims("avgpool2d", x, size)?;
        let mut out = vec![T::zero(); shape.iter().product()];
        avgpool_forward(planes, h, w, size, self.value(x).data(), &mut out);
        self.push(Tensor { shape, data: out }, Op::AvgPool { x, planes, size }, "avgpool2d", &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs".into());
        };
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return shape_err("concat", format!("axis {axis} of {s0:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let same = s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return shape_err("concat", format!("{s:?} vs {s0:?} along axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&s0, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        self.push(Tensor { shape, data }, Op::Concat { xs: xs.to_vec(), axis }, "concat", xs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(a), "reshape", &[a])
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() {
            return shape_err("flatten", "rank-0 input".into());
        }
        let shape = [s[0], s[1..].iter().product()];
        self.reshape(a, &shape)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return shape_err("transpose", format!("{s:?} is not a matrix"));
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x[i * n + j];
            }
        }
        self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a), "transpose", &[a])
    }

    /// Entries `start..start+len` along axis 0.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] {
            return shape_err("rows", format!("{start}..{} of {s:?}", start + len));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        self.push(Tensor { shape, data }, Op::Rows { x: a, start }, "rows", &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum", &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return shape_err("mean", "empty input".into());
        }
        let m = t.data().iter().copied().sum::<T>() / T::from_usize_lossy(t.len());
        self.push(Tensor::scalar(m), Op::Mean(a), "mean", &[a])
    }

    /// `x @ w + b` for `x: [m, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Inverted dropout; the identity unless `train` is set.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !train || rate == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&rate) {
            return shape_err("dropout", format!("rate {rate} outside [0, 1)"));
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mut t = self.value(x).clone();
        t.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.push(t, Op::Dropout { x, mask }, "dropout", &[x])
    }

    /// Per-channel normalization over axis 1 of `x: [n, c, ...]`. With batch
    /// statistics the per-channel `(mean, biased variance)` is also returned.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        stats: BnStats<'_, T>,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return shape_err("batchnorm", format!("x {s:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)));
        }
        let c = s[1];
        let sp: usize = s[2..].iter().product();
        let chan = |e: usize| (e / sp) % c;
        let xv = self.value(x).data();
        let m = T::from_usize_lossy(s[0] * sp);
        let (mean, var, batch_stats) = match stats {
            BnStats::Batch => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for (e, &v) in xv.iter().enumerate() {
                    mean[chan(e)] += v;
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for (e, &v) in xv.iter().enumerate() {
                    let d = v - mean[chan(e)];
                    var[chan(e)] += d * d;
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
            BnStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err("batchnorm", format!("running stats for {} channels, x has {c}", mean.len()));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let xhat: Vec<T> = xv.iter().enumerate().map(|(e, &v)| (v - mean[chan(e)]) * inv_std[chan(e)]).collect();
        let data = xhat.iter().enumerate().map(|(e, &h)| g[chan(e)] * h + b[chan(e)]).collect();
        let out = self.push(
            Tensor { shape: s, data },
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
            "batchnorm",
            &[x, gamma, beta],
        )?;
        Ok((out, batch_stats.then_some((mean, var))))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(NdError::Graph(format!("variable {} not on this tape", loss.0)));
        };
        if node.value.len() != 1 {
            return Err(NdError::Graph(format!("loss must be scalar, got shape {:?}", node.value.shape())));
        }
        if !node.grad {
            return Err(NdError::Graph("loss does not depend on any trainable leaf".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(&node.op, &node.value, &g, &mut grads);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match g {
                Some(data) if node.grad => {
                    let t = Tensor { shape: node.value.shape.clone(), data };
                    if !t.is_finite() {
                        return Err(NdError::NumericFault("backward"));
                    }
                    Some(t)
                }
                _ => None,
            };
            out.push(t);
        }
        Ok(Gradients { grads: out })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop(&self, op: &Op<T>, y: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if let Some(da) = self.acc(grads, *a) {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            da[i * k + p] += g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| *x * *y).sum::<T>();
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av.data[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d += x * *gv;
                            }
                        }
                    }
                }
            }
            Op::Add(big, small) => {
                if let Some(d) = self.acc(grads, *big) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += *g);
                }
                if let Some(d) = self.acc(grads, *small) {
                    let n = d.len();
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += *gv;
                    }
                }
            }
            Op::Mul(big, small) => {
                let (bv, sv) = (self.value(*big).data(), self.value(*small).data());
                let n = sv.len();
                if let Some(d) = self.acc(grads, *big) {
                    for (i, gv) in g.iter().enumerate() {
                        d[i] += *gv * sv[i % n];
                    }
                }
                if let Some(d) = self.acc(grads, *small) {
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += *gv * bv[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += *g * *c);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        d[i] += g[i] / x[i];
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        d[i] += g[i] * y.data[i];
                    }
                }
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let log = matches!(op, Op::LogSoftmax(..));
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                if let Some(d) = self.acc(grads, *a) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            if log {
                                let s: T = (0..n).map(|k| g[at(k)]).sum();
                                for k in 0..n {
                                    d[at(k)] += g[at(k)] - y.data[at(k)].exp() * s;
                                }
                            } else {
                                let s: T = (0..n).map(|k| g[at(k)] * y.data[at(k)]).sum();
                                for k in 0..n {
                                    d[at(k)] += y.data[at(k)] * (g[at(k)] - s);
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } | Op::ConvT2d { x, w, b, geom } => {
                let transposed = matches!(op, Op::ConvT2d { .. });
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                // Each accumulator is taken out of `grads` so the three can be
                // borrowed mutably at once.
                let mut take = |v: Var| -> Option<(Var, Vec<T>)> {
                    self.acc(grads, v)?;
                    grads[v.0].take().map(|d| (v, d))
                };
                let mut dx = take(*x);
                let mut dw = take(*w);
                let mut db = b.and_then(&mut take);
                let f = if transposed { conv_t2d_backward::<T> } else { conv2d_backward::<T> };
                f(
                    geom,
                    xv,
                    wv,
                    g,
                    dx.as_mut().map(|(_, d)| d.as_mut_slice()),
                    dw.as_mut().map(|(_, d)| d.as_mut_slice()),
                    db.as_mut().map(|(_, d)| d.as_mut_slice()),
                );
                for (v, d) in [dx, dw, db].into_iter().flatten() {
                    grads[v.0] = Some(d);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(d) = self.acc(grads, *x) {
                    for (o, &src) in argmax.iter().enumerate() {
                        d[src] += g[o];
                    }
                }
            }
            Op::AvgPool { x, planes, size } => {
                let s = self.shape(*x);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                if let Some(d) = self.acc(grads, *x) {
                    avgpool_backward(*planes, h, w, *size, g, d);
                }
            }
            Op::Concat { xs, axis } => {
                let total = y.shape()[*axis];
                let (outer, _, inner) = axis_split(y.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    let chunk = len * inner;
                    if let Some(d) = self.acc(grads, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..chunk];
                            d[o * chunk..(o + 1) * chunk].iter_mut().zip(src).for_each(|(d, g)| *d += *g);
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += *g);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (y.shape[0], y.shape[1]);
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Rows { x, start } => {
                let inner = y.len() / y.shape[0].max(1);
                if let Some(d) = self.acc(grads, *x) {
                    d[start * inner..][..g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += *g);
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    let s = g[0] / T::from_usize_lossy(d.len());
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        d[i] += g[i] * mask[i];
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let s = y.shape();
                let c = s[1];
                let sp: usize = s[2..].iter().product();
                let chan = |e: usize| (e / sp) % c;
                let gv = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for e in 0..g.len() {
                    sum_g[chan(e)] += g[e];
                    sum_gx[chan(e)] += g[e] * xhat[e];
                }
                if let Some(d) = self.acc(grads, *gamma) {
                    d.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += *v);
                }
                if let Some(d) = self.acc(grads, *beta) {
                    d.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += *v);
                }
                if let Some(d) = self.acc(grads, *x) {
                    let m = T::from_usize_lossy(s[0] * sp);
                    for e in 0..g.len() {
                        let ch = chan(e);
                        let k = gv[ch] * inv_std[ch];
                        d[e] += if *batch_stats {
                            k * (g[e] - sum_g[ch] / m - xhat[e] * sum_gx[ch] / m)
                        } else {
                            k * g[e]
                        };
                    }
                }
            }
        }
    }
}
