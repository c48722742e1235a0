//! Define-by-run tape for reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value and the
//! references it needs for the backward rule. Nodes are only ever appended,
//! so the node list is already in topological order and the backward pass
//! is a single reverse sweep.
//!
//! The tape also counts multiply-accumulates performed by `matmul` and the
//! bytes of every buffer it holds; the scaling benchmark reads both.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{axis_extents, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, shared_rhs: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { a: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Softmax { a: Var, axis: usize },
    Concat { parts: Vec<Var> },
    Mean { a: Var, axis: usize },
    Sum(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Reshape(Var),
    Permute { a: Var, perm: Vec<usize> },
    Dropout { a: Var, mask: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// The computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    macs: u64,
    bytes: usize,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    /// A tape for inference or gradient checks: dropout is the identity.
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by every `matmul` so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Bytes held by all buffers on the tape. Nothing is freed before the
    /// tape is dropped, so this is also the high-water mark.
    pub fn peak_bytes(&self) -> usize {
        self.bytes
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameters read by this tape, in order of first use (with repeats).
    pub fn param_uses(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Param(id) => Some(id),
            _ => None,
        })
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.bytes += value.nbytes();
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// `[.., m, k] × [k, n]` (right operand shared over the batch) or
    /// `[.., m, k] × [.., k, n]` with identical leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::dim("matmul", &sa, &sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && lead != &sb[..sb.len() - 2] {
            return Err(err());
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let boff = if shared_rhs { 0 } else { i * k * n };
            gemm_nn(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[boff..boff + k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.macs += (batch * m * k * n) as u64;
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, shared_rhs }))
    }

    /// Elementwise sum. `b` may have the same shape as `a` or match a
    /// trailing suffix of it, in which case it repeats over the leading
    /// dimensions (bias addition).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim("add", sa, sb));
        }
        let bd = self.value(b).data();
        let period = bd.len();
        let mut value = self.value(a).clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += bd[i % period];
        }
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub { a, b }))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine { a, scale })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("softmax axis {axis} out of range"),
            });
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let mut value = self.value(a).clone();
        let d = value.data_mut();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| d[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (d[idx(i)] - max).exp();
                    d[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    d[idx(i)] /= total;
                }
            }
        }
        Ok(self.push(value, Op::Softmax { a, axis }))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(Error::dim("concat", self.shape(*first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("mean axis {axis} out of range"),
            });
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let d = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for j in 0..inner {
                    out[o * inner + j] += d[(o * len + i) * inner + j];
                }
            }
        }
        out.iter_mut().for_each(|x| *x /= len as f64);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Mean { a, axis }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| Error::dim("layer_norm", &sx, &[]))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::dim("layer_norm", &sx, self.shape(p)));
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(d) {
            let (mean, rstd) = row_stats(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * rstd * g[j] + b[j];
            }
        }
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::Shape {
                shape,
                reason: format!("{perm:?} is not a permutation of the axes"),
            });
        }
        let value = permute_tensor(self.value(a), perm);
        Ok(self.push(value, Op::Permute { a, perm: perm.to_vec() }))
    }

    /// Inverted dropout. Identity on non-training tapes or when `rate` is 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.nodes[a.0].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut value = self.value(a).clone();
        for (x, m) in value.data_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(value, Op::Dropout { a, mask })
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Back-propagates from a one-element `loss` and returns the gradient
    /// of every node that influences it.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates ∂loss/∂param into every parameter read by this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate(*id, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b, shared_rhs } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let sa = av.shape();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = bv.shape()[bv.shape().len() - 1];
                let batch = av.numel() / (m * k);
                let mut da = vec![0.0; av.numel()];
                let mut db = vec![0.0; bv.numel()];
                for bi in 0..batch {
                    let boff = if *shared_rhs { 0 } else { bi * k * n };
                    let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                    gemm_nt(gs, &bv.data()[boff..boff + k * n], &mut da[bi * m * k..(bi + 1) * m * k], m, n, k);
                    gemm_tn(&av.data()[bi * m * k..(bi + 1) * m * k], gs, &mut db[boff..boff + k * n], m, k, n);
                }
                accumulate(grads, *a, sa, da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                let period = self.value(*b).numel();
                let mut db = vec![0.0; period];
                for (j, v) in g.data().iter().enumerate() {
                    db[j % period] += v;
                }
                accumulate(grads, *b, self.shape(*b), db);
            }
            Op::Sub { a, b } => {
                accumulate(grads, *a, g.shape(), g.data().to_vec());
                accumulate(grads, *b, g.shape(), g.data().iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.shape(), g.zip(bv, |g, b| g * b).into_data());
                accumulate(grads, *b, g.shape(), g.zip(av, |g, a| g * a).into_data());
            }
            Op::Affine { a, scale } => {
                accumulate(grads, *a, g.shape(), g.map(|v| v * scale).into_data());
            }
            Op::Sigmoid(a) => {
                let d = g.zip(y, |g, s| g * s * (1.0 - s));
                accumulate(grads, *a, g.shape(), fault::perturb(fault::Fault::Sigmoid, d).into_data());
            }
            Op::Tanh(a) => {
                let d = g.zip(y, |g, t| g * (1.0 - t * t));
                accumulate(grads, *a, g.shape(), fault::perturb(fault::Fault::Tanh, d).into_data());
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, g.shape(), g.zip(x, |g, x| if x > 0.0 { g } else { 0.0 }).into_data());
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let d = g.zip(x, |g, x| if x == 0.0 { 0.0 } else { g * x.signum() });
                accumulate(grads, *a, g.shape(), d.into_data());
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = axis_extents(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..len).map(|i| gd[idx(i)] * yd[idx(i)]).sum();
                        for i in 0..len {
                            dx[idx(i)] = yd[idx(i)] * (gd[idx(i)] - dot);
                        }
                    }
                }
                let dx = Tensor::new(y.shape().to_vec(), dx).expect("softmax grad shape");
                accumulate(grads, *a, y.shape(), fault::perturb(fault::Fault::Softmax, dx).into_data());
            }
            Op::Concat { parts } => {
                let total = *y.shape().last().unwrap();
                let rows = y.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, self.shape(p), dp);
                    offset += w;
                }
            }
            Op::Mean { a, axis } => {
                let sa = self.shape(*a);
                let (outer, len, inner) = axis_extents(sa, *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..len {
                        for j in 0..inner {
                            dx[(o * len + i) * inner + j] = g.data()[o * inner + j] / len as f64;
                        }
                    }
                }
                accumulate(grads, *a, sa, dx);
            }
            Op::Sum(a) => {
                let sa = self.shape(*a);
                let n = self.value(*a).numel();
                accumulate(grads, *a, sa, vec![g.data()[0]; n]);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let d = gam.len();
                let mut dx = vec![0.0; xv.numel()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (r, row) in xv.data().chunks(d).enumerate() {
                    let (mean, rstd) = row_stats(row, *eps);
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = (0..d).map(|j| grow[j] * gam[j]).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dx[r * d + j] = rstd / d as f64
                            * (d as f64 * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *gamma, &[d], dgamma);
                accumulate(grads, *beta, &[d], dbeta);
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, self.shape(*a), g.data().to_vec());
            }
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let dx = permute_tensor(g, &inverse);
                accumulate(grads, *a, self.shape(*a), dx.into_data());
            }
            Op::Dropout { a, mask } => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *a, g.shape(), d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0; rank];
    let src = t.data();
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permute shape")
}

// c[m×n] += a[m×k] · b[k×n]
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// Deliberate corruption of selected backward rules, for mutation tests of
/// the gradient checker. Compiled to no-ops without `fault-injection`.
pub mod fault {
    use crate::tensor::Tensor;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Fault {
        Tanh,
        Sigmoid,
        Softmax,
    }

    #[cfg(feature = "fault-injection")]
    thread_local! {
        static ACTIVE: std::cell::Cell<Option<Fault>> = const { std::cell::Cell::new(None) };
    }

    /// Corrupts `fault`'s backward rule on the current thread until reset
    /// with `None`.
    #[cfg(feature = "fault-injection")]
    pub fn inject(fault: Option<Fault>) {
        ACTIVE.with(|a| a.set(fault));
    }

    #[cfg(feature = "fault-injection")]
    pub(crate) fn perturb(kind: Fault, grad: Tensor) -> Tensor {
        if ACTIVE.with(|a| a.get()) == Some(kind) {
            grad.map(|g| 1.1 * g)
        } else {
            grad
        }
    }

    #[cfg(not(feature = "fault-injection"))]
    #[inline(always)]
    pub(crate) fn perturb(_kind: Fault, grad: Tensor) -> Tensor {
        grad
    }
}
