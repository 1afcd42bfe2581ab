//! Forward definitions of every differentiable primitive.

use super::kernels::{self, ConvGeom};
use super::shape::{broadcast_shape, check_axis, index_map, permute_map, split_axis};
use super::{Graph, NodeId, Var};
use crate::error::{Error, Result};
use crate::tensor::{check_shape, Tensor};

/// Denominator floor for `l2norm`.
pub(crate) const L2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Affine { x: NodeId, scale: f64 },
    MatMul(NodeId, NodeId),
    Sum { x: NodeId, axis: usize },
    Mean { x: NodeId, axis: usize },
    Max { x: NodeId, argmax: Vec<usize> },
    SumAll(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Reshape(NodeId),
    Permute { x: NodeId, perm: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Softmax { x: NodeId, axis: usize },
    L2Norm { x: NodeId, axis: usize },
    Squash { x: NodeId, axis: usize },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, inv_std: Vec<f64>, training: bool },
    CapsulePredict { u: NodeId, w: NodeId },
    VoteSum { c: NodeId, uhat: NodeId },
    Agreement { uhat: NodeId, v: NodeId },
}

/// Batch statistics produced by a training-mode batch-norm forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n−1) variance, the quantity folded into running statistics.
    pub var: Vec<f64>,
}

/// Spec of a batch-norm application; running statistics are used only in eval mode.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormMode<'a> {
    pub training: bool,
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
    pub eps: f64,
}

impl<'g> Var<'g> {
    fn unary(self, value: Vec<f64>, op: Op) -> Var<'g> {
        let shape = self.shape();
        self.graph.push(Tensor::from_vec(&shape, value).expect("unary keeps shape"), op, self.requires_grad())
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.graph.with_value(self.id, |t| t.data().iter().map(|&x| f(x)).collect())
    }

    fn binary(self, other: Var<'g>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'g>> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        let out_shape = broadcast_shape(name, &a_shape, &b_shape)?;
        let data = self.graph.with_values(self.id, other.id, |a, b| {
            if a_shape == b_shape {
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>()
            } else {
                let ma = index_map(&out_shape, &a_shape);
                let mb = index_map(&out_shape, &b_shape);
                ma.iter().zip(&mb).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
            }
        });
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(Tensor::from_vec(&out_shape, data)?, op, rg))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with size-1 broadcasting.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    /// Elementwise quotient; zero divisors follow IEEE semantics.
    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    /// `scale·x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'g> {
        let v = self.map(|x| scale * x + shift);
        self.unary(v, Op::Affine { x: self.id, scale })
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.affine(1.0, c)
    }

    pub fn neg(self) -> Var<'g> {
        self.affine(-1.0, 0.0)
    }

    /// `[m,k] × [k,n]`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let a = self.shape();
        let b = other.shape();
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::mismatch("matmul", &a, &b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        self.graph.with_values(self.id, other.id, |x, y| {
            kernels::gemm(m, k, n, x.data(), false, y.data(), false, &mut out, false)
        });
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(self.id, other.id), rg))
    }

    fn reduce(self, name: &'static str, axis: usize, f: impl Fn(&[f64]) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let shape = self.shape();
        check_axis(name, &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let data = self.graph.with_value(self.id, |t| {
            let d = t.data();
            let mut out = Vec::with_capacity(outer * inner);
            let mut lane = vec![0.0; len];
            for o in 0..outer {
                for i in 0..inner {
                    for (k, slot) in lane.iter_mut().enumerate() {
                        *slot = d[(o * len + k) * inner + i];
                    }
                    out.push(f(&lane));
                }
            }
            out
        });
        let mut out_shape = shape;
        out_shape[axis] = 1;
        Ok((out_shape, data))
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum(self, axis: usize) -> Result<Var<'g>> {
        let (shape, data) = self.reduce("sum", axis, |l| l.iter().sum())?;
        Ok(self.graph.push(Tensor::from_vec(&shape, data)?, Op::Sum { x: self.id, axis }, self.requires_grad()))
    }

    pub fn mean(self, axis: usize) -> Result<Var<'g>> {
        let (shape, data) = self.reduce("mean", axis, |l| l.iter().sum::<f64>() / l.len() as f64)?;
        Ok(self.graph.push(Tensor::from_vec(&shape, data)?, Op::Mean { x: self.id, axis }, self.requires_grad()))
    }

    /// Maximum along `axis`; ties resolve to the first index.
    pub fn max(self, axis: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        check_axis("max", &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let (vals, argmax) = self.graph.with_value(self.id, |t| {
            let d = t.data();
            let mut vals = Vec::with_capacity(outer * inner);
            let mut arg = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = (o * len) * inner + i;
                    for k in 1..len {
                        let idx = (o * len + k) * inner + i;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    vals.push(d[best]);
                    arg.push(best);
                }
            }
            (vals, arg)
        });
        let mut out_shape = shape;
        out_shape[axis] = 1;
        Ok(self.graph.push(
            Tensor::from_vec(&out_shape, vals)?,
            Op::Max { x: self.id, argmax },
            self.requires_grad(),
        ))
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(self) -> Var<'g> {
        let s = self.graph.with_value(self.id, |t| t.data().iter().sum::<f64>());
        self.graph.push(Tensor::scalar(s), Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.graph.with_value(self.id, |t| t.len()) as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn exp(self) -> Var<'g> {
        let v = self.map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// Natural log; non-positive inputs follow IEEE semantics.
    pub fn log(self) -> Var<'g> {
        let v = self.map(f64::ln);
        self.unary(v, Op::Log(self.id))
    }

    pub fn sqrt(self) -> Var<'g> {
        let v = self.map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    pub fn square(self) -> Var<'g> {
        let v = self.map(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    pub fn abs(self) -> Var<'g> {
        let v = self.map(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        let v = self.map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let v = self.map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let len = check_shape(shape)?;
        let cur = self.shape();
        if len != cur.iter().product::<usize>() {
            return Err(Error::mismatch("reshape", &cur, shape));
        }
        let data = self.graph.with_value(self.id, |t| t.data().to_vec());
        Ok(self.graph.push(Tensor::from_vec(shape, data)?, Op::Reshape(self.id), self.requires_grad()))
    }

    /// General axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("transpose", format!("{perm:?} is not a permutation of rank {}", shape.len())));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let map = permute_map(&shape, perm);
        let data = self.graph.with_value(self.id, |t| map.iter().map(|&i| t.data()[i]).collect());
        Ok(self.graph.push(
            Tensor::from_vec(&out_shape, data)?,
            Op::Permute { x: self.id, perm: perm.to_vec() },
            self.requires_grad(),
        ))
    }

    /// Swap two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'g>> {
        let rank = self.shape().len();
        check_axis("transpose", &self.shape(), a.max(b))?;
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::invalid("slice", format!("range {start}..{} outside axis of size {}", start + len, shape[axis])));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let data = self.graph.with_value(self.id, |t| {
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                out.extend_from_slice(&t.data()[(o * full + start) * inner..(o * full + start + len) * inner]);
            }
            out
        });
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.graph.push(
            Tensor::from_vec(&out_shape, data)?,
            Op::Slice { x: self.id, axis, start },
            self.requires_grad(),
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        check_axis("softmax", &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let data = self.graph.with_value(self.id, |t| {
            let d = t.data();
            let mut out = vec![0.0; d.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let m = (0..len).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for k in 0..len {
                        let e = (d[at(k)] - m).exp();
                        out[at(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        out[at(k)] /= z;
                    }
                }
            }
            out
        });
        Ok(self.graph.push(Tensor::from_vec(&shape, data)?, Op::Softmax { x: self.id, axis }, self.requires_grad()))
    }

    fn lane_transform(self, name: &'static str, axis: usize, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let shape = self.shape();
        check_axis(name, &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        Ok(self.graph.with_value(self.id, |t| {
            let d = t.data();
            let mut out = vec![0.0; d.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let norm = (0..len).map(|k| d[at(k)] * d[at(k)]).sum::<f64>().sqrt();
                    let factor = f(norm);
                    for k in 0..len {
                        out[at(k)] = d[at(k)] * factor;
                    }
                }
            }
            out
        }))
    }

    /// `x / ‖x‖` along `axis` (norm floored at 1e-12).
    pub fn l2norm(self, axis: usize) -> Result<Var<'g>> {
        let data = self.lane_transform("l2norm", axis, |n| 1.0 / n.max(L2_FLOOR))?;
        Ok(self.graph.push(Tensor::from_vec(&self.shape(), data)?, Op::L2Norm { x: self.id, axis }, self.requires_grad()))
    }

    /// Capsule squash along `axis`: `v = s·‖s‖/(1+‖s‖²)`, which equals
    /// `‖s‖²/(1+‖s‖²) · s/‖s‖` and is exactly zero at `s = 0`.
    pub fn squash(self, axis: usize) -> Result<Var<'g>> {
        let data = self.lane_transform("squash", axis, |n| n / (1.0 + n * n))?;
        Ok(self.graph.push(Tensor::from_vec(&self.shape(), data)?, Op::Squash { x: self.id, axis }, self.requires_grad()))
    }

    /// Join along `axis`; all other axes must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "nothing to concatenate"))?;
        let graph = first.graph;
        let base = first.shape();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let same_rest = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(Error::mismatch("concat", &base, &s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis];
                graph.with_value(p.id, |t| data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]));
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(graph.push(
            Tensor::from_vec(&out_shape, data)?,
            Op::Concat { xs: parts.iter().map(|p| p.id).collect(), axis },
            rg,
        ))
    }

    /// Cross-correlation of `[N,C,H,W]` with kernel `[O,C,k,k]` plus bias `[O]`.
    pub fn conv2d(self, kernel: Var<'g>, bias: Var<'g>, stride: usize, padding: usize) -> Result<Var<'g>> {
        let xs = self.shape();
        let ks = kernel.shape();
        let bs = bias.shape();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::mismatch("conv2d", &xs, &ks));
        }
        if ks[2] != ks[3] {
            return Err(Error::invalid("conv2d", format!("kernel must be square, got {}x{}", ks[2], ks[3])));
        }
        if bs != [ks[0]] {
            return Err(Error::mismatch("conv2d", &ks, &bs));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let k = ks[2];
        let (h, w) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if k > h || k > w {
            return Err(Error::invalid("conv2d", format!("kernel {k}x{k} larger than padded input {h}x{w}")));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            out_ch: ks[0],
            k,
            stride,
            pad: padding,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        };
        let out = {
            let nodes = self.graph.nodes.borrow();
            kernels::conv2d_forward(
                &geom,
                nodes[self.id.0].value.data(),
                nodes[kernel.id.0].value.data(),
                nodes[bias.id.0].value.data(),
            )
        };
        let rg = self.requires_grad() || kernel.requires_grad() || bias.requires_grad();
        Ok(self.graph.push(
            Tensor::from_vec(&[geom.n, geom.out_ch, geom.oh, geom.ow], out)?,
            Op::Conv2d { x: self.id, w: kernel.id, b: bias.id, geom },
            rg,
        ))
    }

    /// Per-channel normalization of `[N,C,...]`. Training mode also returns
    /// the batch statistics for the caller to fold into running averages.
    pub fn batch_norm(self, gamma: Var<'g>, beta: Var<'g>, mode: BatchNormMode<'_>) -> Result<(Var<'g>, Option<BatchStats>)> {
        let xs = self.shape();
        if xs.len() < 2 {
            return Err(Error::invalid("batchnorm", format!("input needs [N,C,...], got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::mismatch("batchnorm", &xs, &gamma.shape()));
        }
        if mode.training && n < 2 {
            return Err(Error::BatchTooSmall);
        }
        if !mode.training && (mode.running_mean.len() != c || mode.running_var.len() != c) {
            return Err(Error::invalid("batchnorm", "running statistics do not match channel count"));
        }
        let (out, xhat, inv_std, stats) = {
            let nodes = self.graph.nodes.borrow();
            let x = nodes[self.id.0].value.data();
            let g = nodes[gamma.id.0].value.data();
            let b = nodes[beta.id.0].value.data();
            let (mean, var, stats) = if mode.training {
                let (mean, var) = kernels::channel_stats(x, n, c, inner);
                let count = (n * inner) as f64;
                let unbiased = var.iter().map(|v| v * count / (count - 1.0)).collect();
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            } else {
                (mode.running_mean.to_vec(), mode.running_var.to_vec(), None)
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + mode.eps).sqrt()).collect();
            let mut xhat = vec![0.0; x.len()];
            let mut out = vec![0.0; x.len()];
            for bi in 0..n {
                for ch in 0..c {
                    for t in (bi * c + ch) * inner..(bi * c + ch + 1) * inner {
                        xhat[t] = (x[t] - mean[ch]) * inv_std[ch];
                        out[t] = xhat[t] * g[ch] + b[ch];
                    }
                }
            }
            (out, xhat, inv_std, stats)
        };
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let y = self.graph.push(
            Tensor::from_vec(&xs, out)?,
            Op::BatchNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, training: mode.training },
            rg,
        );
        Ok((y, stats))
    }

    /// Prediction vectors `û[n,i,j,:] = u[n,i,:]·W[i,j]` for poses `[N,nl,din]`
    /// and transforms `[nl,nu,din,dout]`.
    pub fn capsule_predict(self, w: Var<'g>) -> Result<Var<'g>> {
        let us = self.shape();
        let ws = w.shape();
        if us.len() != 3 || ws.len() != 4 || us[1] != ws[0] || us[2] != ws[2] {
            return Err(Error::mismatch("capsule_predict", &us, &ws));
        }
        let (n, nl, din, nu, dout) = (us[0], us[1], us[2], ws[1], ws[3]);
        let out = self
            .graph
            .with_values(self.id, w.id, |u, wt| kernels::capsule_predict(u.data(), wt.data(), n, nl, nu, din, dout));
        let rg = self.requires_grad() || w.requires_grad();
        Ok(self.graph.push(Tensor::from_vec(&[n, nl, nu, dout], out)?, Op::CapsulePredict { u: self.id, w: w.id }, rg))
    }

    /// `s[n,j,:] = Σ_i c[n,i,j]·û[n,i,j,:]` with `self` the coupling `[N,nl,nu]`.
    pub fn vote_sum(self, uhat: Var<'g>) -> Result<Var<'g>> {
        let cs = self.shape();
        let us = uhat.shape();
        if cs.len() != 3 || us.len() != 4 || cs[..] != us[..3] {
            return Err(Error::mismatch("vote_sum", &cs, &us));
        }
        let (n, nl, nu, d) = (us[0], us[1], us[2], us[3]);
        let out = self.graph.with_values(self.id, uhat.id, |c, u| kernels::vote_sum(c.data(), u.data(), n, nl, nu, d));
        let rg = self.requires_grad() || uhat.requires_grad();
        Ok(self.graph.push(Tensor::from_vec(&[n, nu, d], out)?, Op::VoteSum { c: self.id, uhat: uhat.id }, rg))
    }

    /// `a[n,i,j] = û[n,i,j,:]·v[n,j,:]` with `self` the votes `[N,nl,nu,d]`.
    pub fn agreement(self, v: Var<'g>) -> Result<Var<'g>> {
        let us = self.shape();
        let vs = v.shape();
        if us.len() != 4 || vs.len() != 3 || vs[0] != us[0] || vs[1] != us[2] || vs[2] != us[3] {
            return Err(Error::mismatch("agreement", &us, &vs));
        }
        let (n, nl, nu, d) = (us[0], us[1], us[2], us[3]);
        let out = self.graph.with_values(self.id, v.id, |u, vv| kernels::agreement(u.data(), vv.data(), n, nl, nu, d));
        let rg = self.requires_grad() || v.requires_grad();
        Ok(self.graph.push(Tensor::from_vec(&[n, nl, nu], out)?, Op::Agreement { uhat: self.id, v: v.id }, rg))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub(crate) fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[id.0].value)
    }

    pub(crate) fn with_values<R>(&self, a: NodeId, b: NodeId, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }
}
