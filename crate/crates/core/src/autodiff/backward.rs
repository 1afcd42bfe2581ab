//! Vector-Jacobian products for every primitive.

use super::kernels;
use super::ops::{sigmoid, Op, L2_FLOOR};
use super::shape::{index_map, permute_map, reduce_to, split_axis};
use super::{Faults, Node, NodeId};

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, contrib: Vec<f64>) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

/// Add a contribution computed directly into the gradient buffer of `id`,
/// avoiding a temporary the size of the input.
fn accumulate_into(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, add: impl FnOnce(&mut [f64])) {
    if !nodes[id.0].requires_grad {
        return;
    }
    let len = nodes[id.0].value.len();
    add(grads[id.0].get_or_insert_with(|| vec![0.0; len]));
}

fn wants(nodes: &[Node], id: NodeId) -> bool {
    nodes[id.0].requires_grad
}

/// Per-lane reverse rule for transforms `y = x·f(‖x‖)` along an axis.
/// `df_over_n(n)` must return `f'(n)/n` (finite at n = 0).
fn lane_backward(x: &[f64], g: &[f64], shape: &[usize], axis: usize, f: impl Fn(f64) -> f64, df_over_n: impl Fn(f64) -> f64) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut dx = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let norm = (0..len).map(|k| x[at(k)] * x[at(k)]).sum::<f64>().sqrt();
            let dot: f64 = (0..len).map(|k| x[at(k)] * g[at(k)]).sum();
            let (fv, dv) = (f(norm), df_over_n(norm));
            for k in 0..len {
                dx[at(k)] = fv * g[at(k)] + x[at(k)] * dot * dv;
            }
        }
    }
    dx
}

pub(super) fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], faults: Faults) {
    let node = &nodes[id];
    let out = &node.value;
    let out_shape = out.shape();
    let val = |n: NodeId| &nodes[n.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, reduce_to(g, out_shape, val(*a).shape()));
            }
            if wants(nodes, *b) {
                let mut gb = reduce_to(g, out_shape, val(*b).shape());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let ma = index_map(out_shape, av.shape());
            let mb = index_map(out_shape, bv.shape());
            let is_div = matches!(node.op, Op::Div(..));
            if wants(nodes, *a) {
                let full: Vec<f64> = g
                    .iter()
                    .zip(&mb)
                    .map(|(&gi, &j)| if is_div { gi / bv.data()[j] } else { gi * bv.data()[j] })
                    .collect();
                accumulate(nodes, grads, *a, reduce_to(&full, out_shape, av.shape()));
            }
            if wants(nodes, *b) {
                let full: Vec<f64> = g
                    .iter()
                    .zip(ma.iter().zip(&mb))
                    .map(|(&gi, (&i, &j))| {
                        if is_div {
                            let bj = bv.data()[j];
                            -gi * av.data()[i] / (bj * bj)
                        } else {
                            gi * av.data()[i]
                        }
                    })
                    .collect();
                accumulate(nodes, grads, *b, reduce_to(&full, out_shape, bv.shape()));
            }
        }
        Op::Affine { x, scale } => {
            accumulate(nodes, grads, *x, g.iter().map(|v| v * scale).collect());
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if wants(nodes, *a) {
                let mut ga = vec![0.0; m * k];
                kernels::gemm(m, n, k, g, false, bv.data(), true, &mut ga, false);
                accumulate(nodes, grads, *a, ga);
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; k * n];
                kernels::gemm(k, m, n, av.data(), true, g, false, &mut gb, false);
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let xs = val(*x).shape();
            let (outer, len, inner) = split_axis(xs, *axis);
            let scale = if matches!(node.op, Op::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        dx[(o * len + k) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::Max { x, argmax } => {
            let mut dx = vec![0.0; val(*x).len()];
            for (gi, &src) in g.iter().zip(argmax) {
                dx[src] += gi;
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::SumAll(x) => {
            accumulate(nodes, grads, *x, vec![g[0]; val(*x).len()]);
        }
        Op::Exp(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(out.data()).map(|(gi, y)| gi * y).collect());
        }
        Op::Log(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(val(*x).data()).map(|(gi, v)| gi / v).collect());
        }
        Op::Sqrt(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(out.data()).map(|(gi, y)| gi * 0.5 / y).collect());
        }
        Op::Square(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(val(*x).data()).map(|(gi, v)| 2.0 * gi * v).collect());
        }
        Op::Abs(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(val(*x).data()).map(|(gi, v)| gi * sign(*v)).collect());
        }
        Op::Tanh(x) => {
            let bias = if faults.corrupt_tanh_backward { 1.5 } else { 1.0 };
            accumulate(nodes, grads, *x, g.iter().zip(out.data()).map(|(gi, y)| bias * gi * (1.0 - y * y)).collect());
        }
        Op::Sigmoid(x) => {
            let dx = g
                .iter()
                .zip(val(*x).data())
                .map(|(gi, v)| {
                    let s = sigmoid(*v);
                    gi * s * (1.0 - s)
                })
                .collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Relu(x) => {
            accumulate(nodes, grads, *x, g.iter().zip(val(*x).data()).map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 }).collect());
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, g.to_vec()),
        Op::Permute { x, perm } => {
            let map = permute_map(val(*x).shape(), perm);
            let mut dx = vec![0.0; g.len()];
            for (gi, &src) in g.iter().zip(&map) {
                dx[src] = *gi;
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for part in xs {
                let len = val(*part).shape()[*axis];
                if wants(nodes, *part) {
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        dx.extend_from_slice(&g[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                    }
                    accumulate(nodes, grads, *part, dx);
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let xs = val(*x).shape();
            let (outer, full, inner) = split_axis(xs, *axis);
            let len = out_shape[*axis];
            let mut dx = vec![0.0; val(*x).len()];
            for o in 0..outer {
                dx[(o * full + start) * inner..(o * full + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(out_shape, *axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..len {
                        dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::L2Norm { x, axis } => {
            // y = x / n  (n floored): dy/dx = I/n − x xᵀ/n³ above the floor.
            let dx = lane_backward(
                val(*x).data(),
                g,
                out_shape,
                *axis,
                |n| 1.0 / n.max(L2_FLOOR),
                |n| if n > L2_FLOOR { -1.0 / (n * n * n) } else { 0.0 },
            );
            accumulate(nodes, grads, *x, dx);
        }
        Op::Squash { x, axis } => {
            // f(n) = n/(1+n²), f'(n) = (1−n²)/(1+n²)²; the f'(n)/n term vanishes at s = 0.
            let dx = lane_backward(
                val(*x).data(),
                g,
                out_shape,
                *axis,
                |n| n / (1.0 + n * n),
                |n| {
                    if n > 0.0 {
                        let d = 1.0 + n * n;
                        (1.0 - n * n) / (d * d * n)
                    } else {
                        0.0
                    }
                },
            );
            accumulate(nodes, grads, *x, dx);
        }
        Op::Conv2d { x, w, b, geom } => {
            let (dx, dw, db) = kernels::conv2d_backward(geom, val(*x).data(), val(*w).data(), g, wants(nodes, *x), wants(nodes, *w));
            if wants(nodes, *x) {
                accumulate(nodes, grads, *x, dx);
            }
            if wants(nodes, *w) {
                accumulate(nodes, grads, *w, dw);
            }
            accumulate(nodes, grads, *b, db);
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
            let xs = val(*x).shape();
            let (n, c) = (xs[0], xs[1]);
            let inner: usize = xs[2..].iter().product();
            let gm = val(*gamma).data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut sum_dxhat = vec![0.0; c];
            let mut sum_dxhat_xhat = vec![0.0; c];
            for bi in 0..n {
                for ch in 0..c {
                    for t in (bi * c + ch) * inner..(bi * c + ch + 1) * inner {
                        dgamma[ch] += g[t] * xhat[t];
                        dbeta[ch] += g[t];
                        let dxh = g[t] * gm[ch];
                        sum_dxhat[ch] += dxh;
                        sum_dxhat_xhat[ch] += dxh * xhat[t];
                    }
                }
            }
            if wants(nodes, *x) {
                let m = (n * inner) as f64;
                let mut dx = vec![0.0; g.len()];
                for bi in 0..n {
                    for ch in 0..c {
                        for t in (bi * c + ch) * inner..(bi * c + ch + 1) * inner {
                            let dxh = g[t] * gm[ch];
                            dx[t] = if *training {
                                inv_std[ch] / m * (m * dxh - sum_dxhat[ch] - xhat[t] * sum_dxhat_xhat[ch])
                            } else {
                                dxh * inv_std[ch]
                            };
                        }
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
            accumulate(nodes, grads, *gamma, dgamma);
            accumulate(nodes, grads, *beta, dbeta);
        }
        Op::CapsulePredict { u, w } => {
            let (uv, wv) = (val(*u), val(*w));
            let (n, nl, din) = (uv.shape()[0], uv.shape()[1], uv.shape()[2]);
            let (nu, dout) = (wv.shape()[1], wv.shape()[3]);
            let (du, dw) = kernels::capsule_predict_backward(
                uv.data(),
                wv.data(),
                g,
                n,
                nl,
                nu,
                din,
                dout,
                wants(nodes, *u),
                wants(nodes, *w),
            );
            if wants(nodes, *u) {
                accumulate(nodes, grads, *u, du);
            }
            if wants(nodes, *w) {
                accumulate(nodes, grads, *w, dw);
            }
        }
        Op::VoteSum { c, uhat } => {
            let (cv, uv) = (val(*c).data(), val(*uhat).data());
            let us = val(*uhat).shape();
            let (n, nl, nu, d) = (us[0], us[1], us[2], us[3]);
            if wants(nodes, *c) {
                // dc[n,i,j] = g[n,j,:]·û[n,i,j,:]
                accumulate(nodes, grads, *c, kernels::agreement(uv, g, n, nl, nu, d));
            }
            if wants(nodes, *uhat) {
                accumulate_into(nodes, grads, *uhat, |du| {
                    for b in 0..n {
                        for i in 0..nl {
                            for j in 0..nu {
                                let cij = cv[(b * nl + i) * nu + j];
                                let gj = &g[(b * nu + j) * d..(b * nu + j + 1) * d];
                                let dst = &mut du[((b * nl + i) * nu + j) * d..((b * nl + i) * nu + j + 1) * d];
                                for k in 0..d {
                                    dst[k] += cij * gj[k];
                                }
                            }
                        }
                    }
                });
            }
        }
        Op::Agreement { uhat, v } => {
            let (uv, vv) = (val(*uhat).data(), val(*v).data());
            let us = val(*uhat).shape();
            let (n, nl, nu, d) = (us[0], us[1], us[2], us[3]);
            if wants(nodes, *uhat) {
                accumulate_into(nodes, grads, *uhat, |du| {
                    for b in 0..n {
                        for i in 0..nl {
                            for j in 0..nu {
                                let gij = g[(b * nl + i) * nu + j];
                                let vj = &vv[(b * nu + j) * d..(b * nu + j + 1) * d];
                                let dst = &mut du[((b * nl + i) * nu + j) * d..((b * nl + i) * nu + j + 1) * d];
                                for k in 0..d {
                                    dst[k] += gij * vj[k];
                                }
                            }
                        }
                    }
                });
            }
            if wants(nodes, *v) {
                // dv[n,j,:] = Σ_i g[n,i,j]·û[n,i,j,:], which is a vote sum weighted by g.
                accumulate(nodes, grads, *v, kernels::vote_sum(g, uv, n, nl, nu, d));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
