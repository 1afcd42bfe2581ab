use crate::error::{Error, Result};
use crate::tensor::strides;

/// Elementwise result shape. Ranks must agree; an axis broadcasts only when
/// one side has size 1.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::mismatch(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::mismatch(op, a, b)),
        })
        .collect()
}

/// For every linear index of `out`, the linear index of the broadcast source `inp`.
pub(crate) fn index_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let in_strides = strides(inp);
    let eff: Vec<usize> = inp
        .iter()
        .zip(&in_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            offset += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            offset -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Sum a gradient of shape `out` down to the broadcast source shape `inp`.
pub(crate) fn reduce_to(grad: &[f64], out: &[usize], inp: &[usize]) -> Vec<f64> {
    if out == inp {
        return grad.to_vec();
    }
    let mut acc = vec![0.0; inp.iter().product()];
    for (g, src) in grad.iter().zip(index_map(out, inp)) {
        acc[src] += g;
    }
    acc
}

/// `(outer, len, inner)` decomposition around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// For every linear index of the permuted output, the linear index in the input.
pub(crate) fn permute_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            offset += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}
