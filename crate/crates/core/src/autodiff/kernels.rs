//! Dense numeric kernels shared by the forward and backward passes of the
//! fused primitives. All loops are single-threaded and fixed-order, so the
//! results are bit-reproducible.

/// `c = a·b` (or `c += a·b` when `accumulate`), with optional transposes.
/// `a` is `m×k` after transposition, `b` is `k×n`, `c` is `m×n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (asserted
    // above) and the strides describe row-major or transposed views of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one image `[C,H,W]` into `[C·k·k, OH·OW]`.
fn im2col(g: &ConvGeom, img: &[f64], cols: &mut [f64]) {
    let p = g.positions();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            img[(ch * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], img: &mut [f64]) {
    let p = g.positions();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        img[(ch * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (patch, p) = (g.patch(), g.positions());
    let mut out = vec![0.0; g.n * g.out_ch * p];
    let mut cols = vec![0.0; patch * p];
    let img_len = g.c * g.h * g.w;
    for n in 0..g.n {
        im2col(g, &x[n * img_len..(n + 1) * img_len], &mut cols);
        let dst = &mut out[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        gemm(g.out_ch, patch, p, w, false, &cols, false, dst, false);
        for (o, row) in dst.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v += b[o]);
        }
    }
    out
}

/// Returns `(dx, dw, db)`; entries are only computed when requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad: &[f64],
    want_x: bool,
    want_w: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (patch, p) = (g.patch(), g.positions());
    let img_len = g.c * g.h * g.w;
    let mut dx = if want_x { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = if want_w { vec![0.0; w.len()] } else { Vec::new() };
    let mut db = vec![0.0; g.out_ch];
    let mut cols = vec![0.0; patch * p];
    let mut dcols = vec![0.0; patch * p];
    for n in 0..g.n {
        let gout = &grad[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        for (o, row) in gout.chunks(p).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        if want_w {
            im2col(g, &x[n * img_len..(n + 1) * img_len], &mut cols);
            gemm(g.out_ch, p, patch, gout, false, &cols, true, &mut dw, true);
        }
        if want_x {
            gemm(patch, g.out_ch, p, w, true, gout, false, &mut dcols, false);
            col2im_add(g, &dcols, &mut dx[n * img_len..(n + 1) * img_len]);
        }
    }
    (dx, dw, db)
}

/// Strided view of a matrix inside a slice: element `(r, c)` lives at
/// `offset + r·rs + c·cs`.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c = a·b + beta·c` over strided views (`a` m×k, `b` k×n, `c` m×n).
#[allow(clippy::too_many_arguments)]
fn gemm_view(m: usize, k: usize, n: usize, a: &[f64], va: View, b: &[f64], vb: View, c: &mut [f64], vc: View, beta: f64) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(va.last(m, k) < a.len() && vb.last(k, n) < b.len() && vc.last(m, n) < c.len());
    // SAFETY: the assertion above bounds every element the views address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(va.offset),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.offset),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// `W[i]` `[nu, din, dout]` rearranged to `[din, nu·dout]`.
fn weight_block(w: &[f64], i: usize, nu: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut out = vec![0.0; din * nu * dout];
    for j in 0..nu {
        for k in 0..din {
            let src = ((i * nu + j) * din + k) * dout;
            out[k * nu * dout + j * dout..k * nu * dout + (j + 1) * dout].copy_from_slice(&w[src..src + dout]);
        }
    }
    out
}

/// Votes `uhat[n,i,j,:] = u[n,i,:] · W[i,j]` for `u` `[N, nl, din]` and
/// `W` `[nl, nu, din, dout]`.
pub(crate) fn capsule_predict(u: &[f64], w: &[f64], n: usize, nl: usize, nu: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * nl * nu * dout];
    let width = nu * dout;
    for i in 0..nl {
        let wt = weight_block(w, i, nu, din, dout);
        let va = View { offset: i * din, rs: nl * din, cs: 1 };
        let vb = View { offset: 0, rs: width, cs: 1 };
        let vc = View { offset: i * width, rs: nl * width, cs: 1 };
        gemm_view(n, din, width, u, va, &wt, vb, &mut out, vc, 0.0);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn capsule_predict_backward(
    u: &[f64],
    w: &[f64],
    grad: &[f64],
    n: usize,
    nl: usize,
    nu: usize,
    din: usize,
    dout: usize,
    want_u: bool,
    want_w: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut du = if want_u { vec![0.0; u.len()] } else { Vec::new() };
    let mut dw = if want_w { vec![0.0; w.len()] } else { Vec::new() };
    let width = nu * dout;
    let mut dwt = vec![0.0; din * width];
    for i in 0..nl {
        let vg = View { offset: i * width, rs: nl * width, cs: 1 };
        if want_u {
            let wt = weight_block(w, i, nu, din, dout);
            let vwt_t = View { offset: 0, rs: 1, cs: width };
            let vdu = View { offset: i * din, rs: nl * din, cs: 1 };
            gemm_view(n, width, din, grad, vg, &wt, vwt_t, &mut du, vdu, 0.0);
        }
        if want_w {
            let vu_t = View { offset: i * din, rs: 1, cs: nl * din };
            let vd = View { offset: 0, rs: width, cs: 1 };
            gemm_view(din, n, width, u, vu_t, grad, vg, &mut dwt, vd, 0.0);
            for j in 0..nu {
                for k in 0..din {
                    let dst = ((i * nu + j) * din + k) * dout;
                    dw[dst..dst + dout].copy_from_slice(&dwt[k * width + j * dout..k * width + (j + 1) * dout]);
                }
            }
        }
    }
    (du, dw)
}

/// Coupling-weighted vote sum: `s[n,j,:] = Σ_i c[n,i,j] · uhat[n,i,j,:]`.
pub(crate) fn vote_sum(c: &[f64], uhat: &[f64], n: usize, nl: usize, nu: usize, d: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * nu * d];
    for b in 0..n {
        for i in 0..nl {
            for j in 0..nu {
                let cij = c[(b * nl + i) * nu + j];
                let src = &uhat[((b * nl + i) * nu + j) * d..((b * nl + i) * nu + j + 1) * d];
                let dst = &mut s[(b * nu + j) * d..(b * nu + j + 1) * d];
                for k in 0..d {
                    dst[k] += cij * src[k];
                }
            }
        }
    }
    s
}

/// Agreement between votes and parent outputs: `a[n,i,j] = uhat[n,i,j,:] · v[n,j,:]`.
pub(crate) fn agreement(uhat: &[f64], v: &[f64], n: usize, nl: usize, nu: usize, d: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * nl * nu];
    for b in 0..n {
        for i in 0..nl {
            for j in 0..nu {
                let src = &uhat[((b * nl + i) * nu + j) * d..((b * nl + i) * nu + j + 1) * d];
                let vj = &v[(b * nu + j) * d..(b * nu + j + 1) * d];
                a[(b * nl + i) * nu + j] = src.iter().zip(vj).map(|(x, y)| x * y).sum();
            }
        }
    }
    a
}

/// Per-channel statistics over `[N, C, inner]`: returns (mean, biased variance).
pub(crate) fn channel_stats(x: &[f64], n: usize, c: usize, inner: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * inner) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * inner..(b * c + ch + 1) * inner].iter().sum::<f64>();
        }
        let mu = s / count;
        let mut v = 0.0;
        for b in 0..n {
            v += x[(b * c + ch) * inner..(b * c + ch + 1) * inner]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive_gemm(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, false);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &at, true, &bt, true, &mut c2, false);
        for ((x, y), z) in c.iter().zip(&c2).zip(&expect) {
            assert!((x - z).abs() < 1e-12 && (y - z).abs() < 1e-12);
        }
        gemm(m, k, n, &a, false, &b, false, &mut c, true);
        for (x, z) in c.iter().zip(&expect) {
            assert!((x - 2.0 * z).abs() < 1e-12);
        }
    }
}
