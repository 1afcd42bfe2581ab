//! Resizing and color conversion.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Luma `0.299R + 0.587G + 0.114B` of a `[3, H, W]` image, as `[1, H, W]`.
pub fn to_grayscale(rgb: &Tensor) -> Result<Tensor> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid("to_grayscale", format!("expected [3, H, W], got {s:?}")));
    }
    let plane = s[1] * s[2];
    let d = rgb.data();
    let gray = (0..plane)
        .map(|i| 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i])
        .collect();
    Tensor::from_vec(&[1, s[1], s[2]], gray)
}

/// Bilinear resample of one plane with half-pixel centers: output pixel `i`
/// reads source coordinate `(i + 0.5)·(in/out) − 0.5`, clamped to the image.
fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(n_in - 1);
                (x0, x1, x - x0 as f64)
            })
            .collect()
    };
    let ys = coords(h, oh);
    let xs = coords(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grayscale `[1, target, target]` version of a `[1|3, H, W]` image.
pub fn preprocess(image: &Tensor, target: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::invalid("preprocess", format!("expected [1|3, H, W], got {s:?}")));
    }
    if s[1] < 2 || s[2] < 2 {
        return Err(Error::invalid("preprocess", format!("image {}x{} is smaller than 2x2", s[1], s[2])));
    }
    let gray = if s[0] == 3 { to_grayscale(image)? } else { image.clone() };
    let (h, w) = (s[1], s[2]);
    if h == target && w == target {
        return Ok(gray);
    }
    Tensor::from_vec(&[1, target, target], resize_plane(gray.data(), h, w, target, target))
}
