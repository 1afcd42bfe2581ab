//! Procedural two-blob "faces" for hermetic tests.

use super::dataset::{FaceDataset, FaceImage, Source};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const MAX_SHIFT: f64 = 3.0;
const MAX_ROTATION: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Per-subject parameters, in relative image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Template {
    pub centers: [(f64, f64); 2],
    pub widths: [f64; 2],
    pub amplitudes: [f64; 2],
}

fn stream(seed: u64, subject: u32, index: u32) -> SplitMix64 {
    SplitMix64::new(seed ^ ((subject as u64) << 32 | index as u64).wrapping_mul(0xD134_2543_DE82_EF95))
}

pub fn synth_template(subject: u32, seed: u64) -> Template {
    let mut rng = stream(seed, subject, u32::MAX);
    let mut blob = || ((rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)), rng.uniform(0.06, 0.18), rng.uniform(0.5, 0.9));
    let (a, b) = (blob(), blob());
    Template {
        centers: [a.0, b.0],
        widths: [a.1, b.1],
        amplitudes: [a.2, b.2],
    }
}

/// Render `template` at `h × w`, shifted by `(dy, dx)` pixels and rotated by
/// `angle` radians about the image center.
pub fn render(template: &Template, h: usize, w: usize, dy: f64, dx: f64, angle: f64) -> Tensor {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let scale = h.min(w) as f64;
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Inverse-map the output pixel into template space.
            let (py, px) = (y as f64 - cy - dy, x as f64 - cx - dx);
            let ty = cos * py - sin * px + cy;
            let tx = sin * py + cos * px + cx;
            let mut v = 0.0;
            for k in 0..2 {
                let (my, mx) = (template.centers[k].0 * h as f64, template.centers[k].1 * w as f64);
                let s = template.widths[k] * scale;
                let r2 = ((ty - my).powi(2) + (tx - mx).powi(2)) / (2.0 * s * s);
                v += template.amplitudes[k] * (-r2).exp();
            }
            data.push(v.min(1.0));
        }
    }
    Tensor::from_vec(&[1, h, w], data).expect("shape matches data")
}

/// Instance `index` (1-based) of `subject`, with bounded jitter.
pub fn synth_image(subject: u32, index: u32, h: usize, w: usize, seed: u64) -> Tensor {
    let t = synth_template(subject, seed);
    let mut rng = stream(seed, subject, index);
    let dy = rng.uniform(-MAX_SHIFT, MAX_SHIFT);
    let dx = rng.uniform(-MAX_SHIFT, MAX_SHIFT);
    let angle = rng.uniform(-MAX_ROTATION, MAX_ROTATION);
    render(&t, h, w, dy, dx, angle)
}

/// `n_subjects × n_per_subject` images at 100×100.
pub fn synth_dataset(n_subjects: usize, n_per_subject: usize, seed: u64) -> FaceDataset {
    synth_dataset_sized(n_subjects, n_per_subject, 100, 100, seed)
}

pub fn synth_dataset_sized(n_subjects: usize, n_per_subject: usize, h: usize, w: usize, seed: u64) -> FaceDataset {
    let mut images = Vec::with_capacity(n_subjects * n_per_subject);
    for s in 1..=n_subjects as u32 {
        for i in 1..=n_per_subject as u32 {
            images.push(FaceImage {
                subject: s,
                index: i,
                image: synth_image(s, i, h, w, seed),
            });
        }
    }
    FaceDataset {
        images,
        source: Source::Synthetic,
    }
}
