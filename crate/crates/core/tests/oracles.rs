//! Library outputs against independent reference computations and hand values.

use scn::autodiff::BatchNormMode;
use scn::capsules::{dynamic_route, Activation, RoutingOptions};
use scn::data::pgm::{decode, encode_p5};
use scn::data::{load_pgm, preprocess, to_grayscale, PgmError};
use scn::rng::SplitMix64;
use scn::siamese::{contrastive_loss, distance, double_margin_loss, Metric};
use scn::{Graph, Tensor};

fn rand(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, ks) = (k.shape()[0], k.shape()[2]);
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let at = |bi: usize, ci: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x.data()[((bi * c + ci) * h + y as usize) * w + xx as usize]
        }
    };
    let mut out = Vec::new();
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                acc += k.data()[((oc * c + ci) * ks + ky) * ks + kx] * at(bi, ci, y, xx);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_loops() {
    for (stride, pad) in [(1, 0), (2, 1), (3, 0), (1, 2)] {
        let x = rand(&[2, 3, 9, 8], 1);
        let k = rand(&[4, 3, 3, 3], 2);
        let b = rand(&[4], 3);
        let g = Graph::new();
        let y = g.constant(x.clone()).conv2d(g.constant(k.clone()), g.constant(b.clone()), stride, pad).unwrap();
        close(y.value().data(), &naive_conv(&x, &k, &b, stride, pad), 1e-12);
    }
}

#[test]
fn batch_norm_training_matches_formula() {
    let x = rand(&[3, 2, 2, 2], 4);
    let gamma = [1.5, -0.5];
    let beta = [0.1, 0.2];
    let g = Graph::new();
    let mode = BatchNormMode {
        training: true,
        running_mean: &[],
        running_var: &[],
        eps: 1e-5,
    };
    let (y, stats) = g
        .constant(x.clone())
        .batch_norm(g.constant(Tensor::from_vec(&[2], gamma.to_vec()).unwrap()), g.constant(Tensor::from_vec(&[2], beta.to_vec()).unwrap()), mode)
        .unwrap();
    let stats = stats.unwrap();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|n| (0..4).map(move |i| (n, i))).map(|(n, i)| x.data()[(n * 2 + ch) * 4 + i]).collect();
        let m = vals.iter().sum::<f64>() / 12.0;
        let biased = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 12.0;
        assert!((stats.mean[ch] - m).abs() < 1e-12);
        assert!((stats.var[ch] - biased * 12.0 / 11.0).abs() < 1e-12);
        for n in 0..3 {
            for i in 0..4 {
                let t = (n * 2 + ch) * 4 + i;
                let want = gamma[ch] * (x.data()[t] - m) / (biased + 1e-5).sqrt() + beta[ch];
                assert!((y.value().data()[t] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn batch_norm_eval_uses_running_statistics() {
    let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
    let g = Graph::new();
    let mode = BatchNormMode {
        training: false,
        running_mean: &[1.0],
        running_var: &[4.0],
        eps: 0.0,
    };
    let (y, stats) = g.constant(x).batch_norm(g.constant(Tensor::scalar(1.0).reshape(&[1]).unwrap()), g.constant(Tensor::zeros(&[1]).unwrap()), mode).unwrap();
    assert!(stats.is_none());
    assert_eq!(y.value().data(), &[0.5, 1.5]);
}

#[test]
fn contrastive_hand_values() {
    let g = Graph::new();
    let d = g.constant(Tensor::from_vec(&[2], vec![0.5, 1.5]).unwrap());
    // ½·0.5 for the match and ½·(2 − 1.5) for the non-match, averaged.
    assert!((contrastive_loss(d, &[0, 1], 2.0).unwrap().item() - 0.25).abs() < 1e-15);
    let far = g.constant(Tensor::from_vec(&[1], vec![3.0]).unwrap());
    assert_eq!(contrastive_loss(far, &[1], 2.0).unwrap().item(), 0.0);
}

#[test]
fn double_margin_hand_values() {
    let g = Graph::new();
    let d = g.constant(Tensor::from_vec(&[2], vec![0.5, 1.5]).unwrap());
    // (0.5 − 0.2)² for the match and (2 − 1.5)² for the non-match, averaged.
    assert!((double_margin_loss(d, &[0, 1], 0.2, 2.0).unwrap().item() - 0.17).abs() < 1e-15);
    let inside = g.constant(Tensor::from_vec(&[2], vec![0.1, 2.5]).unwrap());
    assert_eq!(double_margin_loss(inside, &[0, 1], 0.2, 2.0).unwrap().item(), 0.0);
}

#[test]
fn distance_hand_values() {
    let g = Graph::new();
    let e1 = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap());
    let e2 = g.constant(Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap());
    let d = |m| distance(e1, e2, m).unwrap().item();
    assert!((d(Metric::EuclideanSq) - 2.0).abs() < 1e-15);
    assert!((d(Metric::ManhattanExp) - (-2.0f64).exp()).abs() < 1e-15);
    assert!((d(Metric::Cosine) - 1.0).abs() < 1e-15);
}

#[test]
fn single_iteration_routing_is_the_mean_vote() {
    let u = rand(&[1, 4, 2, 3], 5);
    let g = Graph::new();
    let (v, state) = dynamic_route(g.constant(u.clone()), RoutingOptions::new(1, Activation::Tanh)).unwrap();
    assert!(state.coupling.data().iter().all(|&c| (c - 0.5).abs() < 1e-15));
    for j in 0..2 {
        for k in 0..3 {
            let s: f64 = (0..4).map(|i| 0.5 * u.data()[(i * 2 + j) * 3 + k]).sum();
            assert!((v.value().data()[j * 3 + k] - s.tanh()).abs() < 1e-14);
        }
    }
}

#[test]
fn pgm_reference_vectors() {
    let ascii = b"P2\n3 2\n# max\n15\n0 3 6\n9 12 15\n";
    let t = load_pgm(ascii).unwrap();
    assert_eq!(t.shape(), &[1, 2, 3]);
    close(t.data(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], 1e-15);

    // 16-bit binary samples are big-endian.
    let mut wide = b"P5\n2 1\n1000\n".to_vec();
    wide.extend([0x01, 0xF4, 0x03, 0xE8]);
    close(load_pgm(&wide).unwrap().data(), &[0.5, 1.0], 1e-15);

    assert_eq!(load_pgm(b"P6\n1 1\n255\n\0"), Err(PgmError::BadMagic));
    assert_eq!(load_pgm(b"P2\n1 1\n0\n0\n"), Err(PgmError::ZeroMaxval));
    assert!(matches!(load_pgm(b"P2\n1 1\n10\n11\n"), Err(PgmError::SampleOutOfRange { value: 11, maxval: 10 })));
}

#[test]
fn p5_encoding_round_trips_at_8_bits() {
    let t = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 51.0 / 255.0, 204.0 / 255.0]).unwrap();
    let bytes = encode_p5(&t);
    let g = decode(&bytes).unwrap();
    assert_eq!((g.width, g.height, g.maxval), (2, 2, 255));
    assert_eq!(g.samples, vec![0, 255, 51, 204]);
}

#[test]
fn orl_resize_corners_follow_half_pixel_sampling() {
    // A planar ramp is reproduced exactly by bilinear interpolation, so each
    // output pixel must equal the ramp at its clamped source coordinate.
    let (h, w) = (112usize, 92usize);
    let (a, b, c) = (0.004, 0.003, 0.1);
    let ramp = |y: f64, x: f64| a * y + b * x + c;
    let img = Tensor::from_vec(&[1, h, w], (0..h * w).map(|i| ramp((i / w) as f64, (i % w) as f64)).collect()).unwrap();
    let out = preprocess(&img, 100).unwrap();
    let src = |i: usize, n_in: usize| ((i as f64 + 0.5) * n_in as f64 / 100.0 - 0.5).clamp(0.0, (n_in - 1) as f64);
    for (oy, ox) in [(0, 0), (0, 99), (99, 0), (99, 99), (50, 37)] {
        let want = ramp(src(oy, h), src(ox, w));
        assert!((out.data()[oy * 100 + ox] - want).abs() < 1e-12, "({oy}, {ox})");
    }
    // Top-left: y = 0.06, x clamps from −0.04 to 0.
    assert!((out.data()[0] - ramp(0.06, 0.0)).abs() < 1e-12);
}

#[test]
fn grayscale_weights() {
    let rgb = Tensor::from_vec(&[3, 1, 1], vec![1.0, 0.5, 0.25]).unwrap();
    let want = 0.299 + 0.587 * 0.5 + 0.114 * 0.25;
    assert!((to_grayscale(&rgb).unwrap().data()[0] - want).abs() < 1e-15);
}
