//! Randomized invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;
use scn::capsules::{concrete_dropout_mask, concrete_noise, dynamic_route, Activation, ConcreteForm, RoutingOptions};
use scn::data::pgm::encode_p5;
use scn::data::{kfold, load_pgm, sample_pairs, split_subjects, synth_dataset_sized, MATCH};
use scn::harness::checkpoint;
use scn::optim::{AmsGrad, OptimState};
use scn::rng::SplitMix64;
use scn::siamese::{distance, Metric};
use scn::{Graph, Tensor};

fn tensor(shape: Vec<usize>, scale: f64) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(-scale..scale, n).prop_map(move |d| Tensor::from_vec(&shape, d).unwrap())
}

fn matrix(max_rows: usize, max_cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| tensor(vec![r, c], scale))
}

fn rows(t: &Tensor) -> impl Iterator<Item = &[f64]> {
    t.data().chunks(*t.shape().last().unwrap())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(5, 7, 30.0)) {
        let g = Graph::new();
        let y = g.constant(x).softmax(1).unwrap().value();
        for r in rows(&y) {
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn squash_shrinks_and_keeps_direction(x in matrix(4, 6, 50.0)) {
        let g = Graph::new();
        let y = g.constant(x.clone()).squash(1).unwrap().value();
        for (s, v) in rows(&x).zip(rows(&y)) {
            let (ns, nv) = (norm(s), norm(v));
            prop_assert!(nv < 1.0);
            if ns > 1e-6 {
                let cos = s.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (ns * nv);
                prop_assert!((cos - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn l2norm_rows_have_unit_length(x in matrix(4, 6, 10.0)) {
        prop_assume!(rows(&x).all(|r| norm(r) > 1e-3));
        let g = Graph::new();
        let y = g.constant(x).l2norm(1).unwrap().value();
        for r in rows(&y) {
            prop_assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn routing_couplings_are_distributions(
        u in (1..3usize, 1..5usize, 1..4usize, 1..5usize).prop_flat_map(|(n, l, h, d)| tensor(vec![n, l, h, d], 5.0)),
        iters in 1..5usize,
        squash in any::<bool>(),
    ) {
        let act = if squash { Activation::Squash } else { Activation::Tanh };
        let nu = u.shape()[2];
        let g = Graph::new();
        let (v, state) = dynamic_route(g.constant(u), RoutingOptions::new(iters, act)).unwrap();
        prop_assert_eq!(state.history.len(), iters);
        for c in &state.history {
            for r in c.data().chunks(nu) {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        if squash {
            prop_assert!(rows(&v.value()).all(|r| norm(r) < 1.0));
        }
    }

    #[test]
    fn distances_stay_in_range(e in (1..4usize, 1..6usize).prop_flat_map(|(n, k)| (tensor(vec![n, k], 3.0), tensor(vec![n, k], 3.0)))) {
        prop_assume!(rows(&e.0).chain(rows(&e.1)).all(|r| norm(r) > 1e-3));
        let g = Graph::new();
        let a = g.constant(e.0).l2norm(1).unwrap();
        let b = g.constant(e.1).l2norm(1).unwrap();
        for m in Metric::ALL {
            let (lo, hi) = m.range();
            for &d in distance(a, b, m).unwrap().value().data() {
                prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12, "{m}: {d}");
            }
        }
        let self_d = distance(a, a, Metric::EuclideanSq).unwrap().value();
        prop_assert!(self_d.data().iter().all(|&d| d.abs() < 1e-12));
    }

    #[test]
    fn concrete_mask_is_strictly_inside_unit_interval(
        p in prop::collection::vec(0.01..0.99f64, 1..6),
        seed in any::<u64>(),
        t in 0.05..2.0f64,
    ) {
        let k = p.len();
        let u = concrete_noise(&[3, k], &mut SplitMix64::new(seed)).unwrap();
        let g = Graph::new();
        let pv = g.constant(Tensor::from_vec(&[1, k], p).unwrap());
        for form in [ConcreteForm::Standard, ConcreteForm::TemperatureOnP] {
            let z = concrete_dropout_mask(pv, &u, t, form).unwrap().value();
            prop_assert!(z.data().iter().all(|&x| (0.0..=1.0).contains(&x) && x.is_finite()));
        }
    }

    #[test]
    fn amsgrad_second_moment_never_decreases(grads in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 4), 1..40)) {
        let opt = AmsGrad::default();
        let mut w = Tensor::zeros(&[4]).unwrap();
        let mut st = OptimState::new([w.shape()]).unwrap();
        for g in grads {
            let before = st.v_hat[0].clone();
            opt.step(&mut [&mut w], &[Tensor::from_vec(&[4], g).unwrap()], &mut st).unwrap();
            prop_assert!(before.data().iter().zip(st.v_hat[0].data()).all(|(a, b)| b >= a));
            prop_assert!(w.all_finite());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(
        tensors in prop::collection::vec((1..4usize, 1..4usize).prop_flat_map(|(a, b)| tensor(vec![a, b], 1e6)), 0..5),
    ) {
        let named: Vec<(String, Tensor)> = tensors.into_iter().enumerate().map(|(i, t)| (format!("layer{i}.w"), t)).collect();
        let back = checkpoint::decode(&checkpoint::encode(&named).unwrap()).unwrap();
        prop_assert_eq!(back.len(), named.len());
        for ((n1, t1), (n2, t2)) in named.iter().zip(&back) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            prop_assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn pgm_round_trip_at_8_bits(h in 1..6usize, w in 1..6usize, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let px: Vec<f64> = (0..h * w).map(|_| rng.below(256) as f64 / 255.0).collect();
        let t = Tensor::from_vec(&[1, h, w], px).unwrap();
        prop_assert_eq!(load_pgm(&encode_p5(&t)).unwrap(), t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn holdout_split_partitions_subjects(n in 3..20usize, hold in 1..10usize, seed in any::<u64>()) {
        prop_assume!(hold < n);
        let ds = synth_dataset_sized(n, 2, 4, 4, 1);
        let s = split_subjects(&ds, hold, seed).unwrap();
        prop_assert!(s.is_disjoint());
        prop_assert_eq!(s.test_subjects.len(), hold);
        let mut all: Vec<u32> = s.train_subjects.iter().chain(&s.test_subjects).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, ds.subjects());
    }

    #[test]
    fn kfold_covers_each_subject_once(n in 2..25usize, k in 2..8usize, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ds = synth_dataset_sized(n, 2, 4, 4, 2);
        let folds = kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen: Vec<u32> = folds.iter().flat_map(|f| f.test_subjects.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, ds.subjects());
        let sizes: BTreeSet<usize> = folds.iter().map(|f| f.test_subjects.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(folds.iter().all(|f| f.is_disjoint()));
    }

    #[test]
    fn pair_sampling_respects_labels_and_ratio(n_pairs in 1..200usize, ratio in 0.0..=1.0f64, seed in any::<u64>()) {
        let ds = synth_dataset_sized(6, 3, 4, 4, 3);
        let subjects = ds.subjects();
        let pairs = sample_pairs(&ds, &subjects, n_pairs, ratio, &mut SplitMix64::new(seed)).unwrap();
        prop_assert_eq!(pairs.len(), n_pairs);
        let pos = pairs.iter().filter(|p| p.label == MATCH).count();
        prop_assert_eq!(pos, (n_pairs as f64 * ratio).round() as usize);
        for p in &pairs {
            let same = ds.images[p.left].subject == ds.images[p.right].subject;
            prop_assert_eq!(same, p.label == MATCH);
            prop_assert_ne!(p.left, p.right);
        }
    }
}
