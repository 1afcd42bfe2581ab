//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs with a custom harness so the verdicts are printed under plain
//! `cargo test`. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use scn::autodiff::{Faults, Graph};
use scn::capsules::{concrete_dropout_mask, dynamic_route, Activation, ConcreteForm, RoutingOptions};
use scn::data::{kfold, load_pgm, sample_pairs, split_subjects, synth_dataset_sized, FaceDataset, PgmError};
use scn::harness::checkpoint;
use scn::harness::config::RunConfig;
use scn::harness::gradcheck::{layer_names, run_suite};
use scn::harness::train::{cmd_train, named_tensors, read_audit, score, Experiment};
use scn::optim::{AmsGrad, OptimState};
use scn::rng::SplitMix64;
use scn::siamese::{ScnConfig, ScnEncoder};
use scn::Tensor;

/// Outcome of one criterion: pass flag plus a one-line summary of the evidence.
type Verdict = (bool, String);

fn config(settings: &[&str]) -> RunConfig {
    let overrides: Vec<String> = settings.iter().map(|s| s.to_string()).collect();
    RunConfig::load(None, &overrides).expect("valid acceptance config")
}

fn c1_parameter_counts() -> Verdict {
    let enc = ScnEncoder::new(ScnConfig::full(), 0).unwrap();
    let conv1 = enc.params.count_with_prefix("conv1.");
    let primary = enc.params.count_with_prefix("primary.");
    (
        conv1 == 20_992 && primary == 5_308_672,
        format!("conv1 = {conv1} (want 20992), primary = {primary} (want 5308672)"),
    )
}

fn c2_gradient_suite() -> Verdict {
    let start = Instant::now();
    let reports = run_suite(Faults::default()).unwrap();
    let elapsed = start.elapsed();
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let mut names: Vec<_> = reports.iter().map(|r| r.layer).collect();
    names.sort_unstable();
    names.dedup();
    let once = names.len() == reports.len() && reports.len() == layer_names().len();
    let ok = reports.iter().all(|r| r.max_rel_error < 1e-4) && once && elapsed < Duration::from_secs(120);
    (
        ok,
        format!(
            "{} layers, worst {} at {:.2e} (< 1e-4), {:.1}s (< 120s)",
            reports.len(),
            worst.layer,
            worst.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn c3_routing_invariants() -> Verdict {
    let mut rng = SplitMix64::new(3);
    let (mut worst_row, mut worst_norm) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (n, nl, nu, d) = (1 + rng.below(2), 1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(6));
        let scale = rng.uniform(0.1, 5.0);
        let votes: Vec<f64> = (0..n * nl * nu * d).map(|_| rng.normal(0.0, scale)).collect();
        let iters = 1 + rng.below(5);
        let g = Graph::new();
        let u = g.constant(Tensor::from_vec(&[n, nl, nu, d], votes).unwrap());
        let (v, state) = dynamic_route(u, RoutingOptions::new(iters, Activation::Squash)).unwrap();
        for c in &state.history {
            for row in c.data().chunks(nu) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        for cap in v.value().data().chunks(d) {
            worst_norm = worst_norm.max(cap.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }

    // Parent 0 receives identical votes from every child; parent 1 receives
    // votes that cancel in pairs.
    let (nl, d) = (8, 4);
    let mut votes = vec![0.0; nl * 2 * d];
    for i in 0..nl {
        votes[(i * 2) * d..(i * 2 + 1) * d].copy_from_slice(&[1.0, 0.5, -0.5, 0.25]);
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut scattered = [0.0; 4];
        scattered[(i / 2) % d] = 1.5 * sign;
        votes[(i * 2 + 1) * d..(i * 2 + 2) * d].copy_from_slice(&scattered);
    }
    let g = Graph::new();
    let u = g.constant(Tensor::from_vec(&[1, nl, 2, d], votes).unwrap());
    let (_, state) = dynamic_route(u, RoutingOptions::new(5, Activation::Squash)).unwrap();
    let mut monotone = true;
    for i in 0..nl {
        let track: Vec<f64> = state.history.iter().map(|c| c.data()[i * 2]).collect();
        monotone &= track.windows(2).all(|w| w[1] >= w[0]);
    }
    let last = state.history.last().unwrap().data()[0];
    (
        worst_row <= 1e-9 && worst_norm < 1.0 && monotone,
        format!(
            "max |Σc−1| = {worst_row:.1e} (≤ 1e-9), max ‖v‖ = {worst_norm:.6} (< 1), consistent-parent coupling non-decreasing: {monotone} (final {last:.4})"
        ),
    )
}

fn c4_squash_analytics() -> Verdict {
    let dir = [0.3, -0.5, 0.8, 0.1, -0.2];
    let unit: f64 = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for target in [0.1, 1.0, 3.0, 10.0] {
        let s: Vec<f64> = dir.iter().map(|x| x / unit * target).collect();
        let g = Graph::new();
        let v = g.constant(Tensor::from_vec(&[1, 5], s.clone()).unwrap()).squash(1).unwrap().value();
        let norm_s = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_v = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max((norm_v - norm_s * norm_s / (1.0 + norm_s * norm_s)).abs());
    }
    let g = Graph::new();
    let zero = g.constant(Tensor::zeros(&[1, 5]).unwrap()).squash(1).unwrap().value();
    let exact_zero = zero.data().iter().all(|&x| x == 0.0);
    (
        worst <= 1e-12 && exact_zero,
        format!("max norm error {worst:.1e} (≤ 1e-12) over ‖s‖ ∈ {{0.1, 1, 3, 10}}, squash(0) == 0: {exact_zero}"),
    )
}

fn c5_amsgrad_oracle() -> Verdict {
    // Scalar reference, written out independently of the library.
    let (alpha, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    let (mut w, mut m, mut v, mut vh) = (1.5f64, 0.0f64, 0.0f64, 0.0f64);
    let mut reference = Vec::new();
    for t in 1..=100 {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        vh = vh.max(v);
        w -= alpha / (t as f64).sqrt() * m / (vh.sqrt() + eps);
        reference.push(w);
    }
    let opt = AmsGrad::default();
    let mut p = Tensor::from_vec(&[1], vec![1.5]).unwrap();
    let mut state = OptimState::new([p.shape()]).unwrap();
    let mut worst = 0.0f64;
    for &r in &reference {
        let g = Tensor::from_vec(&[1], vec![2.0 * p.data()[0]]).unwrap();
        opt.step(&mut [&mut p], &[g], &mut state).unwrap();
        worst = worst.max((p.data()[0] - r).abs());
    }

    let mut rng = SplitMix64::new(5);
    let mut q = Tensor::zeros(&[16]).unwrap();
    let mut st = OptimState::new([q.shape()]).unwrap();
    let mut monotone = true;
    for _ in 0..500 {
        let scale = rng.uniform(0.0, 3.0);
        let g = Tensor::from_vec(&[16], (0..16).map(|_| rng.normal(0.0, scale)).collect()).unwrap();
        let before = st.v_hat[0].clone();
        opt.step(&mut [&mut q], &[g], &mut st).unwrap();
        monotone &= before.data().iter().zip(st.v_hat[0].data()).all(|(a, b)| b >= a);
    }
    (
        worst <= 1e-12 && monotone,
        format!("100-step trajectory max |Δw| = {worst:.1e} (≤ 1e-12), v̂ monotone over 500 random steps: {monotone}"),
    )
}

fn c6_concrete_dropout() -> Verdict {
    let g = Graph::new();
    let half = Tensor::from_vec(&[1], vec![0.5]).unwrap();
    let z = concrete_dropout_mask(g.constant(half.clone()), &half, 0.1, ConcreteForm::Standard).unwrap().item();
    let mut rng = SplitMix64::new(6);
    let mut gaps = Vec::new();
    for p in [0.3, 0.7] {
        let n = 100_000;
        let u = Tensor::from_vec(&[n], (0..n).map(|_| rng.next_open01()).collect()).unwrap();
        let pv = g.constant(Tensor::from_vec(&[1], vec![p]).unwrap());
        let mask = concrete_dropout_mask(pv, &u, 0.1, ConcreteForm::Standard).unwrap().value();
        let mean = mask.data().iter().sum::<f64>() / n as f64;
        gaps.push((p, mean));
    }
    let ok = z == 0.5 && gaps.iter().all(|(p, m)| (p - m).abs() <= 0.05);
    let detail: Vec<String> = gaps.iter().map(|(p, m)| format!("p={p}: mean {m:.4}")).collect();
    (ok, format!("z̃(0.5, 0.5) = {z} (== 0.5); {} (within 0.05, 1e5 samples, t=0.1)", detail.join(", ")))
}

fn c7_overfit(dir: &Path) -> Verdict {
    let out = dir.join("overfit");
    let cfg = config(&[
        "dataset=synthetic",
        "synth_subjects=4",
        "synth_per_subject=4",
        "model=scn",
        "widths=reduced",
        "dropout=0",
        "holdout=0",
        "pairs_per_epoch=8",
        "batch_size=8",
        "resample_pairs=false",
        "test_pairs=2",
        "epochs=500",
        "seed=7",
        &format!("output_dir={}", out.display()),
    ]);
    let start = Instant::now();
    let run = cmd_train(&cfg).unwrap();
    let elapsed = start.elapsed();
    let last = run.rows.last().unwrap().train_loss;
    let first_below = run.rows.iter().find(|r| r.train_loss < 0.01).map(|r| r.epoch);
    (
        last < 0.01 && elapsed < Duration::from_secs(300),
        format!(
            "reduced SCN, 8 fixed pairs, 500 steps: final train loss {last:.2e} (< 0.01), first below at step {first_below:?}, {:.0}s (< 300s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// AT&T from `SCN_DATA_DIR` if present, else a synthetic stand-in in the same layout.
fn att_root(dir: &Path) -> (PathBuf, bool) {
    if let Some(base) = std::env::var_os("SCN_DATA_DIR").map(PathBuf::from) {
        for cand in [base.join("att"), base.clone()] {
            if cand.join("s1").is_dir() {
                return (cand, true);
            }
        }
    }
    let root = dir.join("att_standin");
    synth_dataset_sized(40, 10, 112, 92, 0).write_orl(&root).unwrap();
    (root, false)
}

fn c8_few_shot_ordering(dir: &Path) -> Verdict {
    let (root, real) = att_root(dir);
    let start = Instant::now();
    let mut results = Vec::new();
    for model in ["scn", "standard"] {
        let cfg = config(&[
            "dataset=att",
            &format!("data_dir={}", root.display()),
            &format!("model={model}"),
            "widths=reduced",
            "holdout=5",
            "epochs=20",
            "pairs_per_epoch=200",
            "test_pairs=200",
            "alpha=0.003",
            "seed=8",
            "wall_clock=false",
            &format!("output_dir={}", dir.join(format!("c8_{model}")).display()),
        ]);
        let run = cmd_train(&cfg).unwrap();
        results.push((run.rows.last().unwrap().test_loss, run.untrained_test_loss));
    }
    let elapsed = start.elapsed();
    let ((scn, scn0), (std, std0)) = (results[0], results[1]);
    let ok = scn <= std && scn < 0.5 * scn0 && std < 0.5 * std0 && elapsed < Duration::from_secs(1800);
    let source = if real { "AT&T" } else { "synthetic ORL-layout stand-in (AT&T not found under SCN_DATA_DIR)" };
    (
        ok,
        format!(
            "{source}: SCN test loss {scn:.4} vs Standard {std:.4} (SCN ≤ Standard); untrained SCN {scn0:.4} (need < {:.4}), Standard {std0:.4} (need < {:.4}); {:.0}s (< 1800s)",
            0.5 * scn0,
            0.5 * std0,
            elapsed.as_secs_f64()
        ),
    )
}

fn small_run(dir: &Path, name: &str) -> RunConfig {
    config(&[
        "dataset=synthetic",
        "synth_subjects=8",
        "synth_per_subject=3",
        "widths=reduced",
        "holdout=2",
        "pairs_per_epoch=12",
        "batch_size=6",
        "test_pairs=6",
        "epochs=2",
        "seed=9",
        "wall_clock=false",
        &format!("output_dir={}", dir.join(name).display()),
    ])
}

fn bits(t: &[(String, Tensor)]) -> Vec<(String, Vec<usize>, Vec<u64>)> {
    t.iter()
        .map(|(n, x)| (n.clone(), x.shape().to_vec(), x.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn c9_determinism(dir: &Path) -> Verdict {
    let a = cmd_train(&small_run(dir, "det_a")).unwrap();
    cmd_train(&small_run(dir, "det_b")).unwrap();
    let read = |n: &str| std::fs::read(dir.join(n).join("metrics.csv")).unwrap();
    let same_metrics = read("det_a") == read("det_b");

    let ckpt = dir.join("det_a").join("final.ckpt");
    let saved = named_tensors(&a.encoder, Some(&a.state));
    let round_trip = bits(&checkpoint::load(&ckpt).unwrap()) == bits(&saved);

    let cfg = small_run(dir, "det_a");
    let exp = Experiment::prepare(&cfg).unwrap();
    let before = score(&a.encoder, &cfg, &exp.dataset, &exp.test).unwrap();
    let mut reloaded = scn::harness::train::build_encoder(&cfg, 12345).unwrap();
    let (model, _) = checkpoint::split_optim(checkpoint::load(&ckpt).unwrap()).unwrap();
    reloaded.params_mut().load_from(&model).unwrap();
    let after = score(&reloaded, &cfg, &exp.dataset, &exp.test).unwrap();
    let forward_equal = before.loss.to_bits() == after.loss.to_bits();

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let corrupt = checkpoint::decode(&bytes).map_err(|e| e.to_string());
    let crc_caught = matches!(&corrupt, Err(msg) if msg.contains("checkpoint corrupt"));
    (
        same_metrics && round_trip && forward_equal && crc_caught,
        format!(
            "metrics.csv identical: {same_metrics}; checkpoint bitwise round-trip: {round_trip}; reloaded loss bitwise equal: {forward_equal}; flipped byte rejected: {crc_caught}"
        ),
    )
}

fn c10_data_protocol(dir: &Path) -> Verdict {
    let ds: FaceDataset = synth_dataset_sized(40, 10, 8, 8, 10);
    let split = split_subjects(&ds, 5, 10).unwrap();
    let mut rng = SplitMix64::new(10);
    let train = sample_pairs(&ds, &split.train_subjects, 2000, 0.5, &mut rng).unwrap();
    let test = sample_pairs(&ds, &split.test_subjects, 400, 0.5, &mut rng).unwrap();
    let subj = |p: &[scn::data::PairRef]| {
        p.iter()
            .flat_map(|r| [ds.images[r.left].subject, ds.images[r.right].subject])
            .collect::<std::collections::BTreeSet<_>>()
    };
    let stream_disjoint = subj(&train).is_disjoint(&subj(&test)) && split.is_disjoint();
    let audit_path = dir.join("det_a").join("audit.log");
    if !audit_path.exists() {
        cmd_train(&small_run(dir, "det_a")).unwrap();
    }
    let audit = read_audit(&audit_path).unwrap();
    let audit_clean = audit.get("stream_overlap").map(String::as_str) == Some("none");

    let p2 = b"P2\n# comment\n2 2\n255\n0 255\n128 64\n";
    let mut p5 = b"P5 2 2 255\n".to_vec();
    p5.extend([0u8, 255, 128, 64]);
    let expected = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
    let pgm_equal = load_pgm(p2).unwrap() == load_pgm(&p5).unwrap() && load_pgm(&p5).unwrap().data() == expected;
    let truncated = load_pgm(&p5[..p5.len() - 1]);
    let trunc_ok = matches!(&truncated, Err(e @ PgmError::Truncated) if e.to_string().contains("unexpected end of pixel data"));

    let folds = kfold(&ds, 5, 10).unwrap();
    let mut covered: Vec<u32> = folds.iter().flat_map(|f| f.test_subjects.clone()).collect();
    covered.sort_unstable();
    let folds_ok = folds.iter().all(|f| f.test_subjects.len() == 8 && f.is_disjoint()) && covered == ds.subjects();
    (
        stream_disjoint && audit_clean && pgm_equal && trunc_ok && folds_ok,
        format!(
            "holdout streams disjoint: {stream_disjoint}; run audit overlap none: {audit_clean}; P2 ≡ P5: {pgm_equal}; truncation error: {trunc_ok}; 5 folds disjoint and exhaustive: {folds_ok}"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 parameter counts", Box::new(c1_parameter_counts)),
        ("2 gradient suite", Box::new(c2_gradient_suite)),
        ("3 routing invariants", Box::new(c3_routing_invariants)),
        ("4 squash analytics", Box::new(c4_squash_analytics)),
        ("5 AMSGrad oracle", Box::new(c5_amsgrad_oracle)),
        ("6 concrete dropout", Box::new(c6_concrete_dropout)),
        ("7 overfit sanity", Box::new(|| c7_overfit(dir))),
        ("8 few-shot ordering", Box::new(|| c8_few_shot_ordering(dir))),
        ("9 determinism and persistence", Box::new(|| c9_determinism(dir))),
        ("10 data protocol", Box::new(|| c10_data_protocol(dir))),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in &criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
