//! Training and evaluation runs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint;
use super::config::{DatasetKind, RunConfig, Widths};
use crate::autodiff::Graph;
use crate::capsules::Activation;
use crate::data::{kfold, sample_pairs, split_subjects, synth_dataset_sized, FaceDataset, PairBatch, PairRef, SplitSpec};
use crate::error::{Error, Result};
use crate::optim::{AmsGrad, OptimState};
use crate::rng::SplitMix64;
use crate::siamese::{accuracy, pair_forward, select_threshold, Encoder, Mode, ModelKind, ScnConfig, ScnEncoder, StandardConfig, StandardEncoder};

pub const METRICS_HEADER: &str = "epoch,train_loss,test_loss,test_accuracy,wall_ms";
/// Share of the per-epoch pair count drawn once as a threshold-selection slice.
pub const VALIDATION_FRACTION: f64 = 0.1;
/// Largest batch used for evaluation-only forwards.
const EVAL_BATCH: usize = 32;

/// Where to look for `dataset`: `data_dir` (or `SCN_DATA_DIR`), then its
/// `att`/`lfw` subdirectory if present.
pub fn dataset_root(cfg: &RunConfig) -> Result<PathBuf> {
    let base = cfg
        .data_dir
        .clone()
        .or_else(|| std::env::var_os("SCN_DATA_DIR").map(PathBuf::from))
        .ok_or_else(|| Error::Data(format!("dataset {} not found: set data_dir or SCN_DATA_DIR", cfg.dataset)))?;
    let sub = base.join(cfg.dataset.to_string());
    let root = if sub.is_dir() { sub } else { base };
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset directory {} not found", root.display())));
    }
    Ok(root)
}

/// Load and resize the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<FaceDataset> {
    let ds = match cfg.dataset {
        DatasetKind::Synthetic => {
            let s = cfg.input_size;
            return Ok(synth_dataset_sized(cfg.synth_subjects, cfg.synth_per_subject, s, s, cfg.seed));
        }
        DatasetKind::Att => FaceDataset::load_orl(&dataset_root(cfg)?)?,
        DatasetKind::Lfw => FaceDataset::load_lfw(&dataset_root(cfg)?)?,
    };
    ds.preprocessed(cfg.input_size)
}

pub fn scn_config(cfg: &RunConfig) -> ScnConfig {
    let mut c = match cfg.widths {
        Widths::Full => ScnConfig::full(),
        Widths::Reduced => ScnConfig::reduced(),
    };
    c.input_size = cfg.input_size;
    c.routing_iters = cfg.routing_iters;
    c.activation = Activation::Tanh;
    c.dropout_rate = cfg.dropout;
    c.concrete_dropout = cfg.model == ModelKind::SDropCapNet;
    c.normalize_at = cfg.normalize;
    c.batch_norm_primary = cfg.batch_norm_primary;
    c
}

pub fn build_encoder(cfg: &RunConfig, seed: u64) -> Result<Encoder> {
    Ok(match cfg.model {
        ModelKind::Scn | ModelKind::SDropCapNet => Encoder::Scn(ScnEncoder::new(scn_config(cfg), seed)?),
        ModelKind::Standard => {
            let c = StandardConfig {
                input_size: cfg.input_size,
                dropout_rate: cfg.dropout,
                normalize: cfg.normalize != crate::siamese::NormalizeAt::Off,
                ..StandardConfig::default()
            };
            Encoder::Standard(StandardEncoder::new(c, seed)?)
        }
    })
}

pub fn resolve_split(cfg: &RunConfig, ds: &FaceDataset) -> Result<SplitSpec> {
    if cfg.kfold_k >= 2 {
        Ok(kfold(ds, cfg.kfold_k, cfg.seed)?.swap_remove(cfg.fold))
    } else {
        split_subjects(ds, cfg.holdout, cfg.seed)
    }
}

/// Everything a run derives from `(config, seed)` before training starts.
pub struct Experiment {
    pub dataset: FaceDataset,
    pub split: SplitSpec,
    pub validation: Vec<PairRef>,
    pub test: Vec<PairRef>,
    /// Whether the test pairs come from held-out subjects.
    pub test_is_holdout: bool,
    /// Seed for the encoder's initial weights.
    pub model_seed: u64,
    pub pair_rng: SplitMix64,
    pub noise_rng: SplitMix64,
}

impl Experiment {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = load_dataset(cfg)?;
        Self::with_dataset(cfg, dataset)
    }

    pub fn with_dataset(cfg: &RunConfig, dataset: FaceDataset) -> Result<Self> {
        let split = resolve_split(cfg, &dataset)?;
        let mut master = SplitMix64::new(cfg.seed);
        let model_seed = master.next_u64();
        let mut eval_rng = master.fork();
        let pair_rng = master.fork();
        let noise_rng = master.fork();
        let n_val = ((cfg.pairs_per_epoch as f64 * VALIDATION_FRACTION).ceil() as usize).max(2);
        let validation = sample_pairs(&dataset, &split.train_subjects, n_val, cfg.pos_ratio, &mut eval_rng)?;
        let test_is_holdout = split.test_subjects.len() >= 2;
        let test_subjects = if test_is_holdout { &split.test_subjects } else { &split.train_subjects };
        let test = sample_pairs(&dataset, test_subjects, cfg.test_pairs, cfg.pos_ratio, &mut eval_rng)?;
        Ok(Self {
            dataset,
            split,
            validation,
            test,
            test_is_holdout,
            model_seed,
            pair_rng,
            noise_rng,
        })
    }
}

/// Chunk `n` items into batches of `size`, folding a trailing singleton into
/// the previous batch (batch normalization needs two samples).
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Distances and mean loss of `pairs` in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub distances: Vec<f64>,
    pub labels: Vec<u8>,
    pub loss: f64,
}

pub fn score(encoder: &Encoder, cfg: &RunConfig, ds: &FaceDataset, pairs: &[PairRef]) -> Result<Scored> {
    let mut distances = Vec::with_capacity(pairs.len());
    let mut total = 0.0;
    // Evaluation draws no randomness; the generator only satisfies the signature.
    let mut rng = SplitMix64::new(0);
    for r in batch_ranges(pairs.len(), EVAL_BATCH) {
        let batch = PairBatch::materialize(ds, &pairs[r.clone()])?;
        let graph = Graph::new();
        let b = encoder.params().bind(&graph);
        let out = pair_forward(encoder, &b, &batch.left, &batch.right, &batch.labels, cfg.pair_loss(), cfg.metric, Mode::Eval, &mut rng)?;
        total += out.loss.item() * r.len() as f64;
        distances.extend_from_slice(out.distance.value().data());
    }
    Ok(Scored {
        distances,
        labels: pairs.iter().map(|p| p.label).collect(),
        loss: total / pairs.len() as f64,
    })
}

/// One optimizer update on `batch`; returns the batch loss before the update.
pub fn train_step(
    encoder: &mut Encoder,
    cfg: &RunConfig,
    opt: &AmsGrad,
    state: &mut OptimState,
    batch: &PairBatch,
    rng: &mut SplitMix64,
) -> Result<f64> {
    let graph = Graph::new();
    let b = encoder.params().bind(&graph);
    let out = pair_forward(encoder, &b, &batch.left, &batch.right, &batch.labels, cfg.pair_loss(), cfg.metric, Mode::Train, rng)?;
    let loss = out.loss.item();
    if !loss.is_finite() {
        return Err(Error::invalid("train", format!("loss became {loss}")));
    }
    let grads = graph.backward(out.loss)?;
    let all = b.gradients(&grads);
    let ps = encoder.params_mut();
    let trainable: Vec<bool> = ps.iter().map(|p| p.trainable).collect();
    let grads: Vec<_> = all.into_iter().zip(&trainable).filter(|(_, t)| **t).map(|(g, _)| g).collect();
    let mut params: Vec<_> = ps.iter_mut().filter(|p| p.trainable).map(|p| &mut p.value).collect();
    opt.step(&mut params, &grads, state)?;
    encoder.project();
    encoder.apply_batch_stats(&out.batch_stats);
    Ok(loss)
}

pub fn optimizer(cfg: &RunConfig) -> AmsGrad {
    AmsGrad {
        alpha: cfg.alpha,
        flat_lr: cfg.flat_lr,
        ..AmsGrad::default()
    }
}

pub fn fresh_state(encoder: &Encoder) -> Result<OptimState> {
    OptimState::new(encoder.params().iter().filter(|p| p.trainable).map(|p| p.value.shape()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_ms: u128,
}

impl EpochRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}\n", self.epoch, self.train_loss, self.test_loss, self.test_accuracy, self.wall_ms)
    }
}

pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    /// Test loss of the freshly initialized model.
    pub untrained_test_loss: f64,
    pub best_epoch: usize,
    pub threshold: f64,
    pub encoder: Encoder,
    pub state: OptimState,
    pub run_dir: PathBuf,
}

pub fn named_tensors(encoder: &Encoder, state: Option<&OptimState>) -> Vec<(String, crate::tensor::Tensor)> {
    let mut out: Vec<_> = encoder.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    if let Some(s) = state {
        out.extend(checkpoint::optim_tensors(s));
    }
    out
}

fn join(ids: impl IntoIterator<Item = u32>) -> String {
    ids.into_iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Train per `cfg`, writing `metrics.csv`, `config.txt`, `audit.log`,
/// `best.ckpt` and `final.ckpt` under `cfg.output_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let exp = Experiment::prepare(cfg)?;
    train_experiment(cfg, exp)
}

pub fn train_experiment(cfg: &RunConfig, mut exp: Experiment) -> Result<TrainOutcome> {
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.txt"), &cfg.to_text())?;

    let mut encoder = build_encoder(cfg, exp.model_seed)?;
    let opt = optimizer(cfg);
    let mut state = fresh_state(&encoder)?;
    let ds = &exp.dataset;
    let untrained_test_loss = score(&encoder, cfg, ds, &exp.test)?.loss;

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = format!("{METRICS_HEADER}\n");
    write(&metrics_path, &metrics)?;

    let mut train_stream: BTreeSet<u32> = BTreeSet::new();
    let mut fixed: Option<Vec<PairRef>> = None;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let (mut best_loss, mut best_epoch, mut threshold) = (f64::INFINITY, 0, 0.0);
    // Weights only, held in memory and written once: rewriting a checkpoint
    // on every improvement dominated short runs.
    let mut best = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut pairs = match (&fixed, cfg.resample_pairs) {
            (Some(p), false) => p.clone(),
            _ => {
                let p = sample_pairs(ds, &exp.split.train_subjects, cfg.pairs_per_epoch, cfg.pos_ratio, &mut exp.pair_rng)?;
                fixed = Some(p.clone());
                p
            }
        };
        exp.pair_rng.shuffle(&mut pairs);
        train_stream.extend(pairs.iter().flat_map(|p| [ds.images[p.left].subject, ds.images[p.right].subject]));

        let mut total = 0.0;
        for r in batch_ranges(pairs.len(), cfg.batch_size) {
            let batch = PairBatch::materialize(ds, &pairs[r.clone()])?;
            total += train_step(&mut encoder, cfg, &opt, &mut state, &batch, &mut exp.noise_rng)? * r.len() as f64;
        }
        let val = score(&encoder, cfg, ds, &exp.validation)?;
        threshold = select_threshold(&val.distances, &val.labels, cfg.metric).0;
        let test = score(&encoder, cfg, ds, &exp.test)?;
        let row = EpochRow {
            epoch,
            train_loss: total / pairs.len() as f64,
            test_loss: test.loss,
            test_accuracy: accuracy(&test.distances, &test.labels, threshold, cfg.metric),
            wall_ms: if cfg.wall_clock { start.elapsed().as_millis() } else { 0 },
        };
        metrics.push_str(&row.csv());
        write(&metrics_path, &metrics)?;
        if row.test_loss < best_loss {
            best_loss = row.test_loss;
            best_epoch = epoch;
            best = Some(named_tensors(&encoder, None));
        }
        rows.push(row);
    }
    if let Some(b) = &best {
        checkpoint::save(&dir.join("best.ckpt"), b)?;
    }
    checkpoint::save(&dir.join("final.ckpt"), &named_tensors(&encoder, Some(&state)))?;

    let test_stream: BTreeSet<u32> = exp
        .test
        .iter()
        .flat_map(|p| [ds.images[p.left].subject, ds.images[p.right].subject])
        .collect();
    let overlap: Vec<u32> = train_stream.intersection(&test_stream).copied().collect();
    let mut audit = String::new();
    writeln!(audit, "train_subjects = {}", join(exp.split.train_subjects.iter().copied())).unwrap();
    writeln!(audit, "test_subjects = {}", join(exp.split.test_subjects.iter().copied())).unwrap();
    writeln!(audit, "split_disjoint = {}", exp.split.is_disjoint()).unwrap();
    writeln!(audit, "test_pairs_from_holdout = {}", exp.test_is_holdout).unwrap();
    writeln!(audit, "train_stream_subjects = {}", join(train_stream.iter().copied())).unwrap();
    writeln!(audit, "test_stream_subjects = {}", join(test_stream.iter().copied())).unwrap();
    writeln!(audit, "stream_overlap = {}", if overlap.is_empty() { "none".into() } else { join(overlap) }).unwrap();
    writeln!(audit, "untrained_test_loss = {untrained_test_loss}").unwrap();
    writeln!(audit, "best_epoch = {best_epoch}").unwrap();
    writeln!(audit, "threshold = {threshold}").unwrap();
    write(&dir.join("audit.log"), &audit)?;

    Ok(TrainOutcome {
        rows,
        untrained_test_loss,
        best_epoch,
        threshold,
        encoder,
        state,
        run_dir: dir,
    })
}

/// Parse an `audit.log` into `key = value` pairs.
pub fn read_audit(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    super::config::parse_pairs(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_never_end_in_a_singleton() {
        let lens = |n, s| batch_ranges(n, s).iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(lens(10, 4), vec![4, 4, 2]);
        assert_eq!(lens(9, 4), vec![4, 5]);
        assert_eq!(lens(8, 8), vec![8]);
        assert_eq!(lens(3, 8), vec![3]);
    }

    #[test]
    fn missing_dataset_fails_before_model_construction() {
        let cfg = RunConfig::load(None, &["data_dir=/no/such/dir".into()]).unwrap();
        let err = Experiment::prepare(&cfg).err().expect("missing dataset");
        assert!(err.to_string().contains("not found"), "{err}");
    }
}
