//! Run configuration.
//!
//! Files are flat `key = value` lines; `#` starts a comment. Precedence, lowest
//! first: built-in defaults, dataset-dependent defaults (`margin`,
//! `routing_iters`), the config file, command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::siamese::{Metric, ModelKind, NormalizeAt, PairLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Att,
    Synthetic,
    Lfw,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Att => "att",
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Lfw => "lfw",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "att" | "orl" => Ok(DatasetKind::Att),
            "synthetic" => Ok(DatasetKind::Synthetic),
            "lfw" => Ok(DatasetKind::Lfw),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    DoubleMargin,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Contrastive => "contrastive",
            LossKind::DoubleMargin => "double_margin",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "double_margin" => Ok(LossKind::DoubleMargin),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Widths {
    Full,
    Reduced,
}

impl fmt::Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Widths::Full => "full",
            Widths::Reduced => "reduced",
        })
    }
}

impl FromStr for Widths {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Widths::Full),
            "reduced" => Ok(Widths::Reduced),
            other => Err(Error::Config(format!("unknown widths '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub dataset: DatasetKind,
    pub loss: LossKind,
    pub metric: Metric,
    /// Contrastive margin `m`.
    pub margin: f64,
    pub m_n: f64,
    pub m_p: f64,
    pub routing_iters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    /// Use a constant step size instead of `alpha/√t`.
    pub flat_lr: bool,
    pub seed: u64,
    /// Subjects held out for testing; ignored when `kfold_k > 0`.
    pub holdout: usize,
    /// `0` disables cross-validation; otherwise train on fold `fold` of `kfold_k`.
    pub kfold_k: usize,
    pub fold: usize,
    pub output_dir: PathBuf,
    /// Dataset root; falls back to `SCN_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    pub pairs_per_epoch: usize,
    pub test_pairs: usize,
    pub pos_ratio: f64,
    /// Draw fresh training pairs every epoch, or reuse the first draw.
    pub resample_pairs: bool,
    pub widths: Widths,
    pub dropout: f64,
    pub input_size: usize,
    pub normalize: NormalizeAt,
    pub batch_norm_primary: bool,
    pub synth_subjects: usize,
    pub synth_per_subject: usize,
    /// Record real elapsed time in `wall_ms`; when off the column is 0.
    pub wall_clock: bool,
}

const KEYS: &[&str] = &[
    "model",
    "dataset",
    "loss",
    "metric",
    "margin",
    "m_n",
    "m_p",
    "routing_iters",
    "epochs",
    "batch_size",
    "alpha",
    "flat_lr",
    "seed",
    "holdout",
    "kfold_k",
    "fold",
    "output_dir",
    "data_dir",
    "pairs_per_epoch",
    "test_pairs",
    "pos_ratio",
    "resample_pairs",
    "widths",
    "dropout",
    "input_size",
    "normalize",
    "batch_norm_primary",
    "synth_subjects",
    "synth_per_subject",
    "wall_clock",
];

fn normalize_name(n: NormalizeAt) -> &'static str {
    match n {
        NormalizeAt::Embedding => "embedding",
        NormalizeAt::Concatenation => "concatenation",
        NormalizeAt::Off => "off",
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for {key}"))),
    }
}

/// Parse `key = value` lines into a map. Later duplicates win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::defaults_for(DatasetKind::Att)
    }
}

impl RunConfig {
    pub fn defaults_for(dataset: DatasetKind) -> Self {
        let lfw = dataset == DatasetKind::Lfw;
        Self {
            model: ModelKind::Scn,
            dataset,
            loss: LossKind::Contrastive,
            metric: Metric::EuclideanSq,
            margin: if lfw { 0.2 } else { 2.0 },
            m_n: 0.2,
            m_p: 0.5,
            routing_iters: if lfw { 6 } else { 4 },
            epochs: 100,
            batch_size: 16,
            alpha: 1e-3,
            flat_lr: false,
            seed: 0,
            holdout: 5,
            kfold_k: 0,
            fold: 0,
            output_dir: PathBuf::from("runs/default"),
            data_dir: None,
            pairs_per_epoch: 2000,
            test_pairs: 400,
            pos_ratio: 0.5,
            resample_pairs: true,
            widths: Widths::Full,
            dropout: 0.2,
            input_size: 100,
            normalize: NormalizeAt::Embedding,
            batch_norm_primary: false,
            synth_subjects: 40,
            synth_per_subject: 10,
            wall_clock: true,
        }
    }

    /// Build from `key = value` settings layered over the defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        let dataset = match map.get("dataset") {
            Some(v) => v.parse()?,
            None => DatasetKind::Att,
        };
        let mut c = Self::defaults_for(dataset);
        for (k, v) in map {
            let v = v.as_str();
            match k.as_str() {
                "model" => c.model = v.parse()?,
                "dataset" => {}
                "loss" => c.loss = v.parse()?,
                "metric" => c.metric = v.parse()?,
                "margin" => c.margin = parse(k, v)?,
                "m_n" => c.m_n = parse(k, v)?,
                "m_p" => c.m_p = parse(k, v)?,
                "routing_iters" => c.routing_iters = parse(k, v)?,
                "epochs" => c.epochs = parse(k, v)?,
                "batch_size" => c.batch_size = parse(k, v)?,
                "alpha" => c.alpha = parse(k, v)?,
                "flat_lr" => c.flat_lr = parse_bool(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                "holdout" => c.holdout = parse(k, v)?,
                "kfold_k" => c.kfold_k = parse(k, v)?,
                "fold" => c.fold = parse(k, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                "data_dir" => c.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "pairs_per_epoch" => c.pairs_per_epoch = parse(k, v)?,
                "test_pairs" => c.test_pairs = parse(k, v)?,
                "pos_ratio" => c.pos_ratio = parse(k, v)?,
                "resample_pairs" => c.resample_pairs = parse_bool(k, v)?,
                "widths" => c.widths = v.parse()?,
                "dropout" => c.dropout = parse(k, v)?,
                "input_size" => c.input_size = parse(k, v)?,
                "normalize" => c.normalize = v.parse()?,
                "batch_norm_primary" => c.batch_norm_primary = parse_bool(k, v)?,
                "synth_subjects" => c.synth_subjects = parse(k, v)?,
                "synth_per_subject" => c.synth_per_subject = parse(k, v)?,
                "wall_clock" => c.wall_clock = parse_bool(k, v)?,
                _ => unreachable!("keys checked above"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Read a config file, then apply `overrides` (`key=value` strings).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut map = match file {
            Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => BTreeMap::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            map.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        Self::from_map(&map)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.margin > 0.0) {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.m_n > 0.0 && self.m_n < self.m_p) {
            return fail(format!("need 0 < m_n < m_p, got m_n={} m_p={}", self.m_n, self.m_p));
        }
        if self.routing_iters == 0 {
            return fail("routing_iters must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 for batch normalization".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.kfold_k == 1 {
            return fail("kfold_k must be 0 (off) or ≥ 2".into());
        }
        if self.kfold_k >= 2 && self.fold >= self.kfold_k {
            return fail(format!("fold {} out of range for kfold_k {}", self.fold, self.kfold_k));
        }
        if self.pairs_per_epoch < 2 || self.test_pairs < 2 {
            return fail("pairs_per_epoch and test_pairs must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.pos_ratio) {
            return fail(format!("pos_ratio must lie in [0, 1], got {}", self.pos_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.input_size < 2 {
            return fail("input_size must be at least 2".into());
        }
        if self.dataset == DatasetKind::Synthetic && (self.synth_subjects < 2 || self.synth_per_subject < 1) {
            return fail("synthetic data needs at least 2 subjects with 1 image each".into());
        }
        Ok(())
    }

    pub fn pair_loss(&self) -> PairLoss {
        match self.loss {
            LossKind::Contrastive => PairLoss::Contrastive { margin: self.margin },
            LossKind::DoubleMargin => PairLoss::DoubleMargin {
                m_n: self.m_n,
                m_p: self.m_p,
            },
        }
    }

    /// Canonical `key = value` form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let data_dir = self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<(&str, String)> = vec![
            ("model", self.model.to_string()),
            ("dataset", self.dataset.to_string()),
            ("loss", self.loss.to_string()),
            ("metric", self.metric.to_string()),
            ("margin", self.margin.to_string()),
            ("m_n", self.m_n.to_string()),
            ("m_p", self.m_p.to_string()),
            ("routing_iters", self.routing_iters.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("alpha", self.alpha.to_string()),
            ("flat_lr", self.flat_lr.to_string()),
            ("seed", self.seed.to_string()),
            ("holdout", self.holdout.to_string()),
            ("kfold_k", self.kfold_k.to_string()),
            ("fold", self.fold.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("data_dir", data_dir),
            ("pairs_per_epoch", self.pairs_per_epoch.to_string()),
            ("test_pairs", self.test_pairs.to_string()),
            ("pos_ratio", self.pos_ratio.to_string()),
            ("resample_pairs", self.resample_pairs.to_string()),
            ("widths", self.widths.to_string()),
            ("dropout", self.dropout.to_string()),
            ("input_size", self.input_size.to_string()),
            ("normalize", normalize_name(self.normalize).to_string()),
            ("batch_norm_primary", self.batch_norm_primary.to_string()),
            ("synth_subjects", self.synth_subjects.to_string()),
            ("synth_per_subject", self.synth_per_subject.to_string()),
            ("wall_clock", self.wall_clock.to_string()),
        ];
        values.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_dependent_defaults() {
        let att = RunConfig::load(None, &[]).unwrap();
        assert_eq!((att.margin, att.routing_iters, att.epochs), (2.0, 4, 100));
        let lfw = RunConfig::load(None, &["dataset=lfw".into()]).unwrap();
        assert_eq!((lfw.margin, lfw.routing_iters), (0.2, 6));
        assert_eq!((lfw.m_n, lfw.m_p), (0.2, 0.5));
        let explicit = RunConfig::load(None, &["dataset=lfw".into(), "margin=1.0".into()]).unwrap();
        assert_eq!(explicit.margin, 1.0);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nepochs = 7\nseed = 3  # trailing\n").unwrap();
        let c = RunConfig::load(Some(&path), &["seed=9".into()]).unwrap();
        assert_eq!((c.epochs, c.seed), (7, 9));
    }

    #[test]
    fn rejects_bad_values() {
        for bad in ["margin=0", "m_n=0.6", "model=resnet", "epochs=zero", "colour=red", "batch_size=1", "kfold_k=1"] {
            assert!(RunConfig::load(None, &[bad.into()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::load(None, &["model=sdropcapnet".into(), "data_dir=/tmp/x".into(), "alpha=0.0005".into()]).unwrap();
        let back = RunConfig::from_map(&parse_pairs(&c.to_text()).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
