//! Checkpoint evaluation and distance-density reports.

use std::path::Path;

use super::checkpoint;
use super::config::RunConfig;
use super::train::{build_encoder, score, Experiment, Scored};
use crate::data::MATCH;
use crate::error::{Error, Result};
use crate::siamese::{accuracy, select_threshold, Encoder};

pub const DENSITY_BINS: usize = 50;

/// Per-class histograms of pair distances over shared bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub lo: f64,
    pub hi: f64,
    pub matching: Vec<usize>,
    pub non_matching: Vec<usize>,
}

impl Density {
    /// Bins span `[min, max]` of the observed distances; the last bin is closed.
    pub fn new(distances: &[f64], labels: &[u8], bins: usize) -> Result<Self> {
        if distances.is_empty() || distances.len() != labels.len() || bins == 0 {
            return Err(Error::invalid("density", "need one label per distance and at least one bin"));
        }
        let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let mut matching = vec![0; bins];
        let mut non_matching = vec![0; bins];
        for (&d, &y) in distances.iter().zip(labels) {
            let k = (((d - lo) / (hi - lo)) * bins as f64).floor() as usize;
            let k = k.min(bins - 1);
            if y == MATCH {
                matching[k] += 1;
            } else {
                non_matching[k] += 1;
            }
        }
        Ok(Self {
            lo,
            hi,
            matching,
            non_matching,
        })
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.matching.len() as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }

    /// `Σ_k min(p_k, q_k)` of the two normalized histograms: 1 for identical
    /// class distributions, 0 for separable ones.
    pub fn overlap(&self) -> f64 {
        let (nm, nn) = (self.matching.iter().sum::<usize>(), self.non_matching.iter().sum::<usize>());
        if nm == 0 || nn == 0 {
            return 0.0;
        }
        self.matching
            .iter()
            .zip(&self.non_matching)
            .map(|(&a, &b)| (a as f64 / nm as f64).min(b as f64 / nn as f64))
            .sum()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("bin,lo,hi,matching,non_matching\n");
        for k in 0..self.matching.len() {
            let (a, b) = self.bin_edges(k);
            out.push_str(&format!("{k},{a},{b},{},{}\n", self.matching[k], self.non_matching[k]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: usize,
    pub loss: f64,
    pub threshold: f64,
    pub accuracy: f64,
    pub density: Density,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        format!(
            "pairs,loss,threshold,accuracy,overlap\n{},{},{},{},{}\n",
            self.pairs,
            self.loss,
            self.threshold,
            self.accuracy,
            self.density.overlap()
        )
    }
}

/// Score the experiment's test pairs, picking the threshold on its validation slice.
pub fn evaluate(encoder: &Encoder, cfg: &RunConfig, exp: &Experiment) -> Result<EvalReport> {
    let val = score(encoder, cfg, &exp.dataset, &exp.validation)?;
    let threshold = select_threshold(&val.distances, &val.labels, cfg.metric).0;
    let Scored { distances, labels, loss } = score(encoder, cfg, &exp.dataset, &exp.test)?;
    Ok(EvalReport {
        pairs: labels.len(),
        loss,
        threshold,
        accuracy: accuracy(&distances, &labels, threshold, cfg.metric),
        density: Density::new(&distances, &labels, DENSITY_BINS)?,
    })
}

/// Load `checkpoint` into a model built from `cfg` and write `eval.csv` and
/// `density.csv` into `cfg.output_dir`.
pub fn cmd_eval(checkpoint_path: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    let exp = Experiment::prepare(cfg)?;
    let mut encoder = build_encoder(cfg, exp.model_seed)?;
    let (tensors, _) = checkpoint::split_optim(checkpoint::load(checkpoint_path)?)?;
    encoder.params_mut().load_from(&tensors)?;
    let report = evaluate(&encoder, cfg, &exp)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let eval_path = dir.join("eval.csv");
    std::fs::write(&eval_path, report.csv()).map_err(|e| Error::io(&eval_path, e))?;
    let density_path = dir.join("density.csv");
    std::fs::write(&density_path, report.density.csv()).map_err(|e| Error::io(&density_path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_sum_to_pairs() {
        let d: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<u8> = (0..37).map(|i| (i % 3 == 0) as u8).collect();
        let h = Density::new(&d, &y, DENSITY_BINS).unwrap();
        assert_eq!(h.matching.iter().sum::<usize>(), y.iter().filter(|&&l| l == MATCH).count());
        assert_eq!(h.matching.iter().sum::<usize>() + h.non_matching.iter().sum::<usize>(), 37);
        assert_eq!(h.csv().lines().count(), DENSITY_BINS + 1);
    }

    #[test]
    fn overlap_extremes() {
        let same = Density::new(&[0.1, 0.1, 0.9, 0.9], &[0, 1, 0, 1], 10).unwrap();
        assert!((same.overlap() - 1.0).abs() < 1e-12);
        let apart = Density::new(&[0.0, 0.1, 0.9, 1.0], &[0, 0, 1, 1], 10).unwrap();
        assert_eq!(apart.overlap(), 0.0);
    }
}
