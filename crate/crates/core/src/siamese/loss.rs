//! Embedding distances, pairwise losses and the match decision rule.
//!
//! Pair labels follow the contrastive convention: `0` = same subject,
//! `1` = different subjects.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `‖e1 − e2‖²`
    EuclideanSq,
    /// `exp(−‖e1 − e2‖₁)`, a similarity in `(0, 1]`.
    ManhattanExp,
    /// `1 − cos(e1, e2)`
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::EuclideanSq, Metric::ManhattanExp, Metric::Cosine];

    /// Whether larger values mean "more alike".
    pub fn is_similarity(self) -> bool {
        matches!(self, Metric::ManhattanExp)
    }

    /// Value range on unit-norm embeddings, used for threshold sweeps and histograms.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::EuclideanSq => (0.0, 4.0),
            Metric::ManhattanExp => (0.0, 1.0),
            Metric::Cosine => (0.0, 2.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::EuclideanSq => "euclidean_sq",
            Metric::ManhattanExp => "manhattan_exp",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean_sq" | "euclidean" => Ok(Metric::EuclideanSq),
            "manhattan_exp" | "manhattan" => Ok(Metric::ManhattanExp),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Per-pair distance `[N]` between embeddings `[N, K]`.
pub fn distance<'g>(e1: Var<'g>, e2: Var<'g>, metric: Metric) -> Result<Var<'g>> {
    let (s1, s2) = (e1.shape(), e2.shape());
    if s1 != s2 || s1.len() != 2 {
        return Err(Error::mismatch("distance", &s1, &s2));
    }
    let n = s1[0];
    let per_row = match metric {
        Metric::EuclideanSq => e1.sub(e2)?.square().sum(1)?,
        Metric::ManhattanExp => e1.sub(e2)?.abs().sum(1)?.neg().exp(),
        Metric::Cosine => e1.l2norm(1)?.mul(e2.l2norm(1)?)?.sum(1)?.affine(-1.0, 1.0),
    };
    per_row.reshape(&[n])
}

/// Labels as a constant `[N]` tensor.
pub fn label_tensor<'g>(graph: &'g crate::autodiff::Graph, labels: &[u8]) -> Result<Var<'g>> {
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels", "pair labels must be 0 or 1"));
    }
    Ok(graph.constant(Tensor::from_vec(&[labels.len()], labels.iter().map(|&y| y as f64).collect())?))
}

fn check_batch(op: &'static str, d: &Var<'_>, labels: &[u8]) -> Result<()> {
    let s = d.shape();
    if s != [labels.len()] {
        return Err(Error::mismatch(op, &s, &[labels.len()]));
    }
    Ok(())
}

/// Mean over the batch of `½(1−y)·D + ½·y·max(0, m − D)`.
pub fn contrastive_loss<'g>(d: Var<'g>, labels: &[u8], margin: f64) -> Result<Var<'g>> {
    check_batch("contrastive_loss", &d, labels)?;
    if !(margin > 0.0) {
        return Err(Error::invalid("contrastive_loss", format!("margin must be positive, got {margin}")));
    }
    let g = d.graph();
    let y = label_tensor(g, labels)?;
    let match_term = y.affine(-1.0, 1.0).mul(d)?;
    let hinge = d.affine(-1.0, margin).relu();
    let other_term = y.mul(hinge)?;
    Ok(match_term.add(other_term)?.scale(0.5).mean_all())
}

/// Mean over the batch of `(1−y)·max(0, D − m_n)² + y·max(m_p − D, 0)²`.
pub fn double_margin_loss<'g>(d: Var<'g>, labels: &[u8], m_n: f64, m_p: f64) -> Result<Var<'g>> {
    check_batch("double_margin_loss", &d, labels)?;
    if !(0.0 < m_n && m_n < m_p) {
        return Err(Error::invalid("double_margin_loss", format!("need 0 < m_n < m_p, got m_n={m_n}, m_p={m_p}")));
    }
    let y = label_tensor(d.graph(), labels)?;
    let near = d.add_scalar(-m_n).relu().square();
    let far = d.affine(-1.0, m_p).relu().square();
    Ok(y.affine(-1.0, 1.0).mul(near)?.add(y.mul(far)?)?.mean_all())
}

/// Verification objective selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairLoss {
    Contrastive { margin: f64 },
    DoubleMargin { m_n: f64, m_p: f64 },
}

impl PairLoss {
    /// Loss on raw metric output. Similarity metrics are turned into the
    /// distance `1 − D` first so that matching pairs are pulled to zero.
    pub fn eval<'g>(&self, d: Var<'g>, labels: &[u8], metric: Metric) -> Result<Var<'g>> {
        let d = if metric.is_similarity() { d.affine(-1.0, 1.0) } else { d };
        match *self {
            PairLoss::Contrastive { margin } => {
                if metric.is_similarity() && margin > 1.0 {
                    return Err(Error::invalid("contrastive_loss", format!("margin {margin} outside (0, 1] for {metric}")));
                }
                contrastive_loss(d, labels, margin)
            }
            PairLoss::DoubleMargin { m_n, m_p } => double_margin_loss(d, labels, m_n, m_p),
        }
    }

    /// Midpoint decision threshold suggested by the margins, in metric units.
    pub fn default_threshold(&self, metric: Metric) -> f64 {
        let t = match *self {
            PairLoss::Contrastive { margin } => margin / 2.0,
            PairLoss::DoubleMargin { m_n, m_p } => (m_n + m_p) / 2.0,
        };
        if metric.is_similarity() {
            1.0 - t
        } else {
            t
        }
    }
}

/// Capsule margin loss over class capsules `[N, C, d]`, summed over classes
/// and averaged over the batch.
pub fn margin_loss<'g>(v: Var<'g>, targets: &[usize], m_plus: f64, lambda: f64) -> Result<Var<'g>> {
    let s = v.shape();
    if s.len() != 3 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
        return Err(Error::invalid("margin_loss", format!("targets {targets:?} do not fit capsules {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    let m_minus = 1.0 - m_plus;
    let lengths = v.square().sum(2)?.sqrt().reshape(&[n, c])?;
    let mut onehot = vec![0.0; n * c];
    for (i, &t) in targets.iter().enumerate() {
        onehot[i * c + t] = 1.0;
    }
    let t = v.graph().constant(Tensor::from_vec(&[n, c], onehot)?);
    let present = lengths.affine(-1.0, m_plus).relu().square();
    let absent = lengths.add_scalar(-m_minus).relu().square();
    let per = t.mul(present)?.add(t.affine(-1.0, 1.0).mul(absent)?.scale(lambda))?;
    Ok(per.sum_all().scale(1.0 / n as f64))
}

/// Spread loss over activations `[N, C]`: `Σ_{i≠t} max(0, m − (a_t − a_i))²`,
/// averaged over the batch.
pub fn spread_loss<'g>(a: Var<'g>, targets: &[usize], margin: f64) -> Result<Var<'g>> {
    let s = a.shape();
    if s.len() != 2 || s[0] != targets.len() || targets.iter().any(|&t| t >= s[1]) {
        return Err(Error::invalid("spread_loss", format!("targets {targets:?} do not fit activations {s:?}")));
    }
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::invalid("spread_loss", format!("margin {margin} outside (0, 1]")));
    }
    let (n, c) = (s[0], s[1]);
    let mut onehot = vec![0.0; n * c];
    for (i, &t) in targets.iter().enumerate() {
        onehot[i * c + t] = 1.0;
    }
    let t = a.graph().constant(Tensor::from_vec(&[n, c], onehot)?);
    let target_act = t.mul(a)?.sum(1)?;
    let gap = target_act.sub(a)?.affine(-1.0, margin).relu().square();
    let others = t.affine(-1.0, 1.0).mul(gap)?;
    Ok(others.sum_all().scale(1.0 / n as f64))
}

/// Spread-loss margin schedule: linear from 0.2 to 0.9 over `total` steps.
pub fn spread_margin(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.9;
    }
    0.2 + 0.7 * (step.min(total) as f64 / total as f64)
}

/// Distances below (similarities above) `threshold` are predicted matches.
pub fn predict_match(d: &[f64], threshold: f64, metric: Metric) -> Vec<bool> {
    d.iter()
        .map(|&x| if metric.is_similarity() { x > threshold } else { x < threshold })
        .collect()
}

/// Fraction of pairs whose prediction agrees with the label.
pub fn accuracy(d: &[f64], labels: &[u8], threshold: f64, metric: Metric) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let hits = predict_match(d, threshold, metric)
        .iter()
        .zip(labels)
        .filter(|(&pred, &y)| pred == (y == 0))
        .count();
    hits as f64 / d.len() as f64
}

pub const SWEEP_POINTS: usize = 101;

/// Best threshold over an evenly spaced sweep of the metric range (first
/// maximum wins), with its accuracy.
pub fn select_threshold(d: &[f64], labels: &[u8], metric: Metric) -> (f64, f64) {
    let (lo, hi) = metric.range();
    let mut best = (lo, f64::NEG_INFINITY);
    for k in 0..SWEEP_POINTS {
        let th = lo + (hi - lo) * k as f64 / (SWEEP_POINTS - 1) as f64;
        let acc = accuracy(d, labels, th, metric);
        if acc > best.1 {
            best = (th, acc);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn vec_var<'g>(g: &'g Graph, shape: &[usize], data: Vec<f64>) -> Var<'g> {
        g.constant(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn identical_embeddings() {
        let g = Graph::new();
        let e = vec_var(&g, &[1, 3], vec![0.6, 0.8, 0.0]);
        let d = |m| distance(e, e, m).unwrap().value().data()[0];
        assert_eq!(d(Metric::EuclideanSq), 0.0);
        assert_eq!(d(Metric::ManhattanExp), 1.0);
        assert!(d(Metric::Cosine).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_unit_vectors() {
        let g = Graph::new();
        let a = vec_var(&g, &[1, 3], vec![1.0, 0.0, 0.0]);
        let b = vec_var(&g, &[1, 3], vec![0.0, 1.0, 0.0]);
        assert_eq!(distance(a, b, Metric::EuclideanSq).unwrap().value().data(), &[2.0]);
        assert!((distance(a, b, Metric::Cosine).unwrap().value().data()[0] - 1.0).abs() < 1e-15);
        assert!(distance(a, vec_var(&g, &[1, 2], vec![1.0, 0.0]), Metric::Cosine).is_err());
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert!("hamming".parse::<Metric>().is_err());
        for m in Metric::ALL {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn contrastive_cases() {
        let g = Graph::new();
        let loss = |d: f64, y: u8, m: f64| contrastive_loss(vec_var(&g, &[1], vec![d]), &[y], m).unwrap().item();
        assert_eq!(loss(0.0, 0, 2.0), 0.0);
        assert_eq!(loss(0.0, 1, 2.0), 1.0);
        assert_eq!(loss(3.0, 1, 2.0), 0.0);
    }

    #[test]
    fn double_margin_cases() {
        let g = Graph::new();
        let loss = |d: f64, y: u8| double_margin_loss(vec_var(&g, &[1], vec![d]), &[y], 0.2, 0.5).unwrap().item();
        assert_eq!(loss(0.1, 0), 0.0);
        assert_eq!(loss(0.6, 1), 0.0);
        assert_eq!(loss(0.0, 1), 0.25);
        assert!(double_margin_loss(vec_var(&g, &[1], vec![0.0]), &[0], 0.5, 0.5).is_err());
    }

    #[test]
    fn margin_loss_cases() {
        let g = Graph::new();
        // capsule 0 is the target with length 0.9, capsule 1 has length 0.1
        let v = vec_var(&g, &[1, 2, 2], vec![0.9, 0.0, 0.0, 0.1]);
        assert!(margin_loss(v, &[0], 0.9, 0.5).unwrap().item().abs() < 1e-15);
        let v = vec_var(&g, &[1, 1, 2], vec![0.0, 0.0]);
        assert!((margin_loss(v, &[0], 0.9, 0.5).unwrap().item() - 0.81).abs() < 1e-12);
        let v = vec_var(&g, &[1, 2, 2], vec![0.9, 0.0, 1.0, 0.0]);
        assert!((margin_loss(v, &[0], 0.9, 0.5).unwrap().item() - 0.405).abs() < 1e-12);
    }

    #[test]
    fn spread_loss_cases() {
        let g = Graph::new();
        let a = vec_var(&g, &[1, 3], vec![0.9, 0.1, 0.0]);
        assert_eq!(spread_loss(a, &[0], 0.5).unwrap().item(), 0.0);
        let a = vec_var(&g, &[1, 2], vec![0.4, 0.4]);
        assert_eq!(spread_loss(a, &[0], 1.0).unwrap().item(), 1.0);
        assert_eq!(spread_margin(0, 10), 0.2);
        assert!((spread_margin(5, 10) - 0.55).abs() < 1e-15);
        assert!((spread_margin(10, 10) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn match_rule_is_strict() {
        assert_eq!(predict_match(&[0.0, 1.0], 1.0, Metric::EuclideanSq), vec![true, false]);
        assert_eq!(predict_match(&[0.9, 1.0], 0.9, Metric::ManhattanExp), vec![false, true]);
    }

    #[test]
    fn threshold_sweep_separates_clean_data() {
        let d = [0.1, 0.2, 3.0, 3.5];
        let y = [0, 0, 1, 1];
        let (th, acc) = select_threshold(&d, &y, Metric::EuclideanSq);
        assert_eq!(acc, 1.0);
        assert!(th > 0.2 && th <= 3.0);
        assert_eq!(select_threshold(&d, &y, Metric::EuclideanSq), (th, acc));
    }
}
