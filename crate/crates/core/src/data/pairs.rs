//! Matching / non-matching pair sampling.

use super::dataset::FaceDataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Label for two images of the same subject.
pub const MATCH: u8 = 0;
/// Label for two images of different subjects.
pub const NON_MATCH: u8 = 1;

/// Indices into `FaceDataset::images`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub left: usize,
    pub right: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    /// `[N, 1, H, W]`.
    pub left: Tensor,
    /// `[N, 1, H, W]`.
    pub right: Tensor,
    pub labels: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn materialize(ds: &FaceDataset, pairs: &[PairRef]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("empty pair batch".into()));
        }
        let left: Vec<&Tensor> = pairs.iter().map(|p| &ds.images[p.left].image).collect();
        let right: Vec<&Tensor> = pairs.iter().map(|p| &ds.images[p.right].image).collect();
        Ok(Self {
            left: Tensor::stack(&left)?,
            right: Tensor::stack(&right)?,
            labels: pairs.iter().map(|p| p.label).collect(),
        })
    }
}

/// Draw `n_pairs` pairs from the images of `subjects`: `round(n_pairs·pos_ratio)`
/// matching pairs of two distinct images, the rest across distinct subjects,
/// in shuffled order.
pub fn sample_pairs(ds: &FaceDataset, subjects: &[u32], n_pairs: usize, pos_ratio: f64, rng: &mut SplitMix64) -> Result<Vec<PairRef>> {
    if !(0.0..=1.0).contains(&pos_ratio) {
        return Err(Error::Data(format!("pos_ratio {pos_ratio} outside [0, 1]")));
    }
    let groups: Vec<Vec<usize>> = subjects
        .iter()
        .map(|&s| ds.images_of(s))
        .filter(|g| !g.is_empty())
        .collect();
    let n_pos = (n_pairs as f64 * pos_ratio).round() as usize;
    let n_neg = n_pairs - n_pos;
    let multi: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).collect();
    if n_pos > 0 && multi.is_empty() {
        return Err(Error::Data("no subject has two images for a matching pair".into()));
    }
    if n_neg > 0 && groups.len() < 2 {
        return Err(Error::Data("non-matching pairs need at least two subjects".into()));
    }

    let mut out = Vec::with_capacity(n_pairs);
    for _ in 0..n_pos {
        let g = multi[rng.below(multi.len())];
        let a = rng.below(g.len());
        let b = (a + 1 + rng.below(g.len() - 1)) % g.len();
        out.push(PairRef {
            left: g[a],
            right: g[b],
            label: MATCH,
        });
    }
    for _ in 0..n_neg {
        let a = rng.below(groups.len());
        let b = (a + 1 + rng.below(groups.len() - 1)) % groups.len();
        let (ga, gb) = (&groups[a], &groups[b]);
        out.push(PairRef {
            left: ga[rng.below(ga.len())],
            right: gb[rng.below(gb.len())],
            label: NON_MATCH,
        });
    }
    rng.shuffle(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_dataset_sized;

    #[test]
    fn balance_and_distinctness() {
        let ds = synth_dataset_sized(6, 3, 8, 8, 5);
        let subjects = ds.subjects();
        let mut rng = SplitMix64::new(1);
        let pairs = sample_pairs(&ds, &subjects, 100, 0.5, &mut rng).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.label == MATCH).count(), 50);
        for p in &pairs {
            assert_ne!(p.left, p.right);
            let same = ds.images[p.left].subject == ds.images[p.right].subject;
            assert_eq!(same, p.label == MATCH);
        }
        let all_pos = sample_pairs(&ds, &subjects, 7, 1.0, &mut rng).unwrap();
        assert!(all_pos.iter().all(|p| p.label == MATCH));
    }

    #[test]
    fn singleton_subjects_cannot_match() {
        let ds = synth_dataset_sized(3, 1, 8, 8, 5);
        let mut rng = SplitMix64::new(1);
        assert!(sample_pairs(&ds, &ds.subjects(), 4, 0.5, &mut rng).is_err());
        assert!(sample_pairs(&ds, &ds.subjects(), 4, 0.0, &mut rng).is_ok());
    }

    #[test]
    fn batch_shapes() {
        let ds = synth_dataset_sized(3, 2, 8, 6, 5);
        let mut rng = SplitMix64::new(2);
        let pairs = sample_pairs(&ds, &ds.subjects(), 4, 0.5, &mut rng).unwrap();
        let b = PairBatch::materialize(&ds, &pairs).unwrap();
        assert_eq!(b.left.shape(), &[4, 1, 8, 6]);
        assert_eq!(b.len(), 4);
    }
}
