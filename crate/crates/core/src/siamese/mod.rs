//! The pairwise verification model: two tied-weight encoder branches, a
//! distance between their embeddings, and a pair loss.

mod encoder;
mod loss;

pub use encoder::{Embedding, Encoded, Encoder, Mode, ModelKind, NormalizeAt, ScnConfig, ScnEncoder, StandardConfig, StandardEncoder};
pub use loss::{
    accuracy, contrastive_loss, distance, double_margin_loss, label_tensor, margin_loss, predict_match, select_threshold, spread_loss,
    spread_margin, Metric, PairLoss, SWEEP_POINTS,
};

use crate::autodiff::{BatchStats, Var};
use crate::error::Result;
use crate::layers::Bound;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub struct PairOutput<'g> {
    pub distance: Var<'g>,
    pub loss: Var<'g>,
    /// Left-branch statistics followed by right-branch statistics.
    pub batch_stats: Vec<BatchStats>,
}

/// Encode both sides with the same bound parameters and score the pairs.
#[allow(clippy::too_many_arguments)]
pub fn pair_forward<'g>(
    encoder: &Encoder,
    b: &Bound<'g>,
    left: &Tensor,
    right: &Tensor,
    labels: &[u8],
    loss: PairLoss,
    metric: Metric,
    mode: Mode,
    rng: &mut SplitMix64,
) -> Result<PairOutput<'g>> {
    let graph = b.graph();
    let l = encoder.encode(b, graph.constant(left.clone()), mode, rng)?;
    let r = encoder.encode(b, graph.constant(right.clone()), mode, rng)?;
    let d = distance(l.embedding.vec, r.embedding.vec, metric)?;
    let value = loss.eval(d, labels, metric)?;
    let mut batch_stats = l.batch_stats;
    batch_stats.extend(r.batch_stats);
    Ok(PairOutput {
        distance: d,
        loss: value,
        batch_stats,
    })
}
