//! First-order optimizers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// AMSGrad hyper-parameters. No bias correction is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmsGrad {
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub eps: f64,
    /// Use `alpha` at every step instead of `alpha/√t`.
    pub flat_lr: bool,
}

impl Default for AmsGrad {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            theta1: 0.9,
            theta2: 0.999,
            eps: 1e-8,
            flat_lr: false,
        }
    }
}

/// Per-parameter moments; `t` counts completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub v_hat: Vec<Tensor>,
    pub t: u64,
}

impl OptimState {
    /// Zeroed state matching `shapes`.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let zeros: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect::<Result<_>>()?;
        Ok(Self {
            m: zeros.clone(),
            v: zeros.clone(),
            v_hat: zeros,
            t: 0,
        })
    }
}

impl AmsGrad {
    /// Step size for step number `t` (1-based).
    pub fn rate(&self, t: u64) -> f64 {
        if self.flat_lr {
            self.alpha
        } else {
            self.alpha / (t as f64).sqrt()
        }
    }

    /// One update of every parameter in place:
    /// `m ← θ₁m + (1−θ₁)g`, `v ← θ₂v + (1−θ₂)g²`, `v̂ ← max(v̂, v)`,
    /// `w ← w − α_t·m/(√v̂ + ε)`.
    pub fn step(&self, params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta1) || !(0.0..1.0).contains(&self.theta2) {
            return Err(Error::invalid("amsgrad", "moment decay rates must lie in [0, 1)"));
        }
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::invalid(
                "amsgrad",
                format!("{} params, {} grads, {} state slots", params.len(), grads.len(), state.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
                return Err(Error::mismatch("amsgrad", p.shape(), g.shape()));
            }
        }
        state.t += 1;
        let rate = self.rate(state.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let vh = state.v_hat[i].data_mut();
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.theta1 * m[k] + (1.0 - self.theta1) * gk;
                v[k] = self.theta2 * v[k] + (1.0 - self.theta2) * gk * gk;
                vh[k] = vh[k].max(v[k]);
                *w -= rate * m[k] / (vh[k].sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `w ← w − lr·g`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid("sgd", format!("{} params but {} grads", params.len(), grads.len())));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::mismatch("sgd", p.shape(), g.shape()));
        }
        p.data_mut().iter_mut().zip(g.data()).for_each(|(w, gk)| *w -= lr * gk);
    }
    Ok(())
}
