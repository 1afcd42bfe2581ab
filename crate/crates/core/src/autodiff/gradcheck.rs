//! Central finite-difference gradient checking.

use super::{Faults, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient-check configuration.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_coords: Option<usize>,
    pub faults: Faults,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
            faults: Faults::default(),
        }
    }
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    /// Max over checked coordinates of `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`.
    ///
    /// `f` must be deterministic: stochastic masks have to be frozen by the caller.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<f64>
    where
        F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
    {
        if !(1e-7..=1e-3).contains(&self.eps) {
            return Err(Error::invalid("grad_check", format!("eps {} outside [1e-7, 1e-3]", self.eps)));
        }
        let graph = Graph::with_faults(self.faults);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
        let loss = f(&graph, &vars)?;
        let grads = graph.backward(loss)?;
        let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

        let eval = |probe: &[Tensor]| -> Result<f64> {
            let g = Graph::with_faults(self.faults);
            let vs: Vec<Var<'_>> = probe.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&g, &vs)?;
            if out.shape() != [1] {
                return Err(Error::NonScalarLoss(out.shape()));
            }
            Ok(out.item())
        };

        let mut worst = 0.0f64;
        let mut probe = inputs.to_vec();
        for (which, input) in inputs.iter().enumerate() {
            let len = input.len();
            let step = match self.max_coords {
                Some(m) if m > 0 && len > m => len.div_ceil(m),
                _ => 1,
            };
            for idx in (0..len).step_by(step) {
                let orig = input.data()[idx];
                probe[which].data_mut()[idx] = orig + self.eps;
                let plus = eval(&probe)?;
                probe[which].data_mut()[idx] = orig - self.eps;
                let minus = eval(&probe)?;
                probe[which].data_mut()[idx] = orig;
                let fd = (plus - minus) / (2.0 * self.eps);
                let ad = analytic[which].data()[idx];
                let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    }
}

/// Single-input convenience form of [`GradCheck::run`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    GradCheck::new(eps).run(|g, v| f(g, v[0]), std::slice::from_ref(x))
}
