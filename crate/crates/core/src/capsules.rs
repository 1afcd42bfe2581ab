//! Capsule primitives: squash, routing-by-agreement, the primary and face
//! capsule layers, and the concrete-dropout relaxation applied to final
//! capsules.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{Bound, Conv2d, ParamId, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Init, Tensor};

/// Output nonlinearity of a routed capsule layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `v = ‖s‖²/(1+‖s‖²) · s/‖s‖`
    Squash,
    /// Elementwise `tanh(s)`.
    Tanh,
}

impl Activation {
    pub fn apply<'g>(self, s: Var<'g>, axis: usize) -> Result<Var<'g>> {
        match self {
            Activation::Squash => squash(s, axis),
            Activation::Tanh => Ok(s.tanh()),
        }
    }
}

pub fn squash(s: Var<'_>, axis: usize) -> Result<Var<'_>> {
    s.squash(axis)
}

/// Lower-level capsule poses `[N, n_caps, d]` with their spatial provenance.
/// Capsule index is `(y·grid_w + x)·n_types + type`.
#[derive(Debug, Clone, Copy)]
pub struct CapsuleGrid<'g> {
    pub poses: Var<'g>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_types: usize,
}

impl CapsuleGrid<'_> {
    pub fn n_caps(&self) -> usize {
        self.grid_h * self.grid_w * self.n_types
    }

    pub fn dim(&self) -> usize {
        self.poses.shape()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingOptions {
    pub iterations: usize,
    pub activation: Activation,
    /// Stop gradients through the log-prior updates.
    pub detach_routing: bool,
}

impl RoutingOptions {
    pub fn new(iterations: usize, activation: Activation) -> Self {
        Self {
            iterations,
            activation,
            detach_routing: false,
        }
    }
}

/// Snapshot of routing after the final iteration.
#[derive(Debug, Clone)]
pub struct RoutingState {
    /// Log priors `b` `[N, n_lower, n_upper]` as used by the final softmax.
    pub logits: Tensor,
    /// Coupling coefficients `c` of the final iteration.
    pub coupling: Tensor,
    pub iterations: usize,
    /// Coupling coefficients of every iteration, in order.
    pub history: Vec<Tensor>,
}

/// Routing-by-agreement over prediction vectors `û` `[N, n_lower, n_upper, d]`.
///
/// Log priors start at zero on every call. Each iteration computes
/// `c = softmax_j(b)`, `s_j = Σ_i c_ij û_{j|i}`, `v_j = act(s_j)`; all but the
/// last then add the agreement `v_j·û_{j|i}` to `b_ij`.
pub fn dynamic_route<'g>(u_hat: Var<'g>, opts: RoutingOptions) -> Result<(Var<'g>, RoutingState)> {
    if opts.iterations < 1 {
        return Err(Error::invalid("dynamic_route", "iterations must be at least 1"));
    }
    let shape = u_hat.shape();
    if shape.len() != 4 {
        return Err(Error::invalid("dynamic_route", format!("votes must be [N, n_lower, n_upper, d], got {shape:?}")));
    }
    let graph = u_hat.graph();
    let mut logits = graph.constant(Tensor::zeros(&shape[..3])?);
    let mut history = Vec::with_capacity(opts.iterations);
    let mut last = None;
    for it in 0..opts.iterations {
        let coupling = logits.softmax(2)?;
        history.push(coupling.value());
        let s = coupling.vote_sum(u_hat)?;
        let v = opts.activation.apply(s, 2)?;
        if it + 1 < opts.iterations {
            let agree = if opts.detach_routing {
                u_hat.detach().agreement(v.detach())?
            } else {
                u_hat.agreement(v)?
            };
            logits = logits.add(agree)?;
        }
        last = Some((v, logits, coupling));
    }
    let (v, logits, coupling) = last.expect("at least one iteration");
    let state = RoutingState {
        logits: logits.value(),
        coupling: coupling.value(),
        iterations: opts.iterations,
        history,
    };
    Ok((v, state))
}

/// Convolutional primary capsules: `dim` parallel convolutions with
/// `n_types` output maps each, stacked into `dim`-vectors and squashed.
///
/// All `dim` convolutions live in one kernel; output channel `k·n_types + t`
/// is pose component `k` of capsule type `t`.
#[derive(Debug, Clone, Copy)]
pub struct PrimaryCapsules {
    pub conv: Conv2d,
    pub dim: usize,
    pub n_types: usize,
}

impl PrimaryCapsules {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        dim: usize,
        n_types: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let conv = Conv2d::new(ps, name, in_ch, dim * n_types, kernel, stride, 0, rng)?;
        Ok(Self { conv, dim, n_types })
    }

    /// `dim · (k·k·in_ch·n_types + n_types)`.
    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    /// Weights of a single pose-component convolution (no biases).
    pub fn weights_per_dim(&self) -> usize {
        self.conv.size * self.conv.size * self.conv.in_ch * self.n_types
    }

    pub fn forward<'g>(&self, b: &Bound<'g>, features: Var<'g>) -> Result<CapsuleGrid<'g>> {
        let fs = features.shape();
        if fs.len() != 4 || fs[1] != self.conv.in_ch {
            return Err(Error::invalid(
                "primary_capsules",
                format!("expected [N, {}, H, W] features, got {fs:?}", self.conv.in_ch),
            ));
        }
        let maps = self.conv.forward(b, features)?;
        let ms = maps.shape();
        let (n, h, w) = (ms[0], ms[2], ms[3]);
        let poses = maps
            .reshape(&[n, self.dim, self.n_types, h, w])?
            .permute(&[0, 3, 4, 2, 1])?
            .reshape(&[n, h * w * self.n_types, self.dim])?
            .squash(2)?;
        Ok(CapsuleGrid {
            poses,
            grid_h: h,
            grid_w: w,
            n_types: self.n_types,
        })
    }
}

/// Fully routed capsule layer with transforms `W` `[n_lower, n_upper, d_in, d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct CapsuleLayer {
    pub weight: ParamId,
    pub n_lower: usize,
    pub n_upper: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
}

impl CapsuleLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        n_lower: usize,
        n_upper: usize,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let bound = crate::layers::glorot_bound(d_in, d_out);
        let w = Tensor::new(
            &[n_lower, n_upper, d_in, d_out],
            Init::Uniform {
                lo: -bound,
                hi: bound,
                seed: rng.next_u64(),
            },
        )?;
        let weight = ps.add(format!("{name}.weight"), w, true);
        Ok(Self {
            weight,
            n_lower,
            n_upper,
            d_in,
            d_out,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.n_lower * self.n_upper * self.d_in * self.d_out
    }

    /// Returns parent poses `[N, n_upper, d_out]`.
    pub fn forward<'g>(&self, b: &Bound<'g>, grid: &CapsuleGrid<'g>, iterations: usize, detach_routing: bool) -> Result<(Var<'g>, RoutingState)> {
        let ps = grid.poses.shape();
        if ps[1] != self.n_lower || ps[2] != self.d_in {
            return Err(Error::invalid(
                "capsule_layer",
                format!("expected poses [N, {}, {}], got {ps:?}", self.n_lower, self.d_in),
            ));
        }
        let votes = grid.poses.capsule_predict(b.var(self.weight))?;
        let opts = RoutingOptions {
            iterations,
            activation: self.activation,
            detach_routing,
        };
        dynamic_route(votes, opts)
    }
}

/// Which algebraic form of the concrete relaxation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcreteForm {
    /// `σ((logit p + logit u)/t)`: the relaxed Bernoulli, `E[z̃] → p` as `t → 0`.
    #[default]
    Standard,
    /// `σ(logit(p)/t + logit(u))`: the temperature scales only the `p` term.
    TemperatureOnP,
}

/// Relaxed keep-mask `z̃` for per-capsule keep probabilities `p` given
/// uniform noise `u` and temperature `t`. `p` may broadcast over `u`'s
/// size-1-free axes (e.g. `[1, K]` against `[N, K]`).
pub fn concrete_dropout_mask<'g>(p: Var<'g>, u: &Tensor, t: f64, form: ConcreteForm) -> Result<Var<'g>> {
    if !(t > 0.0) {
        return Err(Error::invalid("concrete_dropout", format!("temperature must be positive, got {t}")));
    }
    let fits = crate::autodiff::shape::broadcast_shape("concrete_dropout", &p.shape(), u.shape())?;
    if fits != u.shape() {
        return Err(Error::mismatch("concrete_dropout", &p.shape(), u.shape()));
    }
    let inside = |x: f64| x > 0.0 && x < 1.0;
    if !p.value().data().iter().all(|&x| inside(x)) {
        return Err(Error::invalid("concrete_dropout", "keep probabilities must lie strictly inside (0, 1)"));
    }
    if !u.data().iter().all(|&x| inside(x)) {
        return Err(Error::invalid("concrete_dropout", "noise must lie strictly inside (0, 1)"));
    }
    let noise_logit = u.map(|x| x.ln() - (1.0 - x).ln());
    let noise = p.graph().constant(noise_logit);
    let p_logit = p.log().sub(p.affine(-1.0, 1.0).log())?;
    let pre = match form {
        ConcreteForm::Standard => p_logit.add(noise)?.scale(1.0 / t),
        ConcreteForm::TemperatureOnP => p_logit.scale(1.0 / t).add(noise)?,
    };
    Ok(pre.sigmoid())
}

/// Uniform noise for [`concrete_dropout_mask`], clamped to `[1e-7, 1 − 1e-7]`.
pub fn concrete_noise(shape: &[usize], rng: &mut SplitMix64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.next_f64().clamp(1e-7, 1.0 - 1e-7)).collect())
}
