//! Parameter registry and the conventional layers: convolution, batch
//! normalization, dense, dropout.

use crate::autodiff::{BatchNormMode, BatchStats, Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Init, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Non-trainable entries (running statistics) are stored and checkpointed
    /// but enter the graph as constants.
    pub trainable: bool,
}

/// Ordered, named collection of every tensor a model owns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Number of trainable scalars whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable && p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Enter every tensor into `graph`; trainable ones as differentiable leaves.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    graph.param(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Bound { graph, vars }
    }

    /// Replace all values from another set with identical names and shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let Some((_, t)) = other.iter().find(|(n, _)| *n == p.name) else {
                return Err(Error::Data(format!("missing tensor {}", p.name)));
            };
            if t.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "tensor {}: shape mismatch, model has {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Graph handles for a [`ParamSet`], aligned by [`ParamId`].
pub struct Bound<'g> {
    graph: &'g Graph,
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    /// Gradient per parameter (zeros for constants and unreached leaves).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.wrt(*v)).collect()
    }
}

/// Layer description for [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize, kernel: usize },
    Dense { inputs: usize, outputs: usize },
    BatchNorm { channels: usize },
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, unit gamma and zero beta.
pub fn init_params(spec: LayerSpec, seed: u64) -> Result<Vec<Tensor>> {
    match spec {
        LayerSpec::Conv { in_ch, out_ch, kernel } => {
            let bound = glorot_bound(in_ch * kernel * kernel, out_ch * kernel * kernel);
            Ok(vec![
                Tensor::new(&[out_ch, in_ch, kernel, kernel], Init::Uniform { lo: -bound, hi: bound, seed })?,
                Tensor::zeros(&[out_ch])?,
            ])
        }
        LayerSpec::Dense { inputs, outputs } => {
            let bound = glorot_bound(inputs, outputs);
            Ok(vec![
                Tensor::new(&[inputs, outputs], Init::Uniform { lo: -bound, hi: bound, seed })?,
                Tensor::zeros(&[outputs])?,
            ])
        }
        LayerSpec::BatchNorm { channels } => Ok(vec![Tensor::new(&[channels], Init::Ones)?, Tensor::zeros(&[channels])?]),
    }
}

/// Square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        size: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let mut t = init_params(LayerSpec::Conv { in_ch, out_ch, kernel: size }, rng.next_u64())?.into_iter();
        let kernel = ps.add(format!("{name}.kernel"), t.next().unwrap(), true);
        let bias = ps.add(format!("{name}.bias"), t.next().unwrap(), true);
        Ok(Self {
            kernel,
            bias,
            in_ch,
            out_ch,
            size,
            stride,
            padding,
        })
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.size * self.size + self.out_ch
    }

    /// Output side length for an input side length, if the kernel fits.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        conv_output_size(input, self.size, self.stride, self.padding)
    }

    pub fn forward<'g>(&self, b: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.conv2d(b.var(self.kernel), b.var(self.bias), self.stride, self.padding)
    }
}

/// `floor((n + 2·pad − k)/stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    (k <= padded && stride > 0).then(|| (padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamSet, name: &str, channels: usize) -> Result<Self> {
        let mut t = init_params(LayerSpec::BatchNorm { channels }, 0)?.into_iter();
        let gamma = ps.add(format!("{name}.gamma"), t.next().unwrap(), true);
        let beta = ps.add(format!("{name}.beta"), t.next().unwrap(), true);
        let running_mean = ps.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])?, false);
        let running_var = ps.add(format!("{name}.running_var"), Tensor::new(&[channels], Init::Ones)?, false);
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<'g>(&self, ps: &ParamSet, b: &Bound<'g>, x: Var<'g>, training: bool) -> Result<(Var<'g>, Option<BatchStats>)> {
        let mode = BatchNormMode {
            training,
            running_mean: ps.get(self.running_mean).data(),
            running_var: ps.get(self.running_var).data(),
            eps: self.eps,
        };
        x.batch_norm(b.var(self.gamma), b.var(self.beta), mode)
    }

    /// Fold batch statistics into the running averages.
    pub fn update_running(&self, ps: &mut ParamSet, stats: &BatchStats) {
        let m = self.momentum;
        for (r, s) in ps.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * s;
        }
        for (r, s) in ps.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = ((1.0 - m) * *r + m * s).max(0.0);
        }
    }
}

/// Fully connected layer `x·W + b` for `x: [N, D]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(ps: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Result<Self> {
        let mut t = init_params(LayerSpec::Dense { inputs, outputs }, rng.next_u64())?.into_iter();
        let weight = ps.add(format!("{name}.weight"), t.next().unwrap(), true);
        let bias = ps.add(format!("{name}.bias"), t.next().unwrap(), true);
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn forward<'g>(&self, b: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        dense_forward(x, b.var(self.weight), b.var(self.bias))
    }
}

pub fn dense_forward<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let k = w.shape()[1];
    if b.shape() != [k] {
        return Err(Error::mismatch("dense", &w.shape(), &b.shape()));
    }
    x.matmul(w)?.add(b.reshape(&[1, k])?)
}

/// Inverted dropout: zero each element with probability `rate`, scale survivors by `1/(1−rate)`.
pub fn dropout<'g>(x: Var<'g>, rate: f64, rng: &mut SplitMix64) -> Result<Var<'g>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect();
    x.mul(x.graph().constant(Tensor::from_vec(&shape, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_geometry() {
        assert_eq!(conv_output_size(100, 9, 3, 0), Some(31));
        assert_eq!(conv_output_size(31, 9, 3, 0), Some(8));
        assert_eq!(conv_output_size(5, 9, 1, 0), None);
        assert_eq!(conv_output_size(5, 9, 1, 2), Some(1));
    }

    #[test]
    fn biases_start_at_zero_and_init_is_seeded() {
        let a = init_params(LayerSpec::Conv { in_ch: 2, out_ch: 3, kernel: 3 }, 5).unwrap();
        let b = init_params(LayerSpec::Conv { in_ch: 2, out_ch: 3, kernel: 3 }, 5).unwrap();
        assert!(a[1].data().iter().all(|&x| x == 0.0));
        assert_eq!(a, b);
        let d = init_params(LayerSpec::Dense { inputs: 4, outputs: 2 }, 1).unwrap();
        assert!(d[1].data().iter().all(|&x| x == 0.0));
        let bn = init_params(LayerSpec::BatchNorm { channels: 3 }, 0).unwrap();
        assert_eq!(bn[0].data(), &[1.0; 3]);
        assert_eq!(bn[1].data(), &[0.0; 3]);
    }

    #[test]
    fn glorot_bound_for_first_conv() {
        let bound = glorot_bound(81, 9 * 9 * 256);
        assert!((bound - (6.0f64 / 20817.0).sqrt()).abs() < 1e-15);
        let w = &init_params(LayerSpec::Conv { in_ch: 1, out_ch: 256, kernel: 9 }, 3).unwrap()[0];
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        let max = w.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max > 0.95 * bound);
    }

    #[test]
    fn dense_parameter_count() {
        let mut ps = ParamSet::new();
        let mut rng = SplitMix64::new(0);
        let d = Dense::new(&mut ps, "fc", 512, 20, &mut rng).unwrap();
        assert_eq!(d.param_count(), 10_260);
        assert_eq!(ps.trainable_count(), 10_260);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[4], Init::Constant(2.0)).unwrap());
        let mut rng = SplitMix64::new(1);
        let y = dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(y.value().data(), &[2.0; 4]);
        assert!(dropout(x, 1.0, &mut rng).is_err());
    }
}
