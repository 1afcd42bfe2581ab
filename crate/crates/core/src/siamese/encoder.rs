//! Tied-weight encoders: the capsule encoder and the plain CNN baseline.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{BatchStats, Var};
use crate::capsules::{concrete_dropout_mask, concrete_noise, Activation, CapsuleLayer, ConcreteForm, PrimaryCapsules, RoutingState};
use crate::error::{Error, Result};
use crate::layers::{conv_output_size, dropout, BatchNorm, Bound, Conv2d, Dense, ParamId, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Init, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Scn,
    /// Capsule encoder with learned concrete dropout on the final capsules.
    SDropCapNet,
    Standard,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Scn => "scn",
            ModelKind::SDropCapNet => "sdropcapnet",
            ModelKind::Standard => "standard",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scn" => Ok(ModelKind::Scn),
            "sdropcapnet" => Ok(ModelKind::SDropCapNet),
            "standard" => Ok(ModelKind::Standard),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where the ℓ2 normalization sits in the capsule encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeAt {
    /// The final embedding rows.
    Embedding,
    /// The concatenated capsule poses, before the dense layer.
    Concatenation,
    Off,
}

impl FromStr for NormalizeAt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(NormalizeAt::Embedding),
            "concatenation" => Ok(NormalizeAt::Concatenation),
            "off" => Ok(NormalizeAt::Off),
            other => Err(Error::Config(format!("unknown normalize_at '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScnConfig {
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub primary_dim: usize,
    pub primary_types: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub face_caps: usize,
    pub face_dim: usize,
    pub embed_dim: usize,
    pub routing_iters: usize,
    pub activation: Activation,
    pub detach_routing: bool,
    /// Ordinary dropout after the first convolution and on primary poses.
    pub dropout_rate: f64,
    pub concrete_dropout: bool,
    pub concrete_temperature: f64,
    pub concrete_form: ConcreteForm,
    pub normalize_at: NormalizeAt,
    /// Also batch-normalize the primary-capsule convolution.
    pub batch_norm_primary: bool,
}

impl ScnConfig {
    /// Full-width face-verification geometry on 100×100 inputs.
    pub fn full() -> Self {
        Self {
            input_size: 100,
            conv1_channels: 256,
            conv1_kernel: 9,
            conv1_stride: 3,
            primary_dim: 8,
            primary_types: 32,
            primary_kernel: 9,
            primary_stride: 3,
            face_caps: 32,
            face_dim: 16,
            embed_dim: 20,
            routing_iters: 4,
            activation: Activation::Tanh,
            detach_routing: false,
            dropout_rate: 0.2,
            concrete_dropout: false,
            concrete_temperature: 0.1,
            concrete_form: ConcreteForm::Standard,
            normalize_at: NormalizeAt::Embedding,
            batch_norm_primary: false,
        }
    }

    /// Desk-scale widths: 32 first-layer channels and 8 primary capsule types.
    pub fn reduced() -> Self {
        Self {
            conv1_channels: 32,
            primary_types: 8,
            ..Self::full()
        }
    }

    /// Primary-capsule grid side for the configured input size.
    pub fn grid_size(&self) -> Result<usize> {
        let c1 = conv_output_size(self.input_size, self.conv1_kernel, self.conv1_stride, 0)
            .ok_or_else(|| Error::Config(format!("input {} too small for the first convolution", self.input_size)))?;
        conv_output_size(c1, self.primary_kernel, self.primary_stride, 0)
            .ok_or_else(|| Error::Config(format!("first-layer output {c1} too small for primary capsules")))
    }

    pub fn n_primary_caps(&self) -> Result<usize> {
        let g = self.grid_size()?;
        Ok(g * g * self.primary_types)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardConfig {
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub normalize: bool,
}

impl Default for StandardConfig {
    fn default() -> Self {
        Self {
            input_size: 100,
            conv1_channels: 32,
            conv1_kernel: 9,
            conv1_stride: 3,
            conv2_channels: 64,
            conv2_kernel: 5,
            conv2_stride: 2,
            embed_dim: 20,
            dropout_rate: 0.2,
            normalize: true,
        }
    }
}

/// Encoder output rows `[N, K]`.
#[derive(Debug, Clone, Copy)]
pub struct Embedding<'g> {
    pub vec: Var<'g>,
    pub normalized: bool,
}

pub struct Encoded<'g> {
    pub embedding: Embedding<'g>,
    pub batch_stats: Vec<BatchStats>,
    pub routing: Option<RoutingState>,
}

fn check_images(images: &Var<'_>, size: usize) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != size || s[3] != size {
        return Err(Error::invalid("encode", format!("expected images [N, 1, {size}, {size}], got {s:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScnEncoder {
    pub config: ScnConfig,
    pub params: ParamSet,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub primary: PrimaryCapsules,
    pub primary_bn: Option<BatchNorm>,
    pub face: CapsuleLayer,
    pub fc: Dense,
    pub dropout_p: Option<ParamId>,
}

impl ScnEncoder {
    /// Keep probabilities are projected back into this band after each update.
    pub const KEEP_PROB_BAND: (f64, f64) = (1e-3, 1.0 - 1e-3);

    pub fn new(config: ScnConfig, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut ps = ParamSet::new();
        let n_lower = config.n_primary_caps()?;
        let conv1 = Conv2d::new(&mut ps, "conv1", 1, config.conv1_channels, config.conv1_kernel, config.conv1_stride, 0, &mut rng)?;
        let bn1 = BatchNorm::new(&mut ps, "bn1", config.conv1_channels)?;
        let primary = PrimaryCapsules::new(
            &mut ps,
            "primary",
            config.conv1_channels,
            config.primary_dim,
            config.primary_types,
            config.primary_kernel,
            config.primary_stride,
            &mut rng,
        )?;
        let primary_bn = config
            .batch_norm_primary
            .then(|| BatchNorm::new(&mut ps, "primary_bn", config.primary_dim * config.primary_types))
            .transpose()?;
        let face = CapsuleLayer::new(
            &mut ps,
            "face",
            n_lower,
            config.face_caps,
            config.primary_dim,
            config.face_dim,
            config.activation,
            &mut rng,
        )?;
        let fc = Dense::new(&mut ps, "fc", config.face_caps * config.face_dim, config.embed_dim, &mut rng)?;
        let dropout_p = config
            .concrete_dropout
            .then(|| Tensor::new(&[config.face_caps], Init::Constant(0.9)).map(|t| ps.add("dropout_p", t, true)))
            .transpose()?;
        Ok(Self {
            config,
            params: ps,
            conv1,
            bn1,
            primary,
            primary_bn,
            face,
            fc,
            dropout_p,
        })
    }

    pub fn encode<'g>(&self, b: &Bound<'g>, images: Var<'g>, mode: Mode, rng: &mut SplitMix64) -> Result<Encoded<'g>> {
        let cfg = &self.config;
        check_images(&images, cfg.input_size)?;
        let training = mode == Mode::Train;
        let n = images.shape()[0];
        let mut stats = Vec::new();

        let h = self.conv1.forward(b, images)?;
        let (h, s1) = self.bn1.forward(&self.params, b, h, training)?;
        stats.extend(s1);
        let mut h = h.relu();
        if training {
            h = dropout(h, cfg.dropout_rate, rng)?;
        }

        let mut grid = match &self.primary_bn {
            None => self.primary.forward(b, h)?,
            Some(bn) => {
                // Same as PrimaryCapsules::forward with a batch norm between conv and squash.
                let maps = self.primary.conv.forward(b, h)?;
                let (maps, s2) = bn.forward(&self.params, b, maps, training)?;
                stats.extend(s2);
                let ms = maps.shape();
                let poses = maps
                    .reshape(&[ms[0], cfg.primary_dim, cfg.primary_types, ms[2], ms[3]])?
                    .permute(&[0, 3, 4, 2, 1])?
                    .reshape(&[ms[0], ms[2] * ms[3] * cfg.primary_types, cfg.primary_dim])?
                    .squash(2)?;
                crate::capsules::CapsuleGrid {
                    poses,
                    grid_h: ms[2],
                    grid_w: ms[3],
                    n_types: cfg.primary_types,
                }
            }
        };
        if training {
            grid.poses = dropout(grid.poses, cfg.dropout_rate, rng)?;
        }

        let (mut caps, routing) = self.face.forward(b, &grid, cfg.routing_iters, cfg.detach_routing)?;
        if let Some(pid) = self.dropout_p {
            let k = cfg.face_caps;
            let p = b.var(pid).reshape(&[1, k])?;
            let mask = if training {
                let u = concrete_noise(&[n, k], rng)?;
                concrete_dropout_mask(p, &u, cfg.concrete_temperature, cfg.concrete_form)?
            } else {
                p
            };
            caps = caps.mul(mask.reshape(&[mask.shape()[0], k, 1])?)?;
        }

        let mut flat = caps.reshape(&[n, cfg.face_caps * cfg.face_dim])?;
        if cfg.normalize_at == NormalizeAt::Concatenation {
            flat = flat.l2norm(1)?;
        }
        let mut e = self.fc.forward(b, flat)?;
        let normalized = cfg.normalize_at == NormalizeAt::Embedding;
        if normalized {
            e = e.l2norm(1)?;
        }
        Ok(Encoded {
            embedding: Embedding { vec: e, normalized },
            batch_stats: stats,
            routing: Some(routing),
        })
    }

    fn batch_norms(&self) -> Vec<BatchNorm> {
        std::iter::once(self.bn1).chain(self.primary_bn).collect()
    }

    /// Per-layer trainable parameter counts, in forward order.
    pub fn param_report(&self) -> Vec<(&'static str, usize)> {
        let mut r = vec![
            ("conv1", self.conv1.param_count()),
            ("bn1", self.bn1.param_count()),
            ("primary", self.primary.param_count()),
        ];
        if let Some(bn) = &self.primary_bn {
            r.push(("primary_bn", bn.param_count()));
        }
        r.push(("face", self.face.param_count()));
        r.push(("fc", self.fc.param_count()));
        if self.dropout_p.is_some() {
            r.push(("dropout_p", self.config.face_caps));
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct StandardEncoder {
    pub config: StandardConfig,
    pub params: ParamSet,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub fc: Dense,
}

impl StandardEncoder {
    pub fn new(config: StandardConfig, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let mut ps = ParamSet::new();
        let conv1 = Conv2d::new(&mut ps, "conv1", 1, config.conv1_channels, config.conv1_kernel, config.conv1_stride, 0, &mut rng)?;
        let bn1 = BatchNorm::new(&mut ps, "bn1", config.conv1_channels)?;
        let conv2 = Conv2d::new(
            &mut ps,
            "conv2",
            config.conv1_channels,
            config.conv2_channels,
            config.conv2_kernel,
            config.conv2_stride,
            0,
            &mut rng,
        )?;
        let bn2 = BatchNorm::new(&mut ps, "bn2", config.conv2_channels)?;
        let side = conv1
            .output_size(config.input_size)
            .and_then(|s| conv2.output_size(s))
            .ok_or_else(|| Error::Config(format!("input {} too small for the baseline encoder", config.input_size)))?;
        let fc = Dense::new(&mut ps, "fc", config.conv2_channels * side * side, config.embed_dim, &mut rng)?;
        Ok(Self {
            config,
            params: ps,
            conv1,
            bn1,
            conv2,
            bn2,
            fc,
        })
    }

    pub fn encode<'g>(&self, b: &Bound<'g>, images: Var<'g>, mode: Mode, rng: &mut SplitMix64) -> Result<Encoded<'g>> {
        check_images(&images, self.config.input_size)?;
        let training = mode == Mode::Train;
        let n = images.shape()[0];
        let mut stats = Vec::new();
        let mut h = images;
        for (conv, bn) in [(&self.conv1, &self.bn1), (&self.conv2, &self.bn2)] {
            let (y, s) = bn.forward(&self.params, b, conv.forward(b, h)?, training)?;
            stats.extend(s);
            h = y.relu();
            if training {
                h = dropout(h, self.config.dropout_rate, rng)?;
            }
        }
        let flat = h.reshape(&[n, self.fc.inputs])?;
        let mut e = self.fc.forward(b, flat)?;
        if self.config.normalize {
            e = e.l2norm(1)?;
        }
        Ok(Encoded {
            embedding: Embedding {
                vec: e,
                normalized: self.config.normalize,
            },
            batch_stats: stats,
            routing: None,
        })
    }

    pub fn param_report(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("conv1", self.conv1.param_count()),
            ("bn1", self.bn1.param_count()),
            ("conv2", self.conv2.param_count()),
            ("bn2", self.bn2.param_count()),
            ("fc", self.fc.param_count()),
        ]
    }
}

/// Either encoder behind one interface.
#[derive(Debug, Clone)]
pub enum Encoder {
    Scn(ScnEncoder),
    Standard(StandardEncoder),
}

impl Encoder {
    pub fn kind(&self) -> ModelKind {
        match self {
            Encoder::Scn(e) if e.dropout_p.is_some() => ModelKind::SDropCapNet,
            Encoder::Scn(_) => ModelKind::Scn,
            Encoder::Standard(_) => ModelKind::Standard,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Encoder::Scn(e) => &e.params,
            Encoder::Standard(e) => &e.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Encoder::Scn(e) => &mut e.params,
            Encoder::Standard(e) => &mut e.params,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Encoder::Scn(e) => e.config.input_size,
            Encoder::Standard(e) => e.config.input_size,
        }
    }

    pub fn encode<'g>(&self, b: &Bound<'g>, images: Var<'g>, mode: Mode, rng: &mut SplitMix64) -> Result<Encoded<'g>> {
        match self {
            Encoder::Scn(e) => e.encode(b, images, mode, rng),
            Encoder::Standard(e) => e.encode(b, images, mode, rng),
        }
    }

    pub fn param_report(&self) -> Vec<(&'static str, usize)> {
        match self {
            Encoder::Scn(e) => e.param_report(),
            Encoder::Standard(e) => e.param_report(),
        }
    }

    /// Fold the batch statistics of one or more training forwards (in the
    /// order they were produced) into running averages.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let bns = match self {
            Encoder::Scn(e) => e.batch_norms(),
            Encoder::Standard(e) => vec![e.bn1, e.bn2],
        };
        if bns.is_empty() {
            return;
        }
        for (k, s) in stats.iter().enumerate() {
            bns[k % bns.len()].update_running(self.params_mut(), s);
        }
    }

    /// Re-impose parameter constraints after an optimizer update.
    pub fn project(&mut self) {
        if let Encoder::Scn(e) = self {
            if let Some(pid) = e.dropout_p {
                let (lo, hi) = ScnEncoder::KEEP_PROB_BAND;
                e.params.get_mut(pid).data_mut().iter_mut().for_each(|p| *p = p.clamp(lo, hi));
            }
        }
    }
}
