//! The encoder-decoder segmentation network shared by the base, protuberance
//! detection and fusion roles.
//!
//! Layout for depth `D` with `C` base channels (level `l` carries `C·2^l`):
//!
//! * level 0: two 3³ convs at full resolution
//! * level 1: a stride-2 3³ conv followed by one 3³ conv
//! * levels 2..=D: 2³ max pool, then two 3³ convs
//! * decoder, for `l = D-1 ..= 0`: trilinear ×2 upsample, concatenate the
//!   level-`l` skip, one 3³ conv (two when `single_conv_decoder` is off)
//! * head: 1³ conv to `output_channels`, sigmoid
//!
//! ReLU follows every conv except the head. There is no normalization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bindings, Param, ParamSet};
use super::tensor::Shape;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub base_channels: usize,
    /// Number of resolution halvings: one strided conv plus `depth - 1` pools.
    pub depth: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    #[serde(default = "default_true")]
    pub single_conv_decoder: bool,
}

fn default_true() -> bool {
    true
}

impl NetworkConfig {
    pub fn new(base_channels: usize, depth: usize, input_channels: usize, output_channels: usize) -> Self {
        Self { base_channels, depth, input_channels, output_channels, single_conv_decoder: true }
    }

    /// Base network at full size: 16 channels, 5 halvings, kidney + tumor heads.
    pub fn full_base() -> Self {
        Self::new(16, 5, 1, 2)
    }

    /// Protuberance detection network at full size: starts from 8 channels.
    pub fn full_protuberance() -> Self {
        Self::new(8, 5, 1, 1)
    }

    /// Fusion network at full size: image plus fused mask as input.
    pub fn full_fusion() -> Self {
        Self::new(16, 5, 2, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return invalid(format!("network channel counts must be >= 1: {self:?}"));
        }
        if self.depth > 12 {
            return invalid(format!("network depth {} is unreasonably deep", self.depth));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by `2^depth`.
    pub fn check_grid(&self, spatial: [usize; 3]) -> Result<()> {
        let f = 1usize << self.depth;
        if spatial.iter().any(|&n| n == 0 || n % f != 0) {
            return invalid(format!("grid {spatial:?} is not divisible by 2^{} = {f}", self.depth));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    cfg: NetworkConfig,
    params: ParamSet<T>,
    encoder: Vec<Vec<ConvLayer>>,
    decoder: Vec<Vec<ConvLayer>>,
    head: ConvLayer,
}

/// Result of a forward pass: the sigmoid output and the parameter handles
/// needed to read gradients back after `backward`.
pub struct Forward {
    pub output: Var,
    pub bindings: Bindings,
}

fn add_conv<T: Scalar, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
) -> Result<ConvLayer> {
    let fan_in = (cin * k * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
    let wshape = Shape::new(cout, cin, k, k, k);
    let w: Vec<T> = (0..wshape.numel()).map(|_| T::lit(normal.sample(rng))).collect();
    let weight = params.push(Param::new(format!("{name}.weight"), wshape, w))?;
    let bias = params.push(Param::new(format!("{name}.bias"), Shape::new(cout, 1, 1, 1, 1), vec![T::zero(); cout]))?;
    Ok(ConvLayer { weight, bias, stride })
}

impl<T: Scalar> Network<T> {
    /// Build with He-normal weights and zero biases.
    pub fn build<R: Rng>(cfg: NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut encoder = Vec::with_capacity(cfg.depth + 1);
        for level in 0..=cfg.depth {
            let cout = cfg.channels_at(level);
            let cin = if level == 0 { cfg.input_channels } else { cfg.channels_at(level - 1) };
            let first_stride = if level == 1 { 2 } else { 1 };
            let a = add_conv(&mut params, rng, &format!("enc{level}.conv0"), cin, cout, 3, first_stride)?;
            let b = add_conv(&mut params, rng, &format!("enc{level}.conv1"), cout, cout, 3, 1)?;
            encoder.push(vec![a, b]);
        }
        let mut decoder = vec![Vec::new(); cfg.depth];
        for level in (0..cfg.depth).rev() {
            let cin = cfg.channels_at(level + 1) + cfg.channels_at(level);
            let cout = cfg.channels_at(level);
            let mut layers = vec![add_conv(&mut params, rng, &format!("dec{level}.conv0"), cin, cout, 3, 1)?];
            if !cfg.single_conv_decoder {
                layers.push(add_conv(&mut params, rng, &format!("dec{level}.conv1"), cout, cout, 3, 1)?);
            }
            decoder[level] = layers;
        }
        let head = add_conv(&mut params, rng, "head", cfg.channels_at(0), cfg.output_channels, 1, 1)?;
        Ok(Self { cfg, params, encoder, decoder, head })
    }

    /// Rebuild the layer table around existing parameters (e.g. a checkpoint).
    pub fn from_params(cfg: NetworkConfig, params: ParamSet<T>) -> Result<Self> {
        let mut rng = crate::seed::rng_from(0);
        let template = Network::<T>::build(cfg, &mut rng)?;
        if template.params.len() != params.len() {
            return invalid(format!(
                "parameter count {} does not match config ({} expected)",
                params.len(),
                template.params.len()
            ));
        }
        for (a, b) in template.params.iter().zip(params.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return invalid(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    b.name, b.shape, a.name, a.shape
                ));
            }
        }
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    fn conv(&self, g: &mut Graph<T>, b: &Bindings, x: Var, layer: &ConvLayer) -> Result<Var> {
        g.conv3d(x, b.0[layer.weight], b.0[layer.bias], layer.stride)
    }

    /// Run the network on `input` (`(n, input_channels, z, y, x)`).
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<Forward> {
        let s = g.shape(input);
        if s.c != self.cfg.input_channels {
            return invalid(format!("network expects {} input channels, got {}", self.cfg.input_channels, s.c));
        }
        self.cfg.check_grid(s.spatial())?;
        let bindings = self.params.bind(g);
        let mut h = input;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for (level, convs) in self.encoder.iter().enumerate() {
            if level >= 2 {
                h = g.maxpool(h)?;
            }
            for (i, layer) in convs.iter().enumerate() {
                h = self.conv(g, &bindings, h, layer)?;
                h = g.relu(h);
                g.check_finite(h, &format!("enc{level}.conv{i}"))?;
            }
            skips.push(h);
        }
        for level in (0..self.cfg.depth).rev() {
            h = g.upsample(h)?;
            h = g.concat(h, skips[level])?;
            for (i, layer) in self.decoder[level].iter().enumerate() {
                h = self.conv(g, &bindings, h, layer)?;
                h = g.relu(h);
                g.check_finite(h, &format!("dec{level}.conv{i}"))?;
            }
        }
        h = self.conv(g, &bindings, h, &self.head)?;
        let output = g.sigmoid(h);
        g.check_finite(output, "head")?;
        Ok(Forward { output, bindings })
    }
}
