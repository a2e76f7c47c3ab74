//! Small volumetric encoder-decoder with an ASPP bottleneck.
//!
//! `enc.0` keeps full resolution, `enc.1..=enc.depth` halve it with stride-2
//! convolutions while doubling channels. The bottleneck runs parallel dilated
//! branches fused by a pointwise conv. Each decoder level upsamples by 2,
//! concatenates the matching encoder output and convolves back to that
//! level's width. A pointwise `head` produces one logit per cell.

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{invalid, Result};
use crate::num::Real;
use crate::rng::Rng;
use crate::tensornn::{
    bce_logit_grad, concat, weighted_bce, sigmoid, split, upsample2, upsample2_backward, Aspp, AsppCache, ConvSpec, Layer,
    LayerCache, Tensor,
};
use crate::voxel::{Dims, OccupancyGrid, TrinaryGrid};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Channels at full resolution; doubled at every downsampling.
    pub width: usize,
    /// Number of ×2 downsamplings.
    pub depth: usize,
    pub dilations: Vec<usize>,
    pub block_dims: Dims,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            width: 8,
            depth: 2,
            dilations: vec![1, 2, 4],
            block_dims: [40, 40, 20],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.dilations.is_empty() {
            return Err(invalid("width and depth must be >= 1 with at least one dilation"));
        }
        if self.dilations.contains(&0) {
            return Err(invalid("dilations must be >= 1"));
        }
        let f = 1usize << self.depth;
        if self.block_dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(invalid(format!("block dims {:?} not divisible by 2^{}", self.block_dims, self.depth)));
        }
        Ok(())
    }

    fn level_width(&self, l: usize) -> usize {
        self.width << l
    }

    /// Every convolution in forward order, with whether it is normalized.
    pub fn layer_specs(&self) -> Vec<(String, ConvSpec, bool)> {
        let mut v = vec![("enc.0".to_string(), ConvSpec::same(1, self.width, 3, 1), true)];
        for l in 1..=self.depth {
            v.push((format!("enc.{l}"), ConvSpec::down(self.level_width(l - 1), self.level_width(l), 3), true));
        }
        let bottom = self.level_width(self.depth);
        let branch = bottom / 2;
        for &d in &self.dilations {
            v.push((format!("aspp.d{d}"), ConvSpec::same(bottom, branch, 3, d), true));
        }
        v.push(("aspp.fuse".to_string(), ConvSpec::pointwise(branch * self.dilations.len(), bottom), true));
        for l in (0..self.depth).rev() {
            let w = self.level_width(l);
            v.push((format!("dec.{l}"), ConvSpec::same(2 * w + w, w, 3, 1), true));
        }
        v.push(("head".to_string(), ConvSpec::pointwise(self.width, 1), false));
        v
    }

    /// Closed-form parameter count: conv weights and biases plus norm scale and shift.
    pub fn param_count(&self) -> usize {
        self.layer_specs()
            .iter()
            .map(|(_, s, norm)| s.param_count() + if *norm { 2 * s.out_channels } else { 0 })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpNet<T> {
    arch: ArchConfig,
    enc: Vec<Layer<T>>,
    aspp: Aspp<T>,
    /// Decoder layers from coarsest to finest (`dec.{depth-1}` .. `dec.0`).
    dec: Vec<Layer<T>>,
    head: Layer<T>,
}

pub struct ForwardCache<T> {
    enc: Vec<LayerCache<T>>,
    aspp: AsppCache<T>,
    dec: Vec<LayerCache<T>>,
    head: LayerCache<T>,
}

impl<T: Real> OpNet<T> {
    pub fn new(arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let specs = arch.layer_specs();
        let layers = specs
            .into_iter()
            .map(|(id, spec, norm)| if norm { Layer::block(id, spec, rng) } else { Layer::linear(id, spec, rng) })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, arch.block_dims)
    }

    /// Rebuilds a network from stored layers; the architecture is read off their ids and specs.
    pub fn from_layers(layers: Vec<Layer<T>>, block_dims: Dims) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid("no layers"))?;
        let width = first.spec().out_channels;
        let depth = layers.iter().filter(|l| l.id().starts_with("enc.")).count().saturating_sub(1);
        let dilations = layers
            .iter()
            .filter(|l| l.id().starts_with("aspp.d"))
            .map(|l| l.spec().dilation)
            .collect();
        let arch = ArchConfig {
            width,
            depth,
            dilations,
            block_dims,
        };
        arch.validate()?;
        let expected = arch.layer_specs();
        if expected.len() != layers.len() {
            return Err(invalid(format!("expected {} layers, found {}", expected.len(), layers.len())));
        }
        for ((id, spec, norm), l) in expected.iter().zip(&layers) {
            if l.id() != id || l.spec() != *spec || l.norm.is_some() != *norm {
                return Err(invalid(format!("layer '{}' does not fit the expected '{id}' {spec:?}", l.id())));
            }
        }
        let mut it = layers.into_iter();
        let enc: Vec<_> = it.by_ref().take(depth + 1).collect();
        let branches: Vec<_> = it.by_ref().take(arch.dilations.len()).collect();
        let fusion = it.next().expect("checked");
        let dec: Vec<_> = it.by_ref().take(depth).collect();
        let head = it.next().expect("checked");
        Ok(Self {
            aspp: Aspp::from_layers(branches, fusion)?,
            arch,
            enc,
            dec,
            head,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> Vec<&Layer<T>> {
        self.enc
            .iter()
            .chain(self.aspp.layers())
            .chain(self.dec.iter())
            .chain(std::iter::once(&self.head))
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        self.enc
            .iter_mut()
            .chain(self.aspp.layers_mut())
            .chain(self.dec.iter_mut())
            .chain(std::iter::once(&mut self.head))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Trainable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut().into_iter().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Concatenated gradients of all trainable tensors (zeros where none accumulated).
    pub fn flat_grads(&mut self) -> Vec<f64> {
        self.params_mut()
            .into_iter()
            .flat_map(|p| match p.grad() {
                Some(g) => g.iter().map(|v| v.wide()).collect::<Vec<_>>(),
                None => vec![0.0; p.len()],
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend(l.conv.weight.data().iter().map(|v| v.wide()));
            out.extend(l.conv.bias.data().iter().map(|v| v.wide()));
            if let Some(n) = &l.norm {
                out.extend(n.gamma.data().iter().map(|v| v.wide()));
                out.extend(n.beta.data().iter().map(|v| v.wide()));
            }
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != 1 || x.spatial() != self.arch.block_dims {
            return Err(invalid(format!(
                "expected input (N, 1, {:?}), got {:?}",
                self.arch.block_dims,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward returning pre-sigmoid logits.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut enc_c = Vec::with_capacity(self.enc.len());
        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for l in &mut self.enc {
            let (y, c) = l.forward(&h, true)?;
            enc_c.push(c);
            enc_out.push(y.clone());
            h = y;
        }
        let (mut d, aspp_c) = self.aspp.forward(&h, true)?;
        let mut dec_c = Vec::with_capacity(self.dec.len());
        for (i, l) in self.dec.iter_mut().enumerate() {
            let skip = &enc_out[self.arch.depth - 1 - i];
            let (y, c) = l.forward(&concat(&upsample2(&d), skip)?, true)?;
            dec_c.push(c);
            d = y;
        }
        let (logits, head_c) = self.head.forward(&d, true)?;
        Ok((
            logits,
            ForwardCache {
                enc: enc_c,
                aspp: aspp_c,
                dec: dec_c,
                head: head_c,
            },
        ))
    }

    /// Backpropagates a logit gradient, accumulating into parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor<T>, cache: &ForwardCache<T>) -> Result<()> {
        let mut g = self.head.backward(grad_logits, &cache.head)?;
        let depth = self.arch.depth;
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
        for i in (0..self.dec.len()).rev() {
            let gc = self.dec[i].backward(&g, &cache.dec[i])?;
            let up_c = self.arch.level_width(depth - i);
            let (gu, gskip) = split(&gc, up_c)?;
            skip_grads[depth - 1 - i] = Some(gskip);
            g = upsample2_backward(&gu)?;
        }
        let mut ge = self.aspp.backward(&g, &cache.aspp)?;
        for l in (0..=depth).rev() {
            if let Some(s) = skip_grads[l].take() {
                ge = add(&ge, &s)?;
            }
            ge = self.enc[l].backward(&ge, &cache.enc[l])?;
        }
        Ok(())
    }

    /// Inference with running statistics; returns probabilities.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut enc_out = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for l in &self.enc {
            h = l.infer(&h)?;
            enc_out.push(h.clone());
        }
        let mut d = self.aspp.infer(&h)?;
        for (i, l) in self.dec.iter().enumerate() {
            d = l.infer(&concat(&upsample2(&d), &enc_out[self.arch.depth - 1 - i])?)?;
        }
        Ok(sigmoid(&self.head.infer(&d)?))
    }

    /// One forward/backward pass over a batch; returns the weighted BCE loss.
    /// Gradients accumulate into the parameters (callers zero them first).
    pub fn loss_and_backward(&mut self, inputs: &Tensor<T>, targets: &[i8], weights: &[f64]) -> Result<f64> {
        let (logits, cache) = self.forward_train(inputs)?;
        let probs = sigmoid(&logits);
        let (loss, _) = weighted_bce(probs.data(), targets, weights)?;
        let g = bce_logit_grad(probs.data(), targets, weights)?;
        self.backward(&Tensor::from_f64(logits.shape(), &g)?, &cache)?;
        Ok(loss)
    }
}

fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.check_shape(a.shape(), "gradient sum")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| T::of(x.wide() + y.wide())).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Encodes a trinary block as a `(1, 1, D, H, W)` tensor of -1/0/1.
pub fn block_tensor<T: Real>(block: &TrinaryGrid) -> Tensor<T> {
    let [d, h, w] = block.dims();
    Tensor::from_vec([1, 1, d, h, w], block.cells().iter().map(|&c| T::of(c as f64)).collect()).expect("dims match cells")
}

impl<T: Real> Predictor<T> for OpNet<T> {
    fn name(&self) -> String {
        format!("OPNET(w{}d{})", self.arch.width, self.arch.depth)
    }

    fn predict(&self, block: &TrinaryGrid) -> Result<OccupancyGrid<T>> {
        if block.dims() != self.arch.block_dims {
            return Err(invalid(format!("block dims {:?} differ from model dims {:?}", block.dims(), self.arch.block_dims)));
        }
        let probs = self.infer(&block_tensor(block))?;
        OccupancyGrid::from_raw(block.geometry().clone(), probs.into_data())
    }
}
