use super::{concat, split, ConvSpec, Layer, LayerCache, Tensor};
use crate::error::{invalid, Result};
use crate::num::Real;
use crate::rng::Rng;

/// Parallel dilated branches, concatenated and fused by a 1×1×1 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Aspp<T> {
    pub branches: Vec<Layer<T>>,
    pub fusion: Layer<T>,
}

pub struct AsppCache<T> {
    branches: Vec<LayerCache<T>>,
    fusion: LayerCache<T>,
}

impl<T: Real> Aspp<T> {
    pub fn new(prefix: &str, in_channels: usize, branch_channels: usize, out_channels: usize, dilations: &[usize], rng: &mut Rng) -> Result<Self> {
        if dilations.is_empty() {
            return Err(invalid("ASPP needs at least one branch"));
        }
        let branches = dilations
            .iter()
            .map(|&d| Layer::block(format!("{prefix}.d{d}"), ConvSpec::same(in_channels, branch_channels, 3, d), rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = Layer::block(
            format!("{prefix}.fuse"),
            ConvSpec::pointwise(branch_channels * dilations.len(), out_channels),
            rng,
        )?;
        Ok(Self { branches, fusion })
    }

    pub fn from_layers(branches: Vec<Layer<T>>, fusion: Layer<T>) -> Result<Self> {
        if branches.is_empty() {
            return Err(invalid("ASPP needs at least one branch"));
        }
        let total: usize = branches.iter().map(|b| b.spec().out_channels).sum();
        if fusion.spec().in_channels != total || fusion.spec().kernel != 1 {
            return Err(invalid("ASPP fusion must be 1x1x1 over all branch channels"));
        }
        Ok(Self { branches, fusion })
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.param_count()).sum::<usize>() + self.fusion.param_count()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.branches.iter().chain(std::iter::once(&self.fusion))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.branches.iter_mut().chain(std::iter::once(&mut self.fusion))
    }

    fn join(&self, outs: Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let spatial = outs[0].spatial();
        if outs.iter().any(|o| o.spatial() != spatial) {
            return Err(invalid("ASPP branch outputs differ in spatial size"));
        }
        let mut it = outs.into_iter();
        let first = it.next().expect("non-empty");
        it.try_fold(first, |acc, o| concat(&acc, &o))
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, AsppCache<T>)> {
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for b in &mut self.branches {
            let (y, c) = b.forward(x, train)?;
            outs.push(y);
            caches.push(c);
        }
        let joined = self.join(outs)?;
        let (y, fc) = self.fusion.forward(&joined, train)?;
        Ok((y, AsppCache { branches: caches, fusion: fc }))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let outs = self.branches.iter().map(|b| b.infer(x)).collect::<Result<Vec<_>>>()?;
        self.fusion.infer(&self.join(outs)?)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &AsppCache<T>) -> Result<Tensor<T>> {
        let mut rest = self.fusion.backward(grad_out, &cache.fusion)?;
        let mut gx: Option<Vec<f64>> = None;
        for (b, c) in self.branches.iter_mut().zip(&cache.branches) {
            let (gb, tail) = split(&rest, b.spec().out_channels)?;
            rest = tail;
            let g = b.backward(&gb, c)?;
            match gx.as_mut() {
                None => gx = Some(g.to_f64()),
                Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v.wide()),
            }
        }
        let shape = cache.branches[0].input().shape();
        Tensor::from_f64(shape, &gx.expect("non-empty"))
    }
}
