use super::{conv3d_backward, conv3d_forward, relu, relu_backward, BatchNorm, ConvSpec, LayerParams, NormCache, Tensor};
use crate::error::Result;
use crate::num::Real;
use crate::rng::Rng;

/// Convolution, optionally followed by batch norm and relu. Normalized layers are always rectified.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub conv: LayerParams<T>,
    pub norm: Option<BatchNorm<T>>,
}

pub struct LayerCache<T> {
    input: Tensor<T>,
    norm: Option<(NormCache, Tensor<T>)>,
}

impl<T> LayerCache<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

impl<T: Real> Layer<T> {
    /// He-initialized conv + norm + relu.
    pub fn block(id: impl Into<String>, spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: LayerParams::he(id, spec, rng)?,
            norm: Some(BatchNorm::new(spec.out_channels)),
        })
    }

    /// Plain convolution without normalization or activation.
    pub fn linear(id: impl Into<String>, spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: LayerParams::he(id, spec, rng)?,
            norm: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.conv.id
    }

    pub fn spec(&self) -> ConvSpec {
        self.conv.spec
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.as_ref().map_or(0, |n| n.param_count())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.conv.weight, &mut self.conv.bias];
        if let Some(n) = self.norm.as_mut() {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, LayerCache<T>)> {
        let z = conv3d_forward(x, &self.conv)?;
        let Some(bn) = self.norm.as_mut() else {
            return Ok((z, LayerCache { input: x.clone(), norm: None }));
        };
        let (zn, nc) = if train { bn.forward_train(&z)? } else { bn.forward_eval(&z)? };
        let y = relu(&zn);
        Ok((
            y.clone(),
            LayerCache {
                input: x.clone(),
                norm: Some((nc, y)),
            },
        ))
    }

    /// Inference forward with running statistics; no cache.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = conv3d_forward(x, &self.conv)?;
        match &self.norm {
            Some(bn) => Ok(relu(&bn.forward_eval(&z)?.0)),
            None => Ok(z),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &LayerCache<T>) -> Result<Tensor<T>> {
        let gz = match (&mut self.norm, &cache.norm) {
            (Some(bn), Some((nc, y))) => bn.backward(&relu_backward(grad_out, y)?, nc)?,
            _ => grad_out.clone(),
        };
        let g = conv3d_backward(&gz, &cache.input, &self.conv)?;
        self.conv.weight.accumulate_grad(&g.weight.to_f64())?;
        self.conv.bias.accumulate_grad(&g.bias.to_f64())?;
        Ok(g.input)
    }
}
