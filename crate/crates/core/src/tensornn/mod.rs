//! Dense 5-D tensors and the hand-written layers needed to train a small
//! volumetric encoder-decoder on the CPU.
//!
//! Layout is `(N, C, D, H, W)` row-major. Grid axes map as `D = x`, `H = y`,
//! `W = z`, so a grid's linear index equals the tensor's spatial index.
//! Parameters and activations are stored as `T`; every reduction runs in `f64`.

mod aspp;
mod conv;
pub mod io;
mod layer;
mod loss;
mod norm;
mod ops;
mod optim;

pub use aspp::{Aspp, AsppCache};
pub use conv::{conv3d_backward, conv3d_forward, ConvGrads, ConvSpec, LayerParams};
pub use layer::{Layer, LayerCache};
pub use loss::{bce_logit_grad, loss_weights, weighted_bce, LossWeights, WeightGrid, PROB_EPS};
pub use norm::{norm_backward, norm_forward, BatchNorm, NormCache, NORM_EPS};
pub use ops::{
    concat, relu, relu_backward, sigmoid, sigmoid_backward, split, upsample2, upsample2_backward,
};
pub use optim::{adam_step, AdamState, LrSchedule};

use crate::error::{invalid, Result};
use crate::num::Real;

pub type Shape = [usize; 5];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(invalid(format!("tensor data length {} does not match shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.wide()).collect()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(invalid("gradient length mismatch"));
        }
        for (a, &b) in self.grad_mut().iter_mut().zip(g) {
            *a = T::of(a.wide() + b);
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| U::of(x.wide())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|x| U::of(x.wide())).collect()),
        }
    }

    pub(crate) fn check_shape(&self, shape: Shape, what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(invalid(format!("{what}: expected shape {shape:?}, got {:?}", self.shape)));
        }
        Ok(())
    }
}
