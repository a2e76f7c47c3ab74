use super::Tensor;
use crate::error::{invalid, Result};
use crate::num::Real;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Gradient through relu given the forward output.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.check_shape(output.shape(), "relu grad")?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| T::of(sigmoid_f64(v.wide()))).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub(crate) fn sigmoid_f64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient through sigmoid given the forward output.
pub fn sigmoid_backward<T: Real>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.check_shape(output.shape(), "sigmoid grad")?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| {
            let y = y.wide();
            T::of(g.wide() * y * (1.0 - y))
        })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Nearest-neighbour upsampling by 2 along every spatial axis.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, d, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * d, 2 * h, 2 * w]);
    let src = x.data();
    let dst = y.data_mut();
    for nc in 0..n * c {
        for od in 0..2 * d {
            for oh in 0..2 * h {
                let so = ((nc * d + od / 2) * h + oh / 2) * w;
                let doff = ((nc * 2 * d + od) * 2 * h + oh) * 2 * w;
                for ow in 0..2 * w {
                    dst[doff + ow] = src[so + ow / 2];
                }
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, d2, h2, w2] = grad_out.shape();
    if d2 % 2 != 0 || h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(invalid("upsample gradient must have even spatial dims"));
    }
    let (d, h, w) = (d2 / 2, h2 / 2, w2 / 2);
    let mut acc = vec![0.0f64; n * c * d * h * w];
    let g = grad_out.data();
    for nc in 0..n * c {
        for od in 0..d2 {
            for oh in 0..h2 {
                let so = ((nc * d + od / 2) * h + oh / 2) * w;
                let goff = ((nc * d2 + od) * h2 + oh) * w2;
                for ow in 0..w2 {
                    acc[so + ow / 2] += g[goff + ow].wide();
                }
            }
        }
    }
    Tensor::from_f64([n, c, d, h, w], &acc)
}

/// Channel concatenation; the backward pass is [`split`].
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.n() != b.n() || a.spatial() != b.spatial() {
        return Err(invalid(format!("concat shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ca, cb, s) = (a.c(), b.c(), a.spatial_len());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..a.n() {
        data.extend_from_slice(&a.data()[n * ca * s..(n + 1) * ca * s]);
        data.extend_from_slice(&b.data()[n * cb * s..(n + 1) * cb * s]);
    }
    let [_, _, d, h, w] = a.shape();
    Tensor::from_vec([a.n(), ca + cb, d, h, w], data)
}

/// Splits channels at `first`; inverse of [`concat`].
pub fn split<T: Real>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, d, h, w] = x.shape();
    if first > c {
        return Err(invalid(format!("split at {first} exceeds {c} channels")));
    }
    let s = x.spatial_len();
    let mut a = Vec::with_capacity(n * first * s);
    let mut b = Vec::with_capacity(n * (c - first) * s);
    for i in 0..n {
        let base = i * c * s;
        a.extend_from_slice(&x.data()[base..base + first * s]);
        b.extend_from_slice(&x.data()[base + first * s..base + c * s]);
    }
    Ok((Tensor::from_vec([n, first, d, h, w], a)?, Tensor::from_vec([n, c - first, d, h, w], b)?))
}
