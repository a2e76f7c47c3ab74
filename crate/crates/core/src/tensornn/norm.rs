use super::Tensor;
use crate::error::{invalid, Error, Result};
use crate::num::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel batch normalization with running statistics for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
}

/// Values saved by the forward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Statistics came from the batch itself (training) rather than running estimates.
    batch_stats: bool,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros([1, channels, 1, 1, 1]);
        gamma.data_mut().fill(T::one());
        Self {
            gamma,
            beta: Tensor::zeros([1, channels, 1, 1, 1]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.c()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// Batch statistics; running estimates move towards them (unbiased variance).
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache)> {
        let (y, cache) = norm_forward(x, &self.gamma, &self.beta, None)?;
        let m = (x.n() * x.spatial_len()) as f64;
        for c in 0..self.channels() {
            let mo = self.momentum;
            let rm = self.running_mean[c].wide();
            let rv = self.running_var[c].wide();
            self.running_mean[c] = T::of((1.0 - mo) * rm + mo * cache.mean[c]);
            self.running_var[c] = T::of((1.0 - mo) * rv + mo * cache.var[c] * m / (m - 1.0));
        }
        Ok((y, cache))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache)> {
        norm_forward(x, &self.gamma, &self.beta, Some((&self.running_mean, &self.running_var)))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &NormCache) -> Result<Tensor<T>> {
        let (gx, gg, gb) = norm_backward(grad_out, cache, &self.gamma)?;
        self.gamma.accumulate_grad(&gg)?;
        self.beta.accumulate_grad(&gb)?;
        Ok(gx)
    }
}

/// Standardizes each channel then applies `gamma`, `beta`.
/// `running = None` selects batch statistics.
pub fn norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&[T], &[T])>,
) -> Result<(Tensor<T>, NormCache)> {
    let [n, c, ..] = x.shape();
    gamma.check_shape([1, c, 1, 1, 1], "norm gamma")?;
    beta.check_shape([1, c, 1, 1, 1], "norm beta")?;
    let s = x.spatial_len();
    let m = n * s;
    let xd = x.data();
    let chan = |ch: usize| (0..n).flat_map(move |i| ((i * c + ch) * s)..((i * c + ch + 1) * s));
    let (mean, var) = match running {
        Some((rm, rv)) => {
            if rm.len() != c || rv.len() != c {
                return Err(invalid("running statistics length mismatch"));
            }
            (rm.iter().map(|v| v.wide()).collect(), rv.iter().map(|v| v.wide()).collect())
        }
        None => {
            if m <= 1 {
                return Err(Error::NumericDegenerate(format!("batch statistics need more than {m} value per channel")));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mu = chan(ch).map(|i| xd[i].wide()).sum::<f64>() / m as f64;
                mean[ch] = mu;
                var[ch] = chan(ch).map(|i| (xd[i].wide() - mu).powi(2)).sum::<f64>() / m as f64;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v: &f64| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch].wide(), beta.data()[ch].wide());
        for i in chan(ch) {
            let h = (xd[i].wide() - mean[ch]) * inv_std[ch];
            xhat[i] = h;
            y[i] = g * h + b;
        }
    }
    let cache = NormCache {
        xhat,
        inv_std,
        batch_stats: running.is_none(),
        mean,
        var,
    };
    Ok((Tensor::from_f64(x.shape(), &y)?, cache))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn norm_backward<T: Real>(grad_out: &Tensor<T>, cache: &NormCache, gamma: &Tensor<T>) -> Result<(Tensor<T>, Vec<f64>, Vec<f64>)> {
    let [n, c, ..] = grad_out.shape();
    if grad_out.len() != cache.xhat.len() || gamma.c() != c {
        return Err(invalid("norm backward shape mismatch"));
    }
    let s = grad_out.spatial_len();
    let m = (n * s) as f64;
    let g = grad_out.data();
    let chan = |ch: usize| (0..n).flat_map(move |i| ((i * c + ch) * s)..((i * c + ch + 1) * s));
    let mut gx = vec![0.0; g.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in chan(ch) {
            sum_g += g[i].wide();
            sum_gx += g[i].wide() * cache.xhat[i];
        }
        gg[ch] = sum_gx;
        gb[ch] = sum_g;
        let k = gamma.data()[ch].wide() * cache.inv_std[ch];
        for i in chan(ch) {
            gx[i] = if cache.batch_stats {
                k * (g[i].wide() - sum_g / m - cache.xhat[i] * sum_gx / m)
            } else {
                k * g[i].wide()
            };
        }
    }
    Ok((Tensor::from_f64(grad_out.shape(), &gx)?, gg, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornn::testutil::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::from_vec([2, 1, 2, 2, 2], vec![3.0; 16]).unwrap();
        let mut bn = BatchNorm::<f64>::new(1);
        bn.beta.data_mut()[0] = 0.7;
        bn.gamma.data_mut()[0] = 2.0;
        let (y, _) = bn.forward_train(&x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn standardized_input_is_identity() {
        let mut r = rng(1);
        let x = random([1, 2, 4, 4, 4], &mut r);
        let mut xs = x.data().to_vec();
        for ch in 0..2 {
            let sl = &mut xs[ch * 64..(ch + 1) * 64];
            let mu = sl.iter().sum::<f64>() / 64.0;
            let sd = (sl.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 64.0).sqrt();
            // leave room for the epsilon floor
            let scale = (1.0 - NORM_EPS).sqrt() / sd;
            sl.iter_mut().for_each(|v| *v = (*v - mu) * scale);
        }
        let x = Tensor::from_vec(x.shape(), xs).unwrap();
        let (y, _) = BatchNorm::<f64>::new(2).forward_train(&x).unwrap();
        let diff = y.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6);
    }

    #[test]
    fn degenerate_batch_rejected() {
        let x = Tensor::<f64>::zeros([1, 3, 1, 1, 1]);
        assert!(matches!(BatchNorm::<f64>::new(3).forward_train(&x), Err(Error::NumericDegenerate(_))));
        assert!(BatchNorm::<f64>::new(3).forward_eval(&x).is_ok());
    }

    #[test]
    fn running_stats_track_batches() {
        let mut r = rng(3);
        let mut bn = BatchNorm::<f64>::new(1);
        bn.momentum = 1.0;
        let x = random([1, 1, 3, 3, 3], &mut r);
        let (_, cache) = bn.forward_train(&x).unwrap();
        assert_eq!(bn.running_mean[0], cache.mean[0]);
        assert!((bn.running_var[0] - cache.var[0] * 27.0 / 26.0).abs() < 1e-15);
        let (ye, _) = bn.forward_eval(&x).unwrap();
        let mean_out = ye.data().iter().sum::<f64>() / 27.0;
        assert!(mean_out.abs() < 1e-9);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng(4);
        for case in 0..50 {
            let shape = [1 + case % 2, 2, 2 + case % 3, 3, 2];
            let x = random(shape, &mut r);
            let go = random(shape, &mut r);
            let mut gamma = random([1, 2, 1, 1, 1], &mut r);
            let beta = random([1, 2, 1, 1, 1], &mut r);
            let train = case % 3 != 0;
            let rm = [0.1, -0.2];
            let rv = [0.5, 1.5];
            let running = if train { None } else { Some((&rm[..], &rv[..])) };
            let (_, cache) = norm_forward(&x, &gamma, &beta, running).unwrap();
            let (gx, gg, gb) = norm_backward(&go, &cache, &gamma).unwrap();
            let num_x = numeric_grad(x.data(), 1e-4, |xs| {
                let xt = Tensor::from_vec(shape, xs.to_vec()).unwrap();
                dot(norm_forward(&xt, &gamma, &beta, running).unwrap().0.data(), go.data())
            });
            assert!(max_rel_err(gx.data(), &num_x) < 1e-4, "case {case}");
            let g0 = gamma.data().to_vec();
            let num_g = numeric_grad(&g0, 1e-4, |gs| {
                gamma.data_mut().copy_from_slice(gs);
                let v = dot(norm_forward(&x, &gamma, &beta, running).unwrap().0.data(), go.data());
                gamma.data_mut().copy_from_slice(&g0);
                v
            });
            assert!(max_rel_err(&gg, &num_g) < 1e-4);
            let s = shape[2] * 6;
            let sums: Vec<f64> = (0..2)
                .map(|ch| (0..shape[0]).map(|n| go.data()[(n * 2 + ch) * s..][..s].iter().sum::<f64>()).sum())
                .collect();
            assert!(max_rel_err(&gb, &sums) < 1e-12);
        }
    }
}
