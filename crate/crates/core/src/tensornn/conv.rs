use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Result};
use crate::num::Real;
use crate::rng::Rng;

/// Cubic 3-D convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1 with padding that preserves spatial size.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation,
            padding: dilation * (kernel.saturating_sub(1)) / 2,
        }
    }

    /// Stride-2 downsampling that halves even sizes.
    pub fn down(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 2,
            dilation: 1,
            padding: kernel.saturating_sub(1) / 2,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("conv channels must be >= 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(invalid(format!("conv kernel must be odd, got {}", self.kernel)));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(invalid("conv stride and dilation must be >= 1"));
        }
        Ok(())
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Weights per output channel.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.fan_in()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    pub fn output_len(&self, size: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = size + 2 * self.padding;
        if padded < span {
            return Err(invalid(format!("input size {size} smaller than dilated kernel span {span}")));
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        Ok([self.output_len(dims[0])?, self.output_len(dims[1])?, self.output_len(dims[2])?])
    }

    fn weight_shape(&self) -> [usize; 5] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel, self.kernel]
    }
}

/// Weights `(C_out, C_in, k, k, k)` and bias `(1, C_out, 1, 1, 1)` of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub id: String,
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(id: impl Into<String>, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            id: id.into(),
            spec,
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros([1, spec.out_channels, 1, 1, 1]),
        })
    }

    /// He-normal weights, zero bias.
    pub fn he(id: impl Into<String>, spec: ConvSpec, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(id, spec)?;
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
        for w in p.weight.data_mut() {
            *w = T::of(normal.sample(rng));
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.weight.check_shape(self.spec.weight_shape(), "conv weight")?;
        self.bias.check_shape([1, self.spec.out_channels, 1, 1, 1], "conv bias")
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Upper bound on im2col buffer entries; larger inputs are processed in depth slabs.
const COL_BUDGET: usize = 1 << 21;

struct Plan {
    spec: ConvSpec,
    n: usize,
    ind: [usize; 3],
    outd: [usize; 3],
}

impl Plan {
    fn new<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Self> {
        params.validate()?;
        let spec = params.spec;
        if input.c() != spec.in_channels {
            return Err(invalid(format!(
                "conv '{}' expects {} input channels, got {}",
                params.id,
                spec.in_channels,
                input.c()
            )));
        }
        let ind = input.spatial();
        Ok(Self {
            spec,
            n: input.n(),
            ind,
            outd: spec.output_dims(ind)?,
        })
    }

    fn in_len(&self) -> usize {
        self.ind.iter().product()
    }

    fn out_len(&self) -> usize {
        self.outd.iter().product()
    }

    fn rows(&self) -> usize {
        self.spec.fan_in()
    }

    /// Output depth slabs `[d0, d1)` sized to the im2col budget.
    fn slabs(&self) -> Vec<(usize, usize)> {
        let per_d = self.rows() * self.outd[1] * self.outd[2];
        let step = (COL_BUDGET / per_d.max(1)).clamp(1, self.outd[0]);
        (0..self.outd[0]).step_by(step).map(|d0| (d0, (d0 + step).min(self.outd[0]))).collect()
    }

    /// Output positions `o` along one axis for which `o*stride + offset` lands inside `[0, size)`.
    fn valid(&self, offset: isize, size: usize, out: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi = if (size as isize) - 1 - offset < 0 { 0 } else { ((size as isize - 1 - offset) / s + 1).min(out as isize) };
        let lo = lo.min(out as isize) as usize;
        (lo, (hi.max(lo as isize)) as usize)
    }

    /// Visits every im2col output row segment of slab `[d0, d1)` as
    /// `(destination start, source of output column 0 if the row is in range, valid column range)`.
    /// Source index for output column `ow` is `src + ow * stride`.
    fn for_each_row(&self, d0: usize, d1: usize, mut f: impl FnMut(usize, Option<isize>, usize, usize)) {
        let ConvSpec { kernel: k, stride: s, dilation: dil, padding: p, in_channels: ci_n, .. } = self.spec;
        let [di, hi, wi] = self.ind;
        let [_, ho, wo] = self.outd;
        let pc = (d1 - d0) * ho * wo;
        for ci in 0..ci_n {
            for a in 0..k {
                let off_d = (a * dil) as isize - p as isize;
                for b in 0..k {
                    let off_h = (b * dil) as isize - p as isize;
                    let (h_lo, h_hi) = self.valid(off_h, hi, ho);
                    for c in 0..k {
                        let row = ((ci * k + a) * k + b) * k + c;
                        let off_w = (c * dil) as isize - p as isize;
                        let (w_lo, w_hi) = self.valid(off_w, wi, wo);
                        for od in d0..d1 {
                            let id = (od * s) as isize + off_d;
                            for oh in 0..ho {
                                let dst = row * pc + ((od - d0) * ho + oh) * wo;
                                if id < 0 || id >= di as isize || oh < h_lo || oh >= h_hi {
                                    f(dst, None, 0, 0);
                                    continue;
                                }
                                let ih = (oh * s) as isize + off_h;
                                let base = ((ci * di + id as usize) * hi + ih as usize) * wi;
                                f(dst, Some(base as isize + off_w), w_lo, w_hi);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], d0: usize, d1: usize, col: &mut [f64]) {
        let (wo, s) = (self.outd[2], self.spec.stride);
        self.for_each_row(d0, d1, |dst, src, lo, hi| {
            let out = &mut col[dst..dst + wo];
            let Some(src) = src else {
                out.fill(0.0);
                return;
            };
            out[..lo].fill(0.0);
            out[hi..].fill(0.0);
            if hi > lo {
                let first = (src + (lo * s) as isize) as usize;
                if s == 1 {
                    out[lo..hi].copy_from_slice(&x[first..first + hi - lo]);
                } else {
                    for (o, v) in out[lo..hi].iter_mut().zip(x[first..].iter().step_by(s)) {
                        *o = *v;
                    }
                }
            }
        });
    }

    fn col2im(&self, col: &[f64], d0: usize, d1: usize, gx: &mut [f64]) {
        let s = self.spec.stride;
        self.for_each_row(d0, d1, |dst, src, lo, hi| {
            let Some(src) = src else { return };
            if hi <= lo {
                return;
            }
            let first = (src + (lo * s) as isize) as usize;
            let g = &col[dst + lo..dst + hi];
            if s == 1 {
                for (t, v) in gx[first..first + hi - lo].iter_mut().zip(g) {
                    *t += *v;
                }
            } else {
                for (t, v) in gx[first..].iter_mut().step_by(s).zip(g) {
                    *t += *v;
                }
            }
        });
    }
}

/// `C[m×n] = alpha·A[m×k]·B[k×n] + beta·C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    debug_assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the debug assertions above spell out the extents every caller respects;
    // all three matrices are live slices and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Direct 3-D cross-correlation.
pub fn conv3d_forward<T: Real>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let plan = Plan::new(input, params)?;
    let (co, kk) = (plan.spec.out_channels, plan.rows());
    let (pin, pout) = (plan.in_len(), plan.out_len());
    let x = input.to_f64();
    let w = params.weight.to_f64();
    let bias = params.bias.to_f64();
    let hw = plan.outd[1] * plan.outd[2];
    let mut out = vec![0.0f64; plan.n * co * pout];
    let mut col = Vec::new();
    for n in 0..plan.n {
        let xn = &x[n * plan.spec.in_channels * pin..(n + 1) * plan.spec.in_channels * pin];
        let on = &mut out[n * co * pout..(n + 1) * co * pout];
        for (c, chunk) in on.chunks_mut(pout).enumerate() {
            chunk.fill(bias[c]);
        }
        for (d0, d1) in plan.slabs() {
            let pc = (d1 - d0) * hw;
            col.resize(kk * pc, 0.0);
            plan.im2col(xn, d0, d1, &mut col);
            gemm(co, kk, pc, &w, (kk, 1), &col, (pc, 1), 1.0, &mut on[d0 * hw..], pout);
        }
    }
    Tensor::from_f64([plan.n, co, plan.outd[0], plan.outd[1], plan.outd[2]], &out)
}

pub fn conv3d_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>, params: &LayerParams<T>) -> Result<ConvGrads<T>> {
    let plan = Plan::new(input, params)?;
    let (ci, co, kk) = (plan.spec.in_channels, plan.spec.out_channels, plan.rows());
    grad_out.check_shape([plan.n, co, plan.outd[0], plan.outd[1], plan.outd[2]], "conv grad_out")?;
    let (pin, pout) = (plan.in_len(), plan.out_len());
    let hw = plan.outd[1] * plan.outd[2];
    let x = input.to_f64();
    let g = grad_out.to_f64();
    let w = params.weight.to_f64();
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; w.len()];
    let mut gb = vec![0.0f64; co];
    let mut col = Vec::new();
    let mut gcol = Vec::new();
    for n in 0..plan.n {
        let xn = &x[n * ci * pin..(n + 1) * ci * pin];
        let gn = &g[n * co * pout..(n + 1) * co * pout];
        for (c, chunk) in gn.chunks(pout).enumerate() {
            gb[c] += chunk.iter().sum::<f64>();
        }
        let gxn = &mut gx[n * ci * pin..(n + 1) * ci * pin];
        for (d0, d1) in plan.slabs() {
            let pc = (d1 - d0) * hw;
            col.resize(kk * pc, 0.0);
            gcol.resize(kk * pc, 0.0);
            plan.im2col(xn, d0, d1, &mut col);
            let gs = &gn[d0 * hw..];
            // dW[co×kk] += G[co×pc] · colᵀ[pc×kk]
            gemm(co, pc, kk, gs, (pout, 1), &col, (1, pc), 1.0, &mut gw, kk);
            // dcol[kk×pc] = Wᵀ[kk×co] · G[co×pc]
            gemm(kk, co, pc, &w, (1, kk), gs, (pout, 1), 0.0, &mut gcol, pc);
            plan.col2im(&gcol, d0, d1, gxn);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_f64(input.shape(), &gx)?,
        weight: Tensor::from_f64(params.weight.shape(), &gw)?,
        bias: Tensor::from_f64(params.bias.shape(), &gb)?,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensornn::testutil::*;
    use rand::Rng as _;

    /// Seven nested loops straight from the definition.
    pub fn naive_conv(x: &Tensor<f64>, p: &LayerParams<f64>) -> Vec<f64> {
        let s = p.spec;
        let [n_, _, di, hi, wi] = x.shape();
        let [dout, hout, wout] = s.output_dims([di, hi, wi]).unwrap();
        let (k, pad) = (s.kernel as isize, s.padding as isize);
        let mut out = vec![0.0; n_ * s.out_channels * dout * hout * wout];
        let xd = x.data();
        let wd = p.weight.data();
        for n in 0..n_ {
            for co in 0..s.out_channels {
                for od in 0..dout {
                    for oh in 0..hout {
                        for ow in 0..wout {
                            let mut acc = p.bias.data()[co];
                            for ci in 0..s.in_channels {
                                for a in 0..k {
                                    for b in 0..k {
                                        for c in 0..k {
                                            let id = (od * s.stride) as isize + a * s.dilation as isize - pad;
                                            let ih = (oh * s.stride) as isize + b * s.dilation as isize - pad;
                                            let iw = (ow * s.stride) as isize + c * s.dilation as isize - pad;
                                            if id < 0 || ih < 0 || iw < 0 || id >= di as isize || ih >= hi as isize || iw >= wi as isize {
                                                continue;
                                            }
                                            let xi = (((n * s.in_channels + ci) * di + id as usize) * hi + ih as usize) * wi + iw as usize;
                                            let wi_ = (((co * s.in_channels + ci) * s.kernel + a as usize) * s.kernel + b as usize) * s.kernel + c as usize;
                                            acc += xd[xi] * wd[wi_];
                                        }
                                    }
                                }
                            }
                            out[(((n * s.out_channels + co) * dout + od) * hout + oh) * wout + ow] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn random_params(spec: ConvSpec, rng: &mut Rng) -> LayerParams<f64> {
        let mut p = LayerParams::<f64>::zeros("t", spec).unwrap();
        for w in p.weight.data_mut() {
            *w = rng.random::<f64>() - 0.5;
        }
        for b in p.bias.data_mut() {
            *b = rng.random::<f64>() - 0.5;
        }
        p
    }

    pub fn random_spec(rng: &mut Rng) -> ConvSpec {
        let kernel = [1, 3, 3][rng.random_range(0..3)];
        let dilation = rng.random_range(1..=2);
        let stride = rng.random_range(1..=2);
        ConvSpec {
            in_channels: rng.random_range(1..=2),
            out_channels: rng.random_range(1..=3),
            kernel,
            stride,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    #[test]
    fn identity_kernel() {
        let mut rng = rng(1);
        let x = random([1, 2, 3, 4, 5], &mut rng);
        let mut p = LayerParams::<f64>::zeros("id", ConvSpec::pointwise(2, 2)).unwrap();
        p.weight.data_mut()[0] = 1.0;
        p.weight.data_mut()[3] = 1.0;
        assert_eq!(conv3d_forward(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn output_shape_formula() {
        let x = Tensor::<f64>::zeros([1, 1, 5, 5, 5]);
        let p = LayerParams::<f64>::zeros("s", ConvSpec::same(1, 4, 3, 1)).unwrap();
        assert_eq!(conv3d_forward(&x, &p).unwrap().shape(), [1, 4, 5, 5, 5]);
        let p = LayerParams::<f64>::zeros("d", ConvSpec::down(1, 2, 3)).unwrap();
        let x = Tensor::<f64>::zeros([2, 1, 40, 40, 20]);
        assert_eq!(conv3d_forward(&x, &p).unwrap().shape(), [2, 2, 20, 20, 10]);
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel: 3, stride: 2, dilation: 2, padding: 1 };
        assert_eq!(spec.output_len(7).unwrap(), (7 + 2 - 4 - 1) / 2 + 1);
        let bad = Tensor::<f64>::zeros([1, 3, 5, 5, 5]);
        assert!(conv3d_forward(&bad, &LayerParams::zeros("s", ConvSpec::same(1, 1, 3, 1)).unwrap()).is_err());
        assert!(ConvSpec::same(1, 1, 2, 1).validate().is_err());
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = rng(2);
        for _ in 0..60 {
            let spec = random_spec(&mut rng);
            let dims = [rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..7)];
            let x = random([rng.random_range(1..3), spec.in_channels, dims[0], dims[1], dims[2]], &mut rng);
            let p = random_params(spec, &mut rng);
            let Ok(out) = conv3d_forward(&x, &p) else { continue };
            let oracle = naive_conv(&x, &p);
            let diff = out.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{spec:?} diff {diff}");
        }
    }

    #[test]
    fn slabs_cover_large_inputs() {
        let mut rng = rng(3);
        let spec = ConvSpec::same(3, 2, 3, 2);
        let x = random([1, 3, 24, 20, 18], &mut rng);
        let p = random_params(spec, &mut rng);
        let plan = Plan::new(&x, &p).unwrap();
        assert_eq!(plan.slabs().last().unwrap().1, 24);
        let diff = conv3d_forward(&x, &p)
            .unwrap()
            .data()
            .iter()
            .zip(naive_conv(&x, &p))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn backward_identities() {
        let mut rng = rng(4);
        let spec = ConvSpec::same(2, 3, 3, 1);
        let x = random([2, 2, 4, 4, 4], &mut rng);
        let p = random_params(spec, &mut rng);
        let zero = Tensor::<f64>::zeros([2, 3, 4, 4, 4]);
        let g = conv3d_backward(&zero, &x, &p).unwrap();
        assert!(g.input.data().iter().chain(g.weight.data()).chain(g.bias.data()).all(|&v| v == 0.0));
        let go = random([2, 3, 4, 4, 4], &mut rng);
        let g = conv3d_backward(&go, &x, &p).unwrap();
        for c in 0..3 {
            let s: f64 = (0..2).flat_map(|n| go.data()[(n * 3 + c) * 64..(n * 3 + c + 1) * 64].to_vec()).sum();
            assert!((g.bias.data()[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng(5);
        for _ in 0..20 {
            let spec = random_spec(&mut rng);
            let x = random([1, spec.in_channels, 4, 4, 4], &mut rng);
            let p = random_params(spec, &mut rng);
            let out = conv3d_forward(&x, &p).unwrap();
            let go = random(out.shape(), &mut rng);
            let g = conv3d_backward(&go, &x, &p).unwrap();
            let num_x = numeric_grad(x.data(), 1e-4, |xs| {
                dot(conv3d_forward(&Tensor::from_vec(x.shape(), xs.to_vec()).unwrap(), &p).unwrap().data(), go.data())
            });
            assert!(max_rel_err(g.input.data(), &num_x) < 1e-4);
            let num_w = numeric_grad(p.weight.data(), 1e-4, |ws| {
                let mut q = p.clone();
                q.weight.data_mut().copy_from_slice(ws);
                dot(conv3d_forward(&x, &q).unwrap().data(), go.data())
            });
            assert!(max_rel_err(g.weight.data(), &num_w) < 1e-4);
        }
    }

    #[test]
    fn param_count_formula() {
        let s = ConvSpec::same(8, 16, 3, 1);
        assert_eq!(s.param_count(), 8 * 16 * 27 + 16);
        let p = LayerParams::<f32>::he("x", s, &mut rng(0)).unwrap();
        assert_eq!(p.param_count(), s.param_count());
    }
}
