//! Dense row-major tensors and the convolution / pooling kernels the network
//! is assembled from.
//!
//! Activations are laid out `(batch, channel, height, width)` and kernels
//! `(out_channel, in_channel, kh, kw)`. Convolution is cross-correlation (no
//! kernel flip).

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Independent N(0, std²) entries.
    pub fn randn(shape: &[usize], std: f64, rng: &mut SeededRng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.normal()).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Returns `(n, c, h, w)` or a shape error if the tensor is not 4-d.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected a 4-d tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Contiguous slice of the `i`-th entry along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn expect_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output extent along one spatial axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output positions whose tap `k` lands inside an input of length `len`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // input index = o * stride + k - padding
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi_excl = if len + padding > k {
        ((len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi_excl.max(lo))
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn conv_geom(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<ConvGeom> {
    let (n, c, h, w) = input.dims4()?;
    let (o, kc, kh, kw) = kernel.dims4()?;
    if kc != c {
        return Err(Error::shape(format!(
            "conv2d: kernel expects {kc} input channels, input has {c}"
        )));
    }
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        o,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    })
}

/// 2-d cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geom(input, kernel, stride, padding)?;
    let mut out = Tensor::zeros(&[g.n, g.o, g.oh, g.ow]);
    let x = input.data();
    let k = kernel.data();
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for ni in 0..g.n {
        for oi in 0..g.o {
            let dst = &mut out.data[(ni * g.o + oi) * plane_out..][..plane_out];
            for ci in 0..g.c {
                let src = &x[(ni * g.c + ci) * plane_in..][..plane_in];
                let kbase = (oi * g.c + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (r0, r1) = valid_range(g.oh, g.h, ki, g.stride, g.padding);
                    for kj in 0..g.kw {
                        let wv = k[kbase + ki * g.kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (c0, c1) = valid_range(g.ow, g.w, kj, g.stride, g.padding);
                        for r in r0..r1 {
                            let ih = r * g.stride + ki - g.padding;
                            let drow = &mut dst[r * g.ow + c0..r * g.ow + c1];
                            let iw0 = c0 * g.stride + kj - g.padding;
                            if g.stride == 1 {
                                let srow = &src[ih * g.w + iw0..][..c1 - c0];
                                for (d, s) in drow.iter_mut().zip(srow) {
                                    *d += wv * s;
                                }
                            } else {
                                for (t, d) in drow.iter_mut().enumerate() {
                                    *d += wv * src[ih * g.w + iw0 + t * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_upstream(g: &ConvGeom, upstream: &Tensor) -> Result<()> {
    if upstream.shape() != [g.n, g.o, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv2d upstream gradient has shape {:?}, expected {:?}",
            upstream.shape(),
            [g.n, g.o, g.oh, g.ow]
        )));
    }
    Ok(())
}

/// Gradient of `sum(upstream ⊙ conv2d(input, kernel))` with respect to the input.
pub fn conv2d_input_grad(
    input_shape: &[usize],
    kernel: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let probe = Tensor {
        shape: input_shape.to_vec(),
        data: Vec::new(),
    };
    let g = conv_geom(&probe, kernel, stride, padding)?;
    check_upstream(&g, upstream)?;
    let mut gi = Tensor::zeros(input_shape);
    let k = kernel.data();
    let up = upstream.data();
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for ni in 0..g.n {
        for oi in 0..g.o {
            let src = &up[(ni * g.o + oi) * plane_out..][..plane_out];
            for ci in 0..g.c {
                let dst = &mut gi.data[(ni * g.c + ci) * plane_in..][..plane_in];
                let kbase = (oi * g.c + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (r0, r1) = valid_range(g.oh, g.h, ki, g.stride, g.padding);
                    for kj in 0..g.kw {
                        let wv = k[kbase + ki * g.kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let (c0, c1) = valid_range(g.ow, g.w, kj, g.stride, g.padding);
                        for r in r0..r1 {
                            let ih = r * g.stride + ki - g.padding;
                            let srow = &src[r * g.ow + c0..r * g.ow + c1];
                            let iw0 = c0 * g.stride + kj - g.padding;
                            if g.stride == 1 {
                                let drow = &mut dst[ih * g.w + iw0..][..c1 - c0];
                                for (d, s) in drow.iter_mut().zip(srow) {
                                    *d += wv * s;
                                }
                            } else {
                                for (t, s) in srow.iter().enumerate() {
                                    dst[ih * g.w + iw0 + t * g.stride] += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gi)
}

/// Gradient of `sum(upstream ⊙ conv2d(input, kernel))` with respect to a
/// kernel of shape `kernel_shape`.
pub fn conv2d_kernel_grad(
    input: &Tensor,
    kernel_shape: &[usize],
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let probe = Tensor {
        shape: kernel_shape.to_vec(),
        data: Vec::new(),
    };
    let g = conv_geom(input, &probe, stride, padding)?;
    check_upstream(&g, upstream)?;
    let mut gk = Tensor::zeros(kernel_shape);
    let x = input.data();
    let up = upstream.data();
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for ni in 0..g.n {
        for oi in 0..g.o {
            let src_up = &up[(ni * g.o + oi) * plane_out..][..plane_out];
            for ci in 0..g.c {
                let src = &x[(ni * g.c + ci) * plane_in..][..plane_in];
                let kbase = (oi * g.c + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (r0, r1) = valid_range(g.oh, g.h, ki, g.stride, g.padding);
                    for kj in 0..g.kw {
                        let (c0, c1) = valid_range(g.ow, g.w, kj, g.stride, g.padding);
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let ih = r * g.stride + ki - g.padding;
                            let urow = &src_up[r * g.ow + c0..r * g.ow + c1];
                            let iw0 = c0 * g.stride + kj - g.padding;
                            if g.stride == 1 {
                                acc += dot(urow, &src[ih * g.w + iw0..][..c1 - c0]);
                            } else {
                                for (t, u) in urow.iter().enumerate() {
                                    acc += u * src[ih * g.w + iw0 + t * g.stride];
                                }
                            }
                        }
                        gk.data[kbase + ki * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
    Ok(gk)
}

/// Input and kernel gradients of `sum(upstream ⊙ conv2d(input, kernel))`.
pub fn conv2d_grads(
    input: &Tensor,
    kernel: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let gi = conv2d_input_grad(input.shape(), kernel, upstream, stride, padding)?;
    let gk = conv2d_kernel_grad(input, kernel.shape(), upstream, stride, padding)?;
    Ok((gi, gk))
}

/// Winning input positions (flat indices into the pooled tensor's input) of
/// a 2×2 max pool, one per output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 non-overlapping max pooling; ties go to the first position in
/// row-major order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2 needs even spatial extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + 2 * r * w + 2 * col;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * r + dr) * w + 2 * col + dc;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = plane * oh * ow + r * ow + col;
                out.data[o] = x[best];
                argmax[o] = best;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream value to its recorded argmax; zeros elsewhere.
pub fn maxpool2_backward(indices: &PoolIndices, upstream: &Tensor) -> Result<Tensor> {
    if upstream.len() != indices.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool2_backward: upstream has {} elements, pooling produced {}",
            upstream.len(),
            indices.argmax.len()
        )));
    }
    let mut gi = Tensor::zeros(&indices.input_shape);
    for (&idx, &u) in indices.argmax.iter().zip(upstream.data()) {
        gi.data[idx] += u;
    }
    Ok(gi)
}

/// Central-difference gradient of `f` at `point`.
pub fn finite_difference<F>(mut f: F, point: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = f(&probe);
        probe.data[i] = orig - eps;
        let down = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * eps);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    /// Quadruple-loop direct summation, kept deliberately naive.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, w) = x.dims4().unwrap();
        let (o, _, kh, kw) = k.dims4().unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        for ni in 0..n {
            for oi in 0..o {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for a in 0..kh {
                                for b in 0..kw {
                                    let ih = (r * stride + a) as isize - pad as isize;
                                    let iw = (q * stride + b) as isize - pad as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                        continue;
                                    }
                                    acc += x.data[((ni * c + ci) * h + ih as usize) * w + iw as usize]
                                        * k.data[((oi * c + ci) * kh + a) * kw + b];
                                }
                            }
                        }
                        out.data[((ni * o + oi) * oh + r) * ow + q] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y, Tensor::zeros(&[1, 1, 3, 3]));
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let k = t(&[1, 1, 1, 1], &[1.]);
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = SeededRng::new(11);
        let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
        let k = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let want = conv_oracle(&x, &k, stride, pad);
            assert_eq!(y.shape(), want.shape());
            assert!(y.max_abs_diff(&want).unwrap() < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut rng = SeededRng::new(3);
        let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
        let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let a = -1.7;
        let lhs = conv2d(&x.scale(a), &k, 1, 1).unwrap();
        let rhs = conv2d(&x, &k, 1, 1).unwrap().scale(a);
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeededRng::new(5);
        let x = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng);
        let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let up = Tensor::zeros(&[1, 3, 4, 4]);
        let (gi, gk) = conv2d_grads(&x, &k, &up, 1, 1).unwrap();
        assert_eq!(gi, Tensor::zeros(x.shape()));
        assert_eq!(gk, Tensor::zeros(k.shape()));
    }

    #[test]
    fn scalar_chain_rule() {
        let (a, w, u) = (1.5, -2.0, 0.25);
        let (gi, gk) = conv2d_grads(
            &t(&[1, 1, 1, 1], &[a]),
            &t(&[1, 1, 1, 1], &[w]),
            &t(&[1, 1, 1, 1], &[u]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(gi.data(), &[u * w]);
        assert_eq!(gk.data(), &[u * a]);
    }

    #[test]
    fn upstream_shape_is_checked() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[2, 1, 3, 3]);
        let up = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_grads(&x, &k, &up, 1, 1).is_err());
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let mut rng = SeededRng::new(21);
        for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
            let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
            let k = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let up = Tensor::randn(y.shape(), 1.0, &mut rng);
            let (gi, gk) = conv2d_grads(&x, &k, &up, stride, pad).unwrap();
            let fi = finite_difference(|p| conv2d(p, &k, stride, pad).unwrap().dot(&up).unwrap(), &x, 1e-5);
            let fk = finite_difference(|p| conv2d(&x, p, stride, pad).unwrap().dot(&up).unwrap(), &k, 1e-5);
            assert!(rel_err(&gi, &fi) < 1e-6);
            assert!(rel_err(&gk, &fk) < 1e-6);
        }
    }

    #[test]
    fn conv_grads_pass_dot_product_test() {
        let mut rng = SeededRng::new(8);
        let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let k = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let dx = Tensor::randn(x.shape(), 1.0, &mut rng);
        let dk = Tensor::randn(k.shape(), 1.0, &mut rng);
        let up = Tensor::randn(&[2, 2, 6, 6], 1.0, &mut rng);
        let (gi, gk) = conv2d_grads(&x, &k, &up, 1, 1).unwrap();
        let analytic = gi.dot(&dx).unwrap() + gk.dot(&dk).unwrap();
        let eps = 1e-5;
        let f = |s: f64| {
            let xs = x.add(&dx.scale(s)).unwrap();
            let ks = k.add(&dk.scale(s)).unwrap();
            conv2d(&xs, &ks, 1, 1).unwrap().dot(&up).unwrap()
        };
        let numeric = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((analytic - numeric).abs() <= 1e-5 * analytic.abs());
    }

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).unwrap().norm() / b.norm().max(1e-300)
    }

    #[test]
    fn maxpool_single_window() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax(), &[3]);
    }

    #[test]
    fn maxpool_constant_field_routes_to_first() {
        let x = Tensor::full(&[1, 1, 4, 4], 2.5);
        let (y, idx) = maxpool2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
        let g = maxpool2_backward(&idx, &Tensor::full(y.shape(), 1.0)).unwrap();
        // top-left of every window wins
        let expect: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g.data(), &expect[..]);
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = SeededRng::new(2);
        let x = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng);
        let (y, _) = maxpool2(&x).unwrap();
        for c in 0..2 {
            for r in 0..2 {
                for q in 0..2 {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            best = best.max(x.data()[c * 16 + (2 * r + a) * 4 + 2 * q + b]);
                        }
                    }
                    assert_eq!(y.data()[c * 4 + r * 2 + q], best);
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        assert!(matches!(maxpool2(&Tensor::zeros(&[1, 1, 3, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_difference_of_sum_and_square() {
        let p = t(&[3], &[0.5, -1.0, 2.0]);
        let g = finite_difference(|x| x.sum(), &p, 1e-4);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-10));
        let g = finite_difference(|x| 0.5 * x.dot(x).unwrap(), &p, 1e-4);
        assert!(g.max_abs_diff(&p).unwrap() < 1e-8);
    }
}
