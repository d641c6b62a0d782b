//! 2-D convolution (cross-correlation) forward and backward kernels.
//!
//! Two routines back every convolution:
//!
//! * **direct**: used when each group holds a single input and output
//!   channel (depthwise). Loops run output-row-major with the kernel tap as
//!   the middle loop, so the innermost loop is a contiguous `axpy` over one
//!   output row.
//! * **im2col + GEMM**: every other case. Each group's receptive fields are
//!   unrolled into a `(Cin/g·k²) × (H'·W')` matrix and multiplied by the
//!   group's weight matrix. A 1×1, stride-1, unpadded conv skips the unroll.

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{matmul, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1 with `(k-1)/2` padding, which preserves spatial size for odd `k`.
    pub fn same(kernel: usize, groups: usize) -> Self {
        ConvSpec { stride: 1, padding: (kernel - 1) / 2, groups }
    }
}

/// Fully resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub spec: ConvSpec,
}

impl ConvShape {
    pub fn resolve(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<Self> {
        let op = "conv2d";
        let [batch, in_channels, height, width] = *x else {
            return Err(Error::geometry(op, format!("input must be [B,C,H,W], got {x:?}")));
        };
        let [out_channels, cin_per_group, kh, kw] = *w else {
            return Err(Error::geometry(op, format!("weight must be [Cout,Cin/g,k,k], got {w:?}")));
        };
        if kh != kw {
            return Err(Error::geometry(op, format!("kernel must be square, got {kh}×{kw}")));
        }
        if spec.stride == 0 || spec.groups == 0 {
            return Err(Error::geometry(op, format!("stride and groups must be ≥ 1, got {spec:?}")));
        }
        if !in_channels.is_multiple_of(spec.groups) || !out_channels.is_multiple_of(spec.groups) {
            return Err(Error::geometry(
                op,
                format!("groups {} must divide Cin {in_channels} and Cout {out_channels}", spec.groups),
            ));
        }
        if cin_per_group * spec.groups != in_channels {
            return Err(Error::geometry(
                op,
                format!(
                    "channel mismatch: input has {in_channels} channels, weight expects {} ({} per group × {} groups)",
                    cin_per_group * spec.groups,
                    cin_per_group,
                    spec.groups
                ),
            ));
        }
        let out_dim = |n: usize, axis: &str| -> Result<usize> {
            let span = n + 2 * spec.padding;
            if span < kh || !(span - kh).is_multiple_of(spec.stride) {
                return Err(Error::geometry(
                    op,
                    format!(
                        "{axis}: ({n} + 2·{} − {kh})/{} + 1 is not a positive integer",
                        spec.padding, spec.stride
                    ),
                ));
            }
            Ok((span - kh) / spec.stride + 1)
        };
        Ok(ConvShape {
            batch,
            in_channels,
            out_channels,
            height,
            width,
            kernel: kh,
            out_height: out_dim(height, "height")?,
            out_width: out_dim(width, "width")?,
            spec,
        })
    }

    fn cin_g(&self) -> usize {
        self.in_channels / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.out_channels / self.spec.groups
    }
    fn padded(&self) -> (usize, usize) {
        (self.height + 2 * self.spec.padding, self.width + 2 * self.spec.padding)
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }
}

/// Zero-padded copy of one sample `[C,H,W]`.
fn pad_sample<T: Scalar>(src: &[T], channels: usize, h: usize, w: usize, pad: usize, dst: &mut Vec<T>) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    dst.clear();
    dst.resize(channels * hp * wp, T::zero());
    for c in 0..channels {
        for i in 0..h {
            dst[(c * hp + i + pad) * wp + pad..][..w].copy_from_slice(&src[(c * h + i) * w..][..w]);
        }
    }
}

fn im2col<T: Scalar>(xpad: &[T], s: &ConvShape, group: usize, col: &mut [T]) {
    let (hp, wp) = s.padded();
    let (k, stride, ho, wo) = (s.kernel, s.spec.stride, s.out_height, s.out_width);
    for cl in 0..s.cin_g() {
        let plane = &xpad[(group * s.cin_g() + cl) * hp * wp..][..hp * wp];
        for u in 0..k {
            for v in 0..k {
                let row = &mut col[((cl * k + u) * k + v) * ho * wo..][..ho * wo];
                for i in 0..ho {
                    let src = &plane[(i * stride + u) * wp + v..];
                    let dst = &mut row[i * wo..][..wo];
                    if stride == 1 {
                        dst.copy_from_slice(&src[..wo]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[j * stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], s: &ConvShape, group: usize, dxpad: &mut [T]) {
    let (hp, wp) = s.padded();
    let (k, stride, ho, wo) = (s.kernel, s.spec.stride, s.out_height, s.out_width);
    for cl in 0..s.cin_g() {
        let plane = &mut dxpad[(group * s.cin_g() + cl) * hp * wp..][..hp * wp];
        for u in 0..k {
            for v in 0..k {
                let row = &col[((cl * k + u) * k + v) * ho * wo..][..ho * wo];
                for i in 0..ho {
                    let dst = &mut plane[(i * stride + u) * wp + v..];
                    let src = &row[i * wo..][..wo];
                    if stride == 1 {
                        for (d, &g) in dst[..wo].iter_mut().zip(src) {
                            *d += g;
                        }
                    } else {
                        for (j, &g) in src.iter().enumerate() {
                            dst[j * stride] += g;
                        }
                    }
                }
            }
        }
    }
}

/// `out[b,o,i,j] = bias[o] + Σ w[o,c,u,v]·xpad[b,c,i·s+u,j·s+v]` within each group.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
    let s = ConvShape::resolve(x.shape(), w.shape(), spec)?;
    if bias.shape() != [s.out_channels] {
        return Err(Error::ShapeMismatch { op: "conv2d bias", left: bias.shape().to_vec(), right: vec![s.out_channels] });
    }
    let mut out = Tensor::zeros(&s.output_shape())?;
    if s.is_depthwise() {
        direct_forward(x.data(), w.data(), &s, out.data_mut());
    } else {
        gemm_forward(x.data(), w.data(), &s, out.data_mut());
    }
    let plane = s.out_height * s.out_width;
    for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[idx % s.out_channels];
        if b != T::zero() {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Gradients `(dx, dw, dbias)` of a convolution given the upstream gradient `dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = ConvShape::resolve(x.shape(), w.shape(), spec)?;
    if dy.shape() != s.output_shape() {
        return Err(Error::ShapeMismatch { op: "conv2d backward", left: dy.shape().to_vec(), right: s.output_shape().to_vec() });
    }
    let mut dx = x.zeros_like();
    let mut dw = w.zeros_like();
    if s.is_depthwise() {
        direct_backward(x.data(), w.data(), dy.data(), &s, dx.data_mut(), dw.data_mut());
    } else {
        gemm_backward(x.data(), w.data(), dy.data(), &s, dx.data_mut(), dw.data_mut());
    }
    let plane = s.out_height * s.out_width;
    let mut db = vec![T::zero(); s.out_channels];
    for (idx, chunk) in dy.data().chunks(plane).enumerate() {
        db[idx % s.out_channels] += chunk.iter().copied().sum::<T>();
    }
    Ok((dx, dw, Tensor::from_vec(&[s.out_channels], db)?))
}

fn gemm_forward<T: Scalar>(x: &[T], w: &[T], s: &ConvShape, out: &mut [T]) {
    let (cin_g, cout_g, k) = (s.cin_g(), s.cout_g(), s.kernel);
    let rows = cin_g * k * k;
    let hw = s.height * s.width;
    let ohw = s.out_height * s.out_width;
    let mut xpad = Vec::new();
    let mut col = vec![T::zero(); if s.is_plain_pointwise() { 0 } else { rows * ohw }];
    for b in 0..s.batch {
        let sample = &x[b * s.in_channels * hw..][..s.in_channels * hw];
        let out_sample = &mut out[b * s.out_channels * ohw..][..s.out_channels * ohw];
        if !s.is_plain_pointwise() {
            pad_sample(sample, s.in_channels, s.height, s.width, s.spec.padding, &mut xpad);
        }
        for g in 0..s.spec.groups {
            let wg = &w[g * cout_g * rows..][..cout_g * rows];
            let og = &mut out_sample[g * cout_g * ohw..][..cout_g * ohw];
            if s.is_plain_pointwise() {
                let xg = &sample[g * cin_g * hw..][..cin_g * hw];
                matmul(cout_g, rows, ohw, wg, false, xg, false, og, false);
            } else {
                im2col(&xpad, s, g, &mut col);
                matmul(cout_g, rows, ohw, wg, false, &col, false, og, false);
            }
        }
    }
}

fn gemm_backward<T: Scalar>(x: &[T], w: &[T], dy: &[T], s: &ConvShape, dx: &mut [T], dw: &mut [T]) {
    let (cin_g, cout_g, k) = (s.cin_g(), s.cout_g(), s.kernel);
    let rows = cin_g * k * k;
    let hw = s.height * s.width;
    let ohw = s.out_height * s.out_width;
    let (hp, wp) = s.padded();
    let pointwise = s.is_plain_pointwise();
    let mut xpad = Vec::new();
    let mut dxpad = vec![T::zero(); if pointwise { 0 } else { s.in_channels * hp * wp }];
    let mut col = vec![T::zero(); if pointwise { 0 } else { rows * ohw }];
    let mut dcol = vec![T::zero(); if pointwise { 0 } else { rows * ohw }];
    for b in 0..s.batch {
        let sample = &x[b * s.in_channels * hw..][..s.in_channels * hw];
        let dy_sample = &dy[b * s.out_channels * ohw..][..s.out_channels * ohw];
        let dx_sample = &mut dx[b * s.in_channels * hw..][..s.in_channels * hw];
        if !pointwise {
            pad_sample(sample, s.in_channels, s.height, s.width, s.spec.padding, &mut xpad);
            dxpad.iter_mut().for_each(|v| *v = T::zero());
        }
        for g in 0..s.spec.groups {
            let wg = &w[g * cout_g * rows..][..cout_g * rows];
            let dwg = &mut dw[g * cout_g * rows..][..cout_g * rows];
            let dyg = &dy_sample[g * cout_g * ohw..][..cout_g * ohw];
            if pointwise {
                let xg = &sample[g * cin_g * hw..][..cin_g * hw];
                matmul(cout_g, ohw, rows, dyg, false, xg, true, dwg, true);
                let dxg = &mut dx_sample[g * cin_g * hw..][..cin_g * hw];
                matmul(rows, cout_g, ohw, wg, true, dyg, false, dxg, false);
            } else {
                im2col(&xpad, s, g, &mut col);
                matmul(cout_g, ohw, rows, dyg, false, &col, true, dwg, true);
                matmul(rows, cout_g, ohw, wg, true, dyg, false, &mut dcol, false);
                col2im(&dcol, s, g, &mut dxpad);
            }
        }
        if !pointwise {
            let pad = s.spec.padding;
            for c in 0..s.in_channels {
                for i in 0..s.height {
                    let src = &dxpad[(c * hp + i + pad) * wp + pad..][..s.width];
                    dx_sample[(c * s.height + i) * s.width..][..s.width].copy_from_slice(src);
                }
            }
        }
    }
}

fn direct_forward<T: Scalar>(x: &[T], w: &[T], s: &ConvShape, out: &mut [T]) {
    let (k, stride, ho, wo) = (s.kernel, s.spec.stride, s.out_height, s.out_width);
    let (hp, wp) = s.padded();
    let hw = s.height * s.width;
    let mut xpad = Vec::new();
    for b in 0..s.batch {
        let sample = &x[b * s.in_channels * hw..][..s.in_channels * hw];
        pad_sample(sample, s.in_channels, s.height, s.width, s.spec.padding, &mut xpad);
        for c in 0..s.in_channels {
            let plane = &xpad[c * hp * wp..][..hp * wp];
            let taps = &w[c * k * k..][..k * k];
            let out_plane = &mut out[(b * s.out_channels + c) * ho * wo..][..ho * wo];
            for i in 0..ho {
                let acc = &mut out_plane[i * wo..][..wo];
                for u in 0..k {
                    let in_row = &plane[(i * stride + u) * wp..][..wp];
                    for v in 0..k {
                        let wt = taps[u * k + v];
                        if stride == 1 {
                            for (a, &xv) in acc.iter_mut().zip(&in_row[v..v + wo]) {
                                *a += wt * xv;
                            }
                        } else {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += wt * in_row[j * stride + v];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn direct_backward<T: Scalar>(x: &[T], w: &[T], dy: &[T], s: &ConvShape, dx: &mut [T], dw: &mut [T]) {
    let (k, stride, ho, wo) = (s.kernel, s.spec.stride, s.out_height, s.out_width);
    let (hp, wp) = s.padded();
    let pad = s.spec.padding;
    let hw = s.height * s.width;
    let mut xpad = Vec::new();
    let mut dplane = vec![T::zero(); hp * wp];
    for b in 0..s.batch {
        let sample = &x[b * s.in_channels * hw..][..s.in_channels * hw];
        pad_sample(sample, s.in_channels, s.height, s.width, pad, &mut xpad);
        for c in 0..s.in_channels {
            let plane = &xpad[c * hp * wp..][..hp * wp];
            let taps = &w[c * k * k..][..k * k];
            let dtaps = &mut dw[c * k * k..][..k * k];
            let g_plane = &dy[(b * s.out_channels + c) * ho * wo..][..ho * wo];
            dplane.iter_mut().for_each(|v| *v = T::zero());
            for i in 0..ho {
                let g_row = &g_plane[i * wo..][..wo];
                for u in 0..k {
                    let row_off = (i * stride + u) * wp;
                    for v in 0..k {
                        let wt = taps[u * k + v];
                        let mut acc = T::zero();
                        if stride == 1 {
                            let in_row = &plane[row_off + v..][..wo];
                            let d_row = &mut dplane[row_off + v..][..wo];
                            for ((d, &xv), &g) in d_row.iter_mut().zip(in_row).zip(g_row) {
                                acc += g * xv;
                                *d += wt * g;
                            }
                        } else {
                            for (j, &g) in g_row.iter().enumerate() {
                                acc += g * plane[row_off + j * stride + v];
                                dplane[row_off + j * stride + v] += wt * g;
                            }
                        }
                        dtaps[u * k + v] += acc;
                    }
                }
            }
            let dx_plane = &mut dx[(b * s.in_channels + c) * hw..][..hw];
            for i in 0..s.height {
                dx_plane[i * s.width..][..s.width].copy_from_slice(&dplane[(i + pad) * wp + pad..][..s.width]);
            }
        }
    }
}

/// Convolution weights and bias. `P` is a stored [`Tensor`] or a recorded
/// [`Var`](crate::autograd::Var).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<P> {
    pub weight: P,
    pub bias: P,
    pub spec: ConvSpec,
}

pub type Conv2dParams<T = f32> = Conv2d<Tensor<T>>;

impl<P> Conv2d<P> {
    pub fn map<Q, E>(&self, f: &mut impl FnMut(&P) -> Result<Q, E>) -> Result<Conv2d<Q>, E> {
        Ok(Conv2d { weight: f(&self.weight)?, bias: f(&self.bias)?, spec: self.spec })
    }
}

impl<T: Scalar> Conv2d<Tensor<T>> {
    /// Fan-in uniform init: weights in `±sqrt(1/(Cin/groups·k²))`, zero bias.
    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, spec: ConvSpec, rng: &mut Prng) -> Result<Self> {
        if spec.groups == 0 || !in_channels.is_multiple_of(spec.groups) || !out_channels.is_multiple_of(spec.groups) {
            return Err(Error::Config(format!(
                "groups {} must divide {in_channels} input and {out_channels} output channels",
                spec.groups
            )));
        }
        let cin_g = in_channels / spec.groups;
        let bound = (1.0 / (cin_g * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            weight: Tensor::uniform(&[out_channels, cin_g, kernel, kernel], -bound, bound, rng)?,
            bias: Tensor::zeros(&[out_channels])?,
            spec,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.spec.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Runs the convolution directly on tensors, outside any tape.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight, &self.bias, self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_kernel(channels_out: usize, cin_g: usize, k: usize, groups: usize) -> Tensor<f64> {
        let mut w = Tensor::zeros(&[channels_out, cin_g, k, k]).unwrap();
        let c = k / 2;
        for o in 0..channels_out {
            let ci = if groups == 1 { o } else { 0 };
            let off = ((o * cin_g + ci) * k + c) * k + c;
            w.data_mut()[off] = 1.0;
        }
        w
    }

    #[test]
    fn centered_delta_is_identity() {
        let mut rng = Prng::new(1);
        let x = Tensor::<f64>::uniform(&[2, 3, 6, 5], -1., 1., &mut rng).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = conv2d_forward(&x, &delta_kernel(3, 3, 3, 1), &b, ConvSpec::same(3, 1)).unwrap();
        assert_eq!(y, x);
        let y = conv2d_forward(&x, &delta_kernel(3, 1, 9, 3), &b, ConvSpec::same(9, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::<f32>::ones(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::zeros(&[3, 2, 3, 3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = conv2d_forward(&x, &w, &b, ConvSpec::same(3, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometry_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]).unwrap();
        let b = Tensor::zeros(&[4]).unwrap();
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        let err = conv2d_forward(&x, &w, &b, ConvSpec::same(3, 1)).unwrap_err();
        assert!(err.to_string().contains("channel mismatch"), "{err}");
        let w = Tensor::zeros(&[4, 2, 3, 3]).unwrap();
        assert!(conv2d_forward(&x, &w, &b, ConvSpec { stride: 2, padding: 0, groups: 1 }).is_ok());
        // (5 − 3)/2 + 1 = 2 is an integer; (6 − 3)/2 is not.
        let x6 = Tensor::<f32>::zeros(&[1, 2, 6, 6]).unwrap();
        let err = conv2d_forward(&x6, &w, &b, ConvSpec { stride: 2, padding: 0, groups: 1 }).unwrap_err();
        assert!(err.to_string().contains("(6 + 2·0 − 3)/2 + 1"), "{err}");
    }

    #[test]
    fn strided_output_size() {
        let x = Tensor::<f32>::ones(&[1, 1, 5, 5]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv2d_forward(&x, &w, &b, ConvSpec { stride: 2, padding: 1, groups: 1 }).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        // corner window covers 2×2 ones, center 3×3
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[4], 9.0);
    }

    #[test]
    fn param_counts() {
        let mut rng = Prng::new(0);
        let dense = Conv2dParams::<f32>::init(4, 4, 3, ConvSpec::same(3, 1), &mut rng).unwrap();
        assert_eq!(dense.param_count(), 148);
        let dw = Conv2dParams::<f32>::init(64, 64, 9, ConvSpec::same(9, 64), &mut rng).unwrap();
        assert_eq!(dw.param_count(), 5248);
        let bound = (1.0f32 / 81.0).sqrt();
        assert!(dw.weight.data().iter().all(|v| v.abs() <= bound));
    }
}
