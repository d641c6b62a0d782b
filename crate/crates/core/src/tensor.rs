//! Dense row-major tensors.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Prng;

/// Element type of a [`Tensor`]: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← alpha·a·b + beta·c` on strided row/column-major views.
    ///
    /// # Safety
    /// Every pointer plus its stride pattern must stay inside a live buffer
    /// and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix product `c[m×n] (+)= a[m×k] · b[k×n]` on contiguous slices.
/// `transpose_a`/`transpose_b` read the operand as stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    transpose_a: bool,
    b: &[T],
    transpose_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if transpose_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths were asserted; `c` is a unique borrow.
    unsafe {
        T::gemm(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Checks that a shape is nonempty with every dimension ≥ 1.
pub fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "rank must be ≥ 1" });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "dimensions must be ≥ 1" });
    }
    Ok(shape.iter().product())
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", std::any::type_name::<T>(), self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = validate_shape(shape)?;
        if data.len() != expected {
            return Err(Error::LengthMismatch { len: data.len(), expected, shape: shape.to_vec() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = validate_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; n] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Uniform samples in `[lo, hi)`, drawn in row-major order.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Prng) -> Result<Self> {
        let n = validate_shape(shape)?;
        let data = (0..n).map(|_| T::from_f64(rng.uniform(lo, hi))).collect();
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Row-major strides derived from the shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for d in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.shape[d + 1];
        }
        strides
    }

    pub fn get(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let offset = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum::<usize>();
        self.data[offset]
    }

    /// `(B, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::geometry(op, format!("expected a rank-4 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op, left: self.shape.clone(), right: other.shape.clone() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "add_assign", left: self.shape.clone(), right: other.shape.clone() });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Self> {
        let n = validate_shape(new_shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch { op: "reshape", left: self.shape, right: new_shape.to_vec() });
        }
        Ok(Tensor { shape: new_shape.to_vec(), data: self.data })
    }

    /// Zero-pads the last two dimensions by `pad` on every side.
    pub fn pad2d(&self, pad: usize) -> Result<Self> {
        let (lead, h, w) = self.split_spatial("pad2d")?;
        if pad == 0 {
            return Ok(self.clone());
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![T::zero(); lead * hp * wp];
        for p in 0..lead {
            for i in 0..h {
                let src = &self.data[(p * h + i) * w..][..w];
                out[(p * hp + i + pad) * wp + pad..][..w].copy_from_slice(src);
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = hp;
        shape[r - 1] = wp;
        Ok(Tensor { shape, data: out })
    }

    /// Removes `pad` rows/columns from every side of the last two dimensions.
    pub fn crop2d(&self, pad: usize) -> Result<Self> {
        let (lead, hp, wp) = self.split_spatial("crop2d")?;
        if 2 * pad >= hp || 2 * pad >= wp {
            return Err(Error::geometry("crop2d", format!("cannot crop {pad} from {hp}×{wp}")));
        }
        let (h, w) = (hp - 2 * pad, wp - 2 * pad);
        let mut out = Vec::with_capacity(lead * h * w);
        for p in 0..lead {
            for i in 0..h {
                out.extend_from_slice(&self.data[(p * hp + i + pad) * wp + pad..][..w]);
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Ok(Tensor { shape, data: out })
    }

    fn split_spatial(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        let r = self.shape.len();
        if r < 2 {
            return Err(Error::geometry(op, format!("needs rank ≥ 2, got {:?}", self.shape)));
        }
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        Ok((self.data.len() / (h * w), h, w))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { op: "max_abs_diff", left: self.shape.clone(), right: other.shape.clone() });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn construction() {
        assert_eq!(Tensor::<f32>::zeros(&[2, 2]).unwrap().data(), &[0.0; 4]);
        assert_eq!(t(&[3], &[1., 2., 3.]).data(), &[1., 2., 3.]);
        let err = Tensor::<f32>::from_vec(&[2], vec![1., 2., 3.]).unwrap_err();
        assert!(err.to_string().contains("length 3 ≠ product 2"), "{err}");
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn uniform_fill_is_seeded() {
        let a = Tensor::<f32>::uniform(&[4, 4], -1.0, 1.0, &mut Prng::new(5)).unwrap();
        let b = Tensor::<f32>::uniform(&[4, 4], -1.0, 1.0, &mut Prng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn elementwise_ops() {
        assert_eq!(t(&[2], &[1., 2.]).add(&t(&[2], &[3., 4.])).unwrap().data(), &[4., 6.]);
        assert_eq!(t(&[2], &[2., 3.]).mul(&t(&[2], &[4., 5.])).unwrap().data(), &[8., 15.]);
        let x = t(&[3], &[0.5, -2., 7.]);
        assert_eq!(x.sub(&x).unwrap().data(), &[0.; 3]);
        let err = t(&[2], &[1., 2.]).add(&t(&[1, 2], &[1., 2.])).unwrap_err();
        assert!(err.to_string().contains("[2] vs [1, 2]"), "{err}");
    }

    #[test]
    fn scaling() {
        assert_eq!(t(&[2], &[1., -2.]).scale(0.0).data(), &[0., 0.]);
        assert_eq!(t(&[1], &[3.]).scale(2.5).data(), &[7.5]);
        let x = t(&[2], &[1.25, -4.]);
        assert_eq!(x.scale(1.0), x);
    }

    #[test]
    fn reshaping() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(x.reshape(&[6]).unwrap().data(), x.data());
        let frames = Tensor::<f32>::zeros(&[1, 10, 1, 4, 4]).unwrap();
        assert_eq!(frames.reshape(&[1, 10, 4, 4]).unwrap().shape(), &[1, 10, 4, 4]);
        assert!(x.reshape(&[4]).is_err());
    }

    #[test]
    fn padding() {
        let x = t(&[1, 1], &[5.]);
        let p = x.pad2d(1).unwrap();
        assert_eq!(p.shape(), &[3, 3]);
        assert_eq!(p.data(), &[0., 0., 0., 0., 5., 0., 0., 0., 0.]);
        assert_eq!(x.pad2d(0).unwrap(), x);
        let y = Tensor::<f32>::ones(&[1, 1, 4, 4]).unwrap().pad2d(4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 12, 12]);
    }

    #[test]
    fn strides_are_row_major() {
        let x = Tensor::<f32>::zeros(&[2, 3, 4]).unwrap();
        assert_eq!(x.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = Prng::new(3);
        let a = Tensor::<f64>::uniform(&[3, 5], -1., 1., &mut rng).unwrap();
        let b = Tensor::<f64>::uniform(&[5, 4], -1., 1., &mut rng).unwrap();
        let mut c = vec![0.0; 12];
        matmul(3, 5, 4, a.data(), false, b.data(), false, &mut c, false);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..5).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // a^T stored as [5,3], b^T stored as [4,5]
        let at: Vec<f64> = (0..15).map(|idx| a.get(&[idx % 3, idx / 3])).collect();
        let bt: Vec<f64> = (0..20).map(|idx| b.get(&[idx % 5, idx / 5])).collect();
        let mut c2 = vec![0.0; 12];
        matmul(3, 5, 4, &at, true, &bt, true, &mut c2, false);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn arb_tensor() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
        (1usize..4, 1usize..5, 1usize..6).prop_flat_map(|(a, b, c)| {
            let n = a * b * c;
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(x, y)| {
                    (Tensor::from_vec(&[a, b, c], x).unwrap(), Tensor::from_vec(&[a, b, c], y).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn add_commutes_and_has_identity((a, b) in arb_tensor()) {
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            prop_assert_eq!(a.add(&a.zeros_like()).unwrap(), a.clone());
        }

        #[test]
        fn reshape_round_trip_preserves_values((a, _b) in arb_tensor()) {
            let flat = a.reshape(&[a.len()]).unwrap();
            prop_assert_eq!(flat.sum(), a.sum());
            prop_assert_eq!(flat.reshape(a.shape()).unwrap(), a.clone());
        }

        #[test]
        fn pad_then_crop_is_identity((a, _b) in arb_tensor(), pad in 0usize..4) {
            prop_assert_eq!(a.pad2d(pad).unwrap().crop2d(pad).unwrap(), a.clone());
        }
    }
}
