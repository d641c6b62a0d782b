//! 2× spatial down/up-sampling used by the optional downsampled model variant.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn even_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 2 {
        return Err(Error::geometry(op, format!("needs rank ≥ 2, got {shape:?}")));
    }
    let (h, w) = (shape[r - 2], shape[r - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::geometry(op, format!("spatial size {h}×{w} must be even")));
    }
    Ok((shape[..r - 2].iter().product(), h, w))
}

fn with_spatial(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

/// Mean of each non-overlapping 2×2 block.
pub fn avg_pool2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (lead, h, w) = even_dims(x.shape(), "avg_pool2x")?;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let xd = x.data();
    let mut out = Vec::with_capacity(lead * ho * wo);
    for p in 0..lead {
        for i in 0..ho {
            for j in 0..wo {
                let at = |di: usize, dj: usize| xd[(p * h + 2 * i + di) * w + 2 * j + dj];
                out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
            }
        }
    }
    Tensor::from_vec(&with_spatial(x.shape(), ho, wo), out)
}

pub fn avg_pool2x_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let up = upsample2x(dy)?;
    if up.shape() != in_shape {
        return Err(Error::ShapeMismatch { op: "avg_pool2x backward", left: up.shape().to_vec(), right: in_shape.to_vec() });
    }
    Ok(up.scale(T::from_f64(0.25)))
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::geometry("upsample2x", format!("needs rank ≥ 2, got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let lead = x.len() / (h * w);
    let xd = x.data();
    let mut out = Vec::with_capacity(x.len() * 4);
    for p in 0..lead {
        for i in 0..2 * h {
            for j in 0..2 * w {
                out.push(xd[(p * h + i / 2) * w + j / 2]);
            }
        }
    }
    Tensor::from_vec(&with_spatial(x.shape(), 2 * h, 2 * w), out)
}

pub fn upsample2x_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let summed = avg_pool2x(dy)?.scale(T::from_f64(4.0));
    if summed.shape() != in_shape {
        return Err(Error::ShapeMismatch { op: "upsample2x backward", left: summed.shape().to_vec(), right: in_shape.to_vec() });
    }
    Ok(summed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_then_upsample() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 4], vec![1., 3., 0., 0., 5., 7., 4., 8.]).unwrap();
        let p = avg_pool2x(&x).unwrap();
        assert_eq!(p.shape(), &[1, 1, 1, 2]);
        assert_eq!(p.data(), &[4., 3.]);
        let u = upsample2x(&p).unwrap();
        assert_eq!(u.data(), &[4., 4., 3., 3., 4., 4., 3., 3.]);
        assert!(avg_pool2x(&Tensor::<f64>::zeros(&[1, 3, 3]).unwrap()).is_err());
    }
}
