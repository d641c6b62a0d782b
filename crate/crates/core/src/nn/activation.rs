use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x · sigmoid(x)`
pub fn silu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

/// `dy · σ(x)·(1 + x·(1 − σ(x)))`
pub fn silu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::ShapeMismatch { op: "silu backward", left: dy.shape().to_vec(), right: x.shape().to_vec() });
    }
    x.zip_map(dy, "silu backward", |v, g| {
        let s = sigmoid(v);
        g * s * (T::one() + v * (T::one() - s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let x = Tensor::<f64>::from_vec(&[4], vec![0.0, 1.0, 20.0, -800.0]).unwrap();
        let y = silu_forward(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.7310585786300049).abs() < 1e-12);
        assert!((y.data()[2] - 20.0).abs() < 1e-7);
        assert!(y.data()[3].is_finite() && y.data()[3].abs() < 1e-12);
        let g = silu_backward(&x, &Tensor::ones(&[4]).unwrap()).unwrap();
        assert_eq!(g.data()[0], 0.5);
        assert!(g.is_finite());
    }

    #[test]
    fn single_precision_value() {
        let y = silu_forward(&Tensor::<f32>::from_vec(&[1], vec![1.0]).unwrap());
        assert!((y.data()[0] - 0.731_058_6).abs() < 1e-7);
    }
}
