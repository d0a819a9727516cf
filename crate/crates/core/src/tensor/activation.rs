use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(T::zero()))
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, cached_x: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != cached_x.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", grad_out.shape(), cached_x.shape()),
        ));
    }
    Ok(Tensor::from_fn(cached_x.shape(), |i| {
        if cached_x.data()[i] > T::zero() {
            grad_out.data()[i]
        } else {
            T::zero()
        }
    }))
}

/// Inverted dropout. Returns the output and the multiplicative mask
/// (entries are 0 or `1/(1-rate)`); in eval mode the mask is all ones.
pub fn dropout_forward<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    train: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), Tensor::full(x.shape(), T::one())));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.uniform() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let y = Tensor::from_fn(x.shape(), |i| x.data()[i] * mask.data()[i]);
    Ok((y, mask))
}
