use super::{Real, Tensor};
use crate::rng::Rng;

/// Fan-in / fan-out of a weight tensor.
///
/// Dense `[M, D]`: fan_in = D, fan_out = M.
/// Conv `[K, C, kh, kw]`: fan_in = C·kh·kw, fan_out = K·kh·kw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fans {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Fans {
    pub fn of_shape(shape: &[usize]) -> Fans {
        match shape {
            [m, d] => Fans {
                fan_in: *d,
                fan_out: *m,
            },
            [k, c, rest @ ..] => {
                let field: usize = rest.iter().product();
                Fans {
                    fan_in: c * field,
                    fan_out: k * field,
                }
            }
            [n] => Fans {
                fan_in: *n,
                fan_out: *n,
            },
            [] => Fans {
                fan_in: 1,
                fan_out: 1,
            },
        }
    }
}

pub fn xavier_bound(fans: Fans) -> f64 {
    (6.0 / (fans.fan_in + fans.fan_out) as f64).sqrt()
}

/// Glorot-uniform draw in `[-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]`.
pub fn xavier_init<T: Real>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let bound = xavier_bound(Fans::of_shape(shape));
    Tensor::from_fn(shape, |_| T::of(rng.uniform_range(-bound, bound)))
}
