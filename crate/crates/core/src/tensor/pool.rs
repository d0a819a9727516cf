use super::{conv_output_size, Real, Tensor};
use crate::error::{Error, Result};

/// Flat input offsets of the winning element for each pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Max pooling without padding. Ties go to the first element in scan order.
pub fn maxpool2d_forward<T: Real>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndex)> {
    let (n, c, h, w) = input.dims4("maxpool2d_forward")?;
    if k == 0 || k > h || k > w {
        return Err(Error::shape(
            "maxpool2d_forward",
            format!("window {k} larger than input {h}x{w}"),
        ));
    }
    let oh = conv_output_size(h, k, stride, 0)?;
    let ow = conv_output_size(w, k, stride, 0)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for a in 0..k {
                    for b in 0..k {
                        let idx = base + (i * stride + a) * w + j * stride + b;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![n, c, oh, ow], out)?,
        PoolIndex {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward<T: Real>(grad_out: &Tensor<T>, index: &PoolIndex) -> Result<Tensor<T>> {
    if grad_out.len() != index.argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} gradients for {} pooled cells", grad_out.len(), index.argmax.len()),
        ));
    }
    let mut grad = Tensor::zeros(&index.input_shape);
    let len = grad.len();
    let g = grad.data_mut();
    for (&pos, &v) in index.argmax.iter().zip(grad_out.data()) {
        if pos >= len {
            return Err(Error::IndexOutOfBounds {
                op: "maxpool2d_backward",
                index: pos,
                len,
            });
        }
        g[pos] += v;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn picks_max() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn constant_input_ties_to_first() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 0.5);
        let (y, idx) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        assert_eq!(idx.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn matches_window_enumeration() {
        let mut rng = Rng::new(11);
        let x = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |_| rng.uniform());
        let (y, _) = maxpool2d_forward(&x, 2, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let window = [
                    x.data()[(2 * i) * 6 + 2 * j],
                    x.data()[(2 * i) * 6 + 2 * j + 1],
                    x.data()[(2 * i + 1) * 6 + 2 * j],
                    x.data()[(2 * i + 1) * 6 + 2 * j + 1],
                ];
                let m = window.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(y.data()[i * 3 + j], m);
            }
        }
    }

    #[test]
    fn window_too_large() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 3]);
        assert!(maxpool2d_forward(&x, 3, 1).is_err());
    }

    #[test]
    fn backward_routes_and_conserves() {
        let mut rng = Rng::new(12);
        let x = Tensor::<f64>::from_fn(&[2, 3, 6, 6], |_| rng.uniform());
        let (y, idx) = maxpool2d_forward(&x, 2, 2).unwrap();
        let g = Tensor::from_fn(y.shape(), |_| rng.uniform_range(-1.0, 1.0));
        let gi = maxpool2d_backward(&g, &idx).unwrap();
        assert!((gi.sum() - g.sum()).abs() < 1e-12);
        let zero = maxpool2d_backward(&Tensor::<f64>::zeros(y.shape()), &idx).unwrap();
        assert_eq!(zero.sq_norm(), 0.0);

        // finite differences (inputs are distinct almost surely, so max is locally linear)
        let h = 1e-6;
        let loss = |x: &Tensor<f64>| {
            let (y, _) = maxpool2d_forward(x, 2, 2).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((num - gi.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn single_window_gets_all_gradient() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (_, idx) = maxpool2d_forward(&x, 2, 2).unwrap();
        let g = maxpool2d_backward(&Tensor::full(&[1, 1, 1, 1], 3.0f32), &idx).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_index_rejected() {
        let idx = PoolIndex {
            input_shape: vec![1, 1, 2, 2],
            argmax: vec![9],
        };
        assert!(matches!(
            maxpool2d_backward(&Tensor::<f32>::zeros(&[1, 1, 1, 1]), &idx),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }
}
