use super::{dot, matmul_nt, Real, Tensor};
use crate::error::{Error, Result};

/// `input · weightsᵀ + bias` for `input: [N, D]`, `weights: [M, D]`.
pub fn linear_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, d) = input.dims2("linear_forward")?;
    let (m, wd) = weights.dims2("linear_forward")?;
    if d != wd || bias.shape() != [m] {
        return Err(Error::shape(
            "linear_forward",
            format!(
                "input {:?}, weights {:?}, bias {:?}",
                input.shape(),
                weights.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = matmul_nt(input, weights)?;
    for row in out.data_mut().chunks_exact_mut(m) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    out.check_finite("linear_forward")
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, d) = cached_input.dims2("linear_backward")?;
    let (m, wd) = weights.dims2("linear_backward")?;
    if wd != d || grad_out.shape() != [n, m] {
        return Err(Error::shape(
            "linear_backward",
            format!(
                "grad_out {:?}, input {:?}, weights {:?}",
                grad_out.shape(),
                cached_input.shape(),
                weights.shape()
            ),
        ));
    }
    let gt = grad_out.transpose()?; // [M, N]
    let xt = cached_input.transpose()?; // [D, N]
    let grad_w = matmul_nt(&gt, &xt)?;
    let grad_b: Vec<T> = gt.rows().map(|r| T::of(r.iter().map(|v| v.f64()).sum())).collect();
    let wt = weights.transpose()?; // [D, M]
    let mut grad_in = vec![T::zero(); n * d];
    for (grow, out) in grad_out.rows().zip(grad_in.chunks_exact_mut(d)) {
        for (o, wcol) in out.iter_mut().zip(wt.rows()) {
            *o = T::of(dot(grow, wcol));
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![n, d], grad_in)?,
        weights: grad_w,
        bias: Tensor::new(vec![m], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_passthrough() {
        let x = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 - 2.0);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let w = Tensor::<f32>::full(&[2, 4], 0.7);
        let b = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let y = linear_forward(&Tensor::zeros(&[3, 4]), &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn finite_difference() {
        let mut rng = Rng::new(21);
        let x = Tensor::<f64>::from_fn(&[3, 5], |_| rng.uniform_range(-1.0, 1.0));
        let w = Tensor::<f64>::from_fn(&[4, 5], |_| rng.uniform_range(-1.0, 1.0));
        let b = Tensor::<f64>::from_fn(&[4], |_| rng.uniform_range(-1.0, 1.0));
        let r = Tensor::<f64>::from_fn(&[3, 4], |_| rng.uniform_range(-1.0, 1.0));
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let y = linear_forward(x, w, b).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = linear_backward(&r, &x, &w).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        let mut probe = |t: &Tensor<f64>, grad: &Tensor<f64>, which: usize| {
            for i in 0..t.len() {
                let (mut p, mut m) = (t.clone(), t.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let (lp, lm) = match which {
                    0 => (loss(&p, &w, &b), loss(&m, &w, &b)),
                    1 => (loss(&x, &p, &b), loss(&x, &m, &b)),
                    _ => (loss(&x, &w, &p), loss(&x, &w, &m)),
                };
                let num = (lp - lm) / (2.0 * h);
                let a = grad.data()[i];
                worst = worst.max((a - num).abs() / (a.abs() + num.abs()).max(1e-8));
            }
        };
        probe(&x, &g.input, 0);
        probe(&w, &g.weights, 1);
        probe(&b, &g.bias, 2);
        assert!(worst <= 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 2]);
        assert!(linear_forward(&x, &w, &Tensor::zeros(&[4])).is_err());
    }
}
