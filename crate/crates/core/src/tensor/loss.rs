use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean cross-entropy of `softmax(logits)` against integer labels.
/// Returns the loss and `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, c) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} rows but {} labels", labels.len()),
        ));
    }
    let mut grad = vec![T::zero(); n * c];
    let mut total = 0.0f64;
    for ((row, &label), g) in logits.rows().zip(labels).zip(grad.chunks_exact_mut(c)) {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label].f64() - max);
        for (j, (gv, e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / z;
            let target = if j == label { 1.0 } else { 0.0 };
            *gv = T::of((p - target) / n as f64);
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_cross_entropy",
        });
    }
    Ok((loss, Tensor::new(vec![n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut logits = Tensor::<f32>::zeros(&[1, 5]);
        logits.data_mut()[2] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_match_fd() {
        let mut rng = Rng::new(5);
        let logits = Tensor::<f64>::from_fn(&[4, 6], |_| rng.uniform_range(-2.0, 2.0));
        let labels = [1, 0, 5, 3];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        for row in g.rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-6);
        }
        let h = 1e-4;
        for i in 0..logits.len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (softmax_cross_entropy(&p, &labels).unwrap().0
                - softmax_cross_entropy(&m, &labels).unwrap().0)
                / (2.0 * h);
            let a = g.data()[i];
            assert!((a - num).abs() / (a.abs() + num.abs()).max(1e-8) <= 1e-3);
        }
    }
}
