//! Seed-repetition summaries: mean and 95% t-interval half-width.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanInterval {
    pub mean: f64,
    /// Half-width of the 95% interval; `None` for a single value.
    pub half_width: Option<f64>,
    pub n: usize,
}

/// Mean and `t_{0.975, n−1} · s / √n`. Returns `None` for no values.
pub fn mean_interval(values: &[f64]) -> Option<MeanInterval> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        t * (var / n as f64).sqrt()
    });
    Some(MeanInterval { mean, half_width, n })
}
