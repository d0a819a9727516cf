//! Linear HPCA on Gaussian data with a known axis-aligned spectrum
//! (8, 4, 2, 1, 0.5, ...): four neurons converge to the first four axes.
//!
//!     cargo run --release --example hpca_principal_components

use hebb_cbir::hebbian::{hpca_update_dense, Activation, HpcaConfig};
use hebb_cbir::network::{Layer, LayerParams};
use hebb_cbir::tensor::xavier_init;
use hebb_cbir::{Rng, Tensor};

fn main() -> hebb_cbir::Result<()> {
    let (d, n, m) = (16usize, 2000, 4);
    let mut rng = Rng::new(7);
    let data: Vec<f64> = (0..n)
        .flat_map(|_| (0..d).map(|j| (8.0 / 2f64.powi(j as i32)).sqrt() * rng.normal()).collect::<Vec<_>>())
        .collect();
    let x = Tensor::new(vec![n, d], data)?;

    let mut layer = Layer::Dense {
        params: LayerParams {
            weights: xavier_init(&[m, d], &mut rng),
            bias: Tensor::zeros(&[m]),
        },
    };
    let cfg = HpcaConfig {
        eta: 1e-3,
        activation: Activation::Linear,
        ..Default::default()
    };
    for epoch in 1..=50 {
        let mut err = 0.0;
        for i in rng.permutation(n) {
            err += hpca_update_dense(&mut layer, &x.slice_rows(i, 1)?, &cfg)?;
        }
        if epoch % 10 == 0 {
            println!("epoch {epoch:2}: mean representation error {:.4}", err / n as f64);
        }
    }
    let w = &layer.params().expect("dense layer").weights;
    for i in 0..m {
        let row = w.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("neuron {i}: |w| = {norm:.4}, |cos(w, e{i})| = {:.4}", row[i].abs() / norm);
    }
    Ok(())
}
