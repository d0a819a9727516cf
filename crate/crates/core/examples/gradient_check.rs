//! Compares back-propagated gradients of a small conv net with central
//! finite differences in f64.
//!
//!     cargo run --release --example gradient_check

use hebb_cbir::network::{Network, NetworkConfig};
use hebb_cbir::tensor::softmax_cross_entropy;
use hebb_cbir::{Rng, Tensor};

fn loss(net: &Network<f64>, x: &Tensor<f64>, y: &[usize]) -> hebb_cbir::Result<f64> {
    Ok(softmax_cross_entropy(&net.infer(x)?, y)?.0)
}

fn main() -> hebb_cbir::Result<()> {
    let cfg = NetworkConfig::parse(
        "conv(3,3,1,1) relu maxpool(2,2) | conv(4,3,1,1) relu maxpool(2,2) | flatten dense(3)",
        [3, 8, 8],
    )?;
    let mut rng = Rng::new(1);
    let net: Network<f64> = Network::build(cfg, &mut rng)?;
    let x = Tensor::new(vec![2, 3, 8, 8], (0..2 * 192).map(|_| rng.normal()).collect())?;
    let y = [1, 2];

    let (logits, trace) = net.forward(&x, false, &mut rng)?;
    let (_, g) = softmax_cross_entropy(&logits, &y)?;
    let grads = net.backward(&trace, &g)?;

    let eps = 1e-6;
    for (li, slot) in grads.0.iter().enumerate() {
        let Some(gp) = slot else { continue };
        let mut worst = 0.0f64;
        for j in 0..gp.weights.len() {
            let probe = |delta: f64| -> hebb_cbir::Result<f64> {
                let mut n2 = net.clone();
                n2.layers_mut()[li].params_mut().expect("trainable").weights.data_mut()[j] += delta;
                loss(&n2, &x, &y)
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let a = gp.weights.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("layer {li} ({}): max relative error {worst:.2e}", net.config().layers[li]);
    }
    Ok(())
}
