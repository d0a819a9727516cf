//! Supervised SGD (Nesterov, weight decay, step schedule, early stopping on
//! validation accuracy) on a small synthetic image set.
//!
//!     cargo run --release --example finetune_toy

use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::Splits;
use hebb_cbir::network::{Network, NetworkConfig};
use hebb_cbir::trainer::{classify_accuracy, finetune, SgdConfig};
use hebb_cbir::Rng;

fn main() -> hebb_cbir::Result<()> {
    let spec = |per_class, seed| SyntheticSpec {
        classes: 4,
        per_class,
        shape: [3, 16, 16],
        seed,
        ..Default::default()
    };
    let splits = Splits::prepare(&generate(&spec(60, 1)), generate(&spec(15, 2)), 0)?;
    let cfg = NetworkConfig::parse(
        "conv(8,3,1,1) relu maxpool(2,2) | conv(12,3,1,1) relu maxpool(2,2) | flatten dropout(0.5) dense(4)",
        [3, 16, 16],
    )?;
    let net: Network<f32> = Network::build(cfg, &mut Rng::new(1))?;
    let sgd = SgdConfig {
        lr0: 0.02,
        batch_size: 16,
        ..SgdConfig::cifar10()
    };
    let (best, report) = finetune(net, &splits.train, &splits.validation, &sgd, Rng::new(2))?;
    for e in &report.epochs {
        println!("epoch {:2}: loss {:.4} val acc {:.3} lr {}", e.epoch, e.train_loss, e.val_accuracy, e.lr);
    }
    println!("kept {}, test accuracy {:.3}", report.best_checkpoint_id, classify_accuracy(&best, &splits.test, 64)?);
    Ok(())
}
