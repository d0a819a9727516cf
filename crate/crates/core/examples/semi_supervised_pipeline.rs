//! HPCA pre-training on all training images, then fine-tuning on a 10%
//! labeled subset for every cut point, choosing the cut by validation mAP.
//!
//!     cargo run --release --example semi_supervised_pipeline

use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::{RegimeSpec, Splits};
use hebb_cbir::hebbian::HpcaConfig;
use hebb_cbir::network::NetworkConfig;
use hebb_cbir::retrieval::{layer_sweep, Database};
use hebb_cbir::trainer::{PretrainMode, ProtocolConfig, SgdConfig};

fn main() -> hebb_cbir::Result<()> {
    let spec = |per_class, seed| SyntheticSpec {
        classes: 10,
        per_class,
        shape: [3, 16, 16],
        seed,
        ..Default::default()
    };
    let splits = Splits::prepare(&generate(&spec(50, 1)), generate(&spec(10, 2)), 0)?;
    let cfg = ProtocolConfig {
        network: NetworkConfig::parse(
            "conv(8,3,1,1) relu maxpool(2,2) | conv(12,3,1,1) relu maxpool(2,2) | flatten dense(32) relu | dense(10)",
            [3, 16, 16],
        )?,
        hpca: HpcaConfig {
            epochs: 3,
            ..Default::default()
        },
        sgd: SgdConfig {
            lr0: 0.01,
            epochs: 8,
            batch_size: 16,
            ..SgdConfig::cifar10()
        },
        pretrain_limit: None,
    };
    for mode in [PretrainMode::None, PretrainMode::Hpca] {
        let out = layer_sweep::<f32>(
            &splits.train,
            &splits.validation,
            &splits.test,
            RegimeSpec::new(10, 0)?,
            mode,
            &cfg,
            Database::TrainValidation,
            0,
        )?;
        for l in &out.layers {
            println!("{:>4} k={}: validation mAP {:.4}", mode.label(), l.layer_k, l.validation_map);
        }
        println!("{:>4} selected k={} test mAP {:.4}", mode.label(), out.best_layer_k, out.test.map);
    }
    Ok(())
}
