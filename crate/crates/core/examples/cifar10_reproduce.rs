//! Regime × pre-training grid on CIFAR-10 at a reduced budget, printed as a
//! results table. Defaults to a synthetic stand-in when no archive is given.
//!
//!     cargo run --release --example cifar10_reproduce -- /path/to/cifar-10-batches-bin

use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::{load_cifar10, Dataset, RegimeSpec, Splits, SplitTag};
use hebb_cbir::hebbian::HpcaConfig;
use hebb_cbir::network::NetworkConfig;
use hebb_cbir::retrieval::{format_table, layer_sweep, Database, SummaryRow};
use hebb_cbir::stats::mean_interval;
use hebb_cbir::trainer::{PretrainMode, ProtocolConfig, SgdConfig};

fn prefix(ds: &Dataset, n: usize, tag: SplitTag) -> hebb_cbir::Result<Dataset> {
    ds.select(&(0..n.min(ds.len())).collect::<Vec<_>>(), tag)
}

fn main() -> hebb_cbir::Result<()> {
    let (train, test) = match std::env::args().nth(1) {
        Some(dir) => load_cifar10(dir.as_ref())?,
        None => (
            generate(&SyntheticSpec { per_class: 100, seed: 1, ..Default::default() }),
            generate(&SyntheticSpec { per_class: 20, seed: 2, ..Default::default() }),
        ),
    };
    let splits = Splits::prepare(&prefix(&train, 500, SplitTag::Train)?, prefix(&test, 100, SplitTag::Test)?, 0)?;
    let cfg = ProtocolConfig {
        network: NetworkConfig::small_cifar(10),
        hpca: HpcaConfig {
            epochs: 1,
            ..Default::default()
        },
        sgd: SgdConfig {
            epochs: 2,
            ..SgdConfig::cifar10()
        },
        pretrain_limit: None,
    };
    let mut rows = Vec::new();
    for regime in [10, 100] {
        for mode in [PretrainMode::None, PretrainMode::Hpca] {
            let mut maps = Vec::new();
            let mut layers = Vec::new();
            for seed in 0..2 {
                let spec = RegimeSpec::new(regime, seed)?;
                let out = layer_sweep::<f32>(
                    &splits.train,
                    &splits.validation,
                    &splits.test,
                    spec,
                    mode,
                    &cfg,
                    Database::TrainValidation,
                    seed,
                )?;
                maps.push(out.test.map);
                layers.push(out.best_layer_k);
            }
            rows.push(SummaryRow {
                regime,
                mode,
                map: mean_interval(&maps).expect("two seeds"),
                layers,
            });
        }
    }
    print!("{}", format_table(&rows));
    Ok(())
}
