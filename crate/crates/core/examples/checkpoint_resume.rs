//! Interrupts fine-tuning half way, saves the full optimizer state, resumes
//! from disk and checks the result against an uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume

use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::Splits;
use hebb_cbir::network::{Network, NetworkConfig};
use hebb_cbir::persistence::{load_checkpoint, save_checkpoint, Checkpoint, Phase, Provenance};
use hebb_cbir::trainer::{Finetuner, SgdConfig};
use hebb_cbir::Rng;

fn main() -> hebb_cbir::Result<()> {
    let spec = |per_class, seed| SyntheticSpec {
        classes: 4,
        per_class,
        shape: [3, 8, 8],
        seed,
        ..Default::default()
    };
    let splits = Splits::prepare(&generate(&spec(30, 1)), generate(&spec(5, 2)), 0)?;
    let net = || -> hebb_cbir::Result<Network<f32>> {
        let cfg = NetworkConfig::parse("conv(6,3,1,1) relu maxpool(2,2) | flatten dense(4)", [3, 8, 8])?;
        Network::build(cfg, &mut Rng::new(1))
    };
    let sgd = SgdConfig {
        lr0: 0.02,
        batch_size: 16,
        ..SgdConfig::cifar10()
    };

    let mut straight = Finetuner::new(net()?, sgd.clone(), Rng::new(3))?;
    while !straight.is_done() {
        straight.run_epoch(&splits.train, &splits.validation)?;
    }
    let (a, report_a) = straight.finish();

    let path = std::env::temp_dir().join("hebb-cbir-resume-example.ckpt");
    let mut ft = Finetuner::new(net()?, sgd, Rng::new(3))?;
    for _ in 0..10 {
        ft.run_epoch(&splits.train, &splits.validation)?;
    }
    let provenance = Provenance {
        phase: Phase::Finetuned,
        dataset: "synthetic".into(),
        regime: Some(100),
        layer_k: Some(1),
        epoch: ft.epochs_done(),
        seed: 3,
    };
    save_checkpoint(&path, &Checkpoint::from_finetuner(&ft, provenance))?;
    println!("saved epoch {} state to {}", ft.epochs_done(), path.display());

    let mut ft = load_checkpoint(&path)?.into_finetuner()?;
    while !ft.is_done() {
        ft.run_epoch(&splits.train, &splits.validation)?;
    }
    let (b, report_b) = ft.finish();
    std::fs::remove_file(&path)?;
    println!("reports identical: {}", report_a == report_b);
    println!("networks identical: {}", a.params() == b.params());
    Ok(())
}
