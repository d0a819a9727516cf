//! Writes a synthetic dataset in the CIFAR-10 binary layout, for trying the
//! CLI without the real data.
//!
//!     cargo run --release --example synthetic_archive -- /tmp/fake-cifar 500
//!     hebb-cbir reproduce --table cifar10 --scale smoke --data-dir /tmp/fake-cifar

use std::path::PathBuf;

use hebb_cbir::data::cifar::write_archive;
use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::CifarKind;

fn main() -> hebb_cbir::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fake-cifar".into()));
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let train = generate(&SyntheticSpec {
        per_class,
        seed: 1,
        ..Default::default()
    });
    let test = generate(&SyntheticSpec {
        per_class: per_class.div_ceil(5),
        seed: 2,
        ..Default::default()
    });
    write_archive(&dir, CifarKind::Cifar10, &train, &test)?;
    println!("wrote {} training and {} test images to {}", train.len(), test.len(), dir.display());
    Ok(())
}
