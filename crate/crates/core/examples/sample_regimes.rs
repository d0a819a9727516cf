//! Stratified, nested labeled subsets for every label-scarcity regime.
//!
//!     cargo run --release --example sample_regimes

use hebb_cbir::data::{make_regime, Dataset, RegimeSpec, SplitTag, REGIMES};

fn main() -> hebb_cbir::Result<()> {
    // Imbalanced toy split: class c has 100·(c+1) images.
    let labels: Vec<usize> = (0..5).flat_map(|c| std::iter::repeat_n(c, 100 * (c + 1))).collect();
    let n = labels.len();
    let train = Dataset::new([1, 1, 1], vec![0; n], labels, 5, SplitTag::Train)?;

    let mut previous: Option<Vec<usize>> = None;
    for s in REGIMES {
        let split = make_regime(&train, RegimeSpec::new(s, 42)?)?;
        let nested = previous
            .as_ref()
            .is_none_or(|p| p.iter().all(|i| split.labeled.binary_search(i).is_ok()));
        println!(
            "{s:3}%: {:4} labeled, per class {:?}, contains previous regime: {nested}",
            split.labeled.len(),
            split.labeled_per_class
        );
        previous = Some(split.labeled);
    }
    Ok(())
}
